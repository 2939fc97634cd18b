#include "pifem/fem.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pifem {

namespace {

// Constant gradients of the four barycentric shape functions on one tet,
// plus its volume.
struct TetGeometry {
    double grad[4][3];
    double volume;
};

TetGeometry tet_geometry(const Mesh& mesh, const std::array<int, 4>& tet) {
    const auto& p0 = mesh.nodes[tet[0]];
    const auto& p1 = mesh.nodes[tet[1]];
    const auto& p2 = mesh.nodes[tet[2]];
    const auto& p3 = mesh.nodes[tet[3]];

    const double e[3][3] = {{p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]},
                            {p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]},
                            {p3[0] - p0[0], p3[1] - p0[1], p3[2] - p0[2]}};
    const double det = e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1]) -
                       e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0]) +
                       e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0]);

    TetGeometry g;
    g.volume = det / 6.0;
    // Rows of the inverse edge matrix are grad(lambda_1..3).
    const double inv[3][3] = {
        {(e[1][1] * e[2][2] - e[1][2] * e[2][1]) / det, (e[0][2] * e[2][1] - e[0][1] * e[2][2]) / det,
         (e[0][1] * e[1][2] - e[0][2] * e[1][1]) / det},
        {(e[1][2] * e[2][0] - e[1][0] * e[2][2]) / det, (e[0][0] * e[2][2] - e[0][2] * e[2][0]) / det,
         (e[0][2] * e[1][0] - e[0][0] * e[1][2]) / det},
        {(e[1][0] * e[2][1] - e[1][1] * e[2][0]) / det, (e[0][1] * e[2][0] - e[0][0] * e[2][1]) / det,
         (e[0][0] * e[1][1] - e[0][1] * e[1][0]) / det}};
    // grad(lambda_i) . e_j = delta_ij, so the gradients are the columns of
    // the inverse edge matrix.
    for (int c = 0; c < 3; ++c) {
        g.grad[1][c] = inv[c][0];
        g.grad[2][c] = inv[c][1];
        g.grad[3][c] = inv[c][2];
        g.grad[0][c] = -(g.grad[1][c] + g.grad[2][c] + g.grad[3][c]);
    }
    return g;
}

}  // namespace

SparseMatrix assemble_stiffness(const Mesh& mesh) {
    std::vector<SparseMatrix::Triplet> triplets;
    triplets.reserve(mesh.tets.size() * 16);
    for (const auto& tet : mesh.tets) {
        const TetGeometry g = tet_geometry(mesh, tet);
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) {
                const double k = g.volume * (g.grad[a][0] * g.grad[b][0] + g.grad[a][1] * g.grad[b][1] +
                                             g.grad[a][2] * g.grad[b][2]);
                triplets.push_back({tet[a], tet[b], k});
            }
    }
    return SparseMatrix::from_triplets(mesh.node_count(), mesh.node_count(), std::move(triplets));
}

Vec assemble_lumped_mass(const Mesh& mesh) {
    Vec lumped = Vec::Zero(mesh.node_count());
    for (int e = 0; e < mesh.tet_count(); ++e) {
        const double quarter = tet_volume(mesh, e) / 4.0;
        for (int v : mesh.tets[e]) lumped[v] += quarter;
    }
    return lumped;
}

GradientRecovery assemble_gradient_recovery(const Mesh& mesh) {
    const int n = mesh.node_count();
    Vec patch_volume = Vec::Zero(n);
    for (int e = 0; e < mesh.tet_count(); ++e) {
        const double vol = tet_volume(mesh, e);
        for (int v : mesh.tets[e]) patch_volume[v] += vol;
    }

    std::vector<SparseMatrix::Triplet> tx, ty, tz;
    tx.reserve(mesh.tets.size() * 16);
    ty.reserve(mesh.tets.size() * 16);
    tz.reserve(mesh.tets.size() * 16);
    for (const auto& tet : mesh.tets) {
        const TetGeometry g = tet_geometry(mesh, tet);
        for (int a = 0; a < 4; ++a) {
            const double w = g.volume / patch_volume[tet[a]];
            for (int b = 0; b < 4; ++b) {
                tx.push_back({tet[a], tet[b], w * g.grad[b][0]});
                ty.push_back({tet[a], tet[b], w * g.grad[b][1]});
                tz.push_back({tet[a], tet[b], w * g.grad[b][2]});
            }
        }
    }
    GradientRecovery r;
    r.gx = SparseMatrix::from_triplets(n, n, std::move(tx));
    r.gy = SparseMatrix::from_triplets(n, n, std::move(ty));
    r.gz = SparseMatrix::from_triplets(n, n, std::move(tz));
    return r;
}

ResidualOperator build_residual_operator(const Mesh& mesh, const SparseMatrix& stiffness,
                                         const Vec& lumped_mass) {
    ResidualOperator op;
    op.interior = mesh.interior_nodes();
    if (op.interior.empty()) throw FemError("residual operator: mesh has no interior nodes");

    std::vector<SparseMatrix::Triplet> triplets;
    for (int r = 0; r < static_cast<int>(op.interior.size()); ++r) {
        const int node = op.interior[r];
        const double scale = -1.0 / lumped_mass[node];
        for (int k = stiffness.row_ptr[node]; k < stiffness.row_ptr[node + 1]; ++k)
            triplets.push_back({r, stiffness.col_idx[k], scale * stiffness.values[k]});
    }
    op.matrix = SparseMatrix::from_triplets(static_cast<int>(op.interior.size()), mesh.node_count(),
                                            std::move(triplets));
    return op;
}

CgSolution solve_cg(const SparseMatrix& a, const Vec& b, double tol, int max_iter) {
    if (a.rows != a.cols) throw FemError("solve_cg: matrix must be square");
    if (b.size() != a.rows) throw ShapeError("solve_cg: rhs length mismatch");
    if (!(tol > 0.0)) throw std::invalid_argument("solve_cg: tol must be positive");

    const double norm_b = b.norm();
    CgSolution sol;
    sol.x = Vec::Zero(a.rows);
    if (norm_b == 0.0) return sol;

    Vec inv_diag = Vec::Ones(a.rows);
    for (int r = 0; r < a.rows; ++r)
        for (int k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k)
            if (a.col_idx[k] == r && a.values[k] != 0.0) inv_diag[r] = 1.0 / a.values[k];

    Vec r = b;
    Vec z = inv_diag.cwiseProduct(r);
    Vec p = z;
    double rz = r.dot(z);

    for (int it = 0; it < max_iter; ++it) {
        if (r.norm() <= tol * norm_b) {
            sol.relative_residual = r.norm() / norm_b;
            return sol;
        }
        const Vec ap = a.apply(p);
        const double alpha = rz / p.dot(ap);
        sol.x += alpha * p;
        r -= alpha * ap;
        z = inv_diag.cwiseProduct(r);
        const double rz_next = r.dot(z);
        p = z + (rz_next / rz) * p;
        rz = rz_next;
        sol.iterations = it + 1;
    }
    const double rel = r.norm() / norm_b;
    if (rel <= tol) {
        sol.relative_residual = rel;
        return sol;
    }
    throw SolveError("cg did not converge in " + std::to_string(max_iter) +
                         " iterations (relative residual " + std::to_string(rel) + ")",
                     rel, sol.iterations);
}

Vec reference_solve(const Mesh& mesh, double tol) {
    const int n = mesh.node_count();
    std::vector<double> bc_value, bc_mask;
    mesh.dirichlet_field(bc_value, bc_mask);

    std::vector<int> free_of_node(n, -1);
    std::vector<int> free_nodes;
    for (int i = 0; i < n; ++i)
        if (bc_mask[i] == 0.0) {
            free_of_node[i] = static_cast<int>(free_nodes.size());
            free_nodes.push_back(i);
        }

    Vec u = Vec::Zero(n);
    for (int i = 0; i < n; ++i) u[i] = bc_value[i];
    if (free_nodes.empty()) return u;  // fully prescribed problem

    const SparseMatrix k = assemble_stiffness(mesh);

    // Symmetric elimination: A_ff x_f = -A_fd u_d.
    std::vector<SparseMatrix::Triplet> triplets;
    Vec rhs = Vec::Zero(static_cast<int>(free_nodes.size()));
    for (int f = 0; f < static_cast<int>(free_nodes.size()); ++f) {
        const int row = free_nodes[f];
        for (int idx = k.row_ptr[row]; idx < k.row_ptr[row + 1]; ++idx) {
            const int col = k.col_idx[idx];
            if (free_of_node[col] >= 0)
                triplets.push_back({f, free_of_node[col], k.values[idx]});
            else
                rhs[f] -= k.values[idx] * bc_value[col];
        }
    }
    const SparseMatrix a = SparseMatrix::from_triplets(static_cast<int>(free_nodes.size()),
                                                       static_cast<int>(free_nodes.size()),
                                                       std::move(triplets));
    const CgSolution sol = solve_cg(a, rhs, tol, 10 * a.rows + 100);
    for (int f = 0; f < static_cast<int>(free_nodes.size()); ++f) u[free_nodes[f]] = sol.x[f];
    return u;
}

Vec recovered_laplacian(const GradientRecovery& recovery, const Vec& u) {
    return recovery.gx.apply(recovery.gx.apply(u)) + recovery.gy.apply(recovery.gy.apply(u)) +
           recovery.gz.apply(recovery.gz.apply(u));
}

}  // namespace pifem
