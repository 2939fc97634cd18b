#pragma once

#include <stdexcept>
#include <vector>

#include "pifem/mesh.hpp"
#include "pifem/sparse.hpp"

namespace pifem {

struct FemError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Iterative solve failed; carries the residual reached when it gave up.
struct SolveError : FemError {
    SolveError(const std::string& what, double residual, int iterations)
        : FemError(what), final_residual(residual), iterations(iterations) {}
    double final_residual;
    int iterations;
};

/// P1 stiffness matrix: K_ij = sum_e vol_e * grad(lambda_i) . grad(lambda_j).
/// Symmetric, zero row sums (no boundary conditions applied).
SparseMatrix assemble_stiffness(const Mesh& mesh);

/// Lumped mass diagonal: (M_L)_i = sum over tets containing i of vol/4.
Vec assemble_lumped_mass(const Mesh& mesh);

/// Volume-weighted recovery of the piecewise-constant P1 gradient to nodes,
/// one N x N operator per coordinate. Exact on affine fields.
struct GradientRecovery {
    SparseMatrix gx, gy, gz;
};
GradientRecovery assemble_gradient_recovery(const Mesh& mesh);

/// Spatial residual operator for the Laplace equation: row i (an interior
/// node) is -(K row i)/(M_L)_i, i.e. a pointwise approximation of +laplacian.
/// Boundary rows are dropped; constant fields map to zero.
struct ResidualOperator {
    SparseMatrix matrix;        // interior-count x N
    std::vector<int> interior;  // row r of matrix corresponds to node interior[r]
};
ResidualOperator build_residual_operator(const Mesh& mesh, const SparseMatrix& stiffness,
                                         const Vec& lumped_mass);

struct CgSolution {
    Vec x;
    int iterations = 0;
    double relative_residual = 0.0;
};

/// Jacobi-preconditioned conjugate gradients for SPD systems. Terminates when
/// ||Ax-b|| <= tol*||b||; throws SolveError if max_iter is exhausted.
CgSolution solve_cg(const SparseMatrix& a, const Vec& b, double tol, int max_iter);

/// Solves laplacian(u) = 0 with the mesh's Dirichlet patches eliminated
/// symmetrically. The returned full-length vector carries the prescribed
/// values exactly on Dirichlet nodes.
Vec reference_solve(const Mesh& mesh, double tol);

/// sum_c G_c(G_c u): the composed-recovery laplacian. Kept as the alternative
/// residual; the canonical one is ResidualOperator.
Vec recovered_laplacian(const GradientRecovery& recovery, const Vec& u);

}  // namespace pifem
