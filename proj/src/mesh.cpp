#include "pifem/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pifem {

namespace {

double signed_volume(const std::array<double, 3>& p0, const std::array<double, 3>& p1,
                     const std::array<double, 3>& p2, const std::array<double, 3>& p3) {
    const double a[3] = {p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
    const double b[3] = {p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]};
    const double c[3] = {p3[0] - p0[0], p3[1] - p0[1], p3[2] - p0[2]};
    const double det = a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) +
                       a[2] * (b[0] * c[1] - b[1] * c[0]);
    return det / 6.0;
}

double signed_tet_volume(const Mesh& m, const std::array<int, 4>& t) {
    return signed_volume(m.nodes[t[0]], m.nodes[t[1]], m.nodes[t[2]], m.nodes[t[3]]);
}

// Union-find connectivity over tet vertices.
struct DisjointSet {
    std::vector<int> parent;
    explicit DisjointSet(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

void check_connected(const Mesh& m) {
    if (m.node_count() == 0) throw MeshParseError("mesh has no nodes");
    DisjointSet ds(m.node_count());
    for (const auto& t : m.tets)
        for (int v = 1; v < 4; ++v) ds.unite(t[0], t[v]);
    const int root = ds.find(0);
    for (int i = 1; i < m.node_count(); ++i)
        if (ds.find(i) != root)
            throw MeshParseError("mesh graph is disconnected (node " + std::to_string(i) +
                                 " unreachable from node 0)");
}

}  // namespace

bool Mesh::is_boundary(int node) const {
    return std::binary_search(boundary_nodes.begin(), boundary_nodes.end(), node);
}

std::vector<int> Mesh::interior_nodes() const {
    std::vector<int> interior;
    interior.reserve(nodes.size() - boundary_nodes.size());
    for (int i = 0; i < node_count(); ++i)
        if (!is_boundary(i)) interior.push_back(i);
    return interior;
}

std::vector<int> Mesh::dirichlet_nodes() const {
    std::vector<int> all;
    for (const auto& patch : dirichlet) all.insert(all.end(), patch.nodes.begin(), patch.nodes.end());
    std::sort(all.begin(), all.end());
    return all;
}

void Mesh::dirichlet_field(std::vector<double>& value, std::vector<double>& mask) const {
    value.assign(nodes.size(), 0.0);
    mask.assign(nodes.size(), 0.0);
    for (const auto& patch : dirichlet)
        for (int n : patch.nodes) {
            value[n] = patch.value;
            mask[n] = 1.0;
        }
}

double tet_volume(const Mesh& mesh, int tet) {
    return std::abs(signed_tet_volume(mesh, mesh.tets[tet]));
}

std::vector<double> element_volumes(const Mesh& mesh) {
    std::vector<double> vols(mesh.tets.size());
    for (int e = 0; e < mesh.tet_count(); ++e) vols[e] = tet_volume(mesh, e);
    return vols;
}

std::vector<int> classify_boundary(const Mesh& mesh) {
    std::map<std::array<int, 3>, int> face_count;
    constexpr int face_corners[4][3] = {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}};
    for (const auto& t : mesh.tets) {
        for (const auto& fc : face_corners) {
            std::array<int, 3> face = {t[fc[0]], t[fc[1]], t[fc[2]]};
            std::sort(face.begin(), face.end());
            ++face_count[face];
        }
    }
    std::set<int> nodes;
    for (const auto& [face, count] : face_count) {
        if (count > 2)
            throw NonManifoldError("face (" + std::to_string(face[0]) + "," + std::to_string(face[1]) +
                                   "," + std::to_string(face[2]) + ") belongs to " +
                                   std::to_string(count) + " tets");
        if (count == 1) nodes.insert(face.begin(), face.end());
    }
    return {nodes.begin(), nodes.end()};
}

std::vector<std::array<int, 2>> extract_edges(const Mesh& mesh) {
    std::set<std::array<int, 2>> edges;
    constexpr int pairs[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
    for (const auto& t : mesh.tets) {
        for (const auto& p : pairs) {
            const int a = t[p[0]], b = t[p[1]];
            edges.insert({a, b});
            edges.insert({b, a});
        }
    }
    return {edges.begin(), edges.end()};
}

Mesh generate_box_mesh(int nx, int ny, int nz) {
    if (nx < 1 || ny < 1 || nz < 1)
        throw std::invalid_argument("generate_box_mesh: cell counts must be >= 1");

    Mesh m;
    const auto node_id = [&](int i, int j, int k) { return i + (nx + 1) * (j + (ny + 1) * k); };
    m.nodes.reserve(static_cast<size_t>(nx + 1) * (ny + 1) * (nz + 1));
    for (int k = 0; k <= nz; ++k)
        for (int j = 0; j <= ny; ++j)
            for (int i = 0; i <= nx; ++i)
                m.nodes.push_back({double(i) / nx, double(j) / ny, double(k) / nz});

    // Kuhn subdivision: one tet per permutation of the axes, each walking the
    // cell's main diagonal. Uniform across cells, so assembly is reproducible.
    constexpr int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    m.tets.reserve(static_cast<size_t>(nx) * ny * nz * 6);
    for (int k = 0; k < nz; ++k) {
        for (int j = 0; j < ny; ++j) {
            for (int i = 0; i < nx; ++i) {
                for (const auto& perm : perms) {
                    int off[3] = {0, 0, 0};
                    std::array<int, 4> tet;
                    tet[0] = node_id(i, j, k);
                    for (int step = 0; step < 3; ++step) {
                        off[perm[step]] = 1;
                        tet[step + 1] = node_id(i + off[0], j + off[1], k + off[2]);
                    }
                    if (signed_volume(m.nodes[tet[0]], m.nodes[tet[1]], m.nodes[tet[2]],
                                      m.nodes[tet[3]]) < 0.0)
                        std::swap(tet[2], tet[3]);
                    m.tets.push_back(tet);
                }
            }
        }
    }

    m.boundary_nodes = classify_boundary(m);

    DirichletPatch lo, hi;
    lo.value = 0.0;
    hi.value = 1.0;
    for (int k = 0; k <= nz; ++k)
        for (int j = 0; j <= ny; ++j) {
            lo.nodes.push_back(node_id(0, j, k));
            hi.nodes.push_back(node_id(nx, j, k));
        }
    std::sort(lo.nodes.begin(), lo.nodes.end());
    std::sort(hi.nodes.begin(), hi.nodes.end());
    m.dirichlet = {lo, hi};
    return m;
}

Mesh apply_deformation(const Mesh& mesh, double amplitude) {
    // The map keeps Kuhn box tets positive only on a bounded amplitude range;
    // outside it the result is not a usable geometry, so refuse it outright.
    if (!(amplitude >= 0.0 && amplitude <= 0.4))
        throw DegenerateMeshError("deformation amplitude " + std::to_string(amplitude) +
                                  " outside the supported range [0, 0.4]: mesh would not be trusted "
                                  "to stay non-degenerate");
    Mesh out = mesh;
    constexpr double two_pi = 6.283185307179586476925286766559;
    for (auto& p : out.nodes) {
        const double x = p[0], y = p[1], z = p[2];
        p[1] = y + amplitude * std::sin(two_pi * x) * z;
        p[2] = z * (1.0 + amplitude * x);
    }
    for (int e = 0; e < out.tet_count(); ++e) {
        const double v = signed_tet_volume(out, out.tets[e]);
        if (!(v > 0.0))
            throw DegenerateMeshError("deformation with amplitude " + std::to_string(amplitude) +
                                      " produced non-positive volume in tet " + std::to_string(e));
    }
    return out;
}

void validate_mesh(const Mesh& mesh) {
    const int n = mesh.node_count();
    if (n == 0) throw MeshParseError("mesh has no nodes");
    for (int e = 0; e < mesh.tet_count(); ++e) {
        const auto& t = mesh.tets[e];
        for (int v : t)
            if (v < 0 || v >= n)
                throw MeshParseError("tet " + std::to_string(e) + " references node index " +
                                     std::to_string(v) + " out of range [0," + std::to_string(n) + ")");
        for (int a = 0; a < 4; ++a)
            for (int b = a + 1; b < 4; ++b)
                if (t[a] == t[b])
                    throw MeshParseError("tet " + std::to_string(e) + " has repeated node index " +
                                         std::to_string(t[a]));
        const double v = signed_tet_volume(mesh, t);
        if (!(v > 0.0))
            throw MeshParseError("tet " + std::to_string(e) + " has non-positive signed volume " +
                                 std::to_string(v));
    }
    check_connected(mesh);

    const std::vector<int> boundary = classify_boundary(mesh);
    if (boundary != mesh.boundary_nodes)
        throw MeshParseError("stored boundary classification disagrees with face-count classification");

    std::set<int> seen;
    for (size_t p = 0; p < mesh.dirichlet.size(); ++p) {
        const auto& patch = mesh.dirichlet[p];
        if (!std::isfinite(patch.value))
            throw MeshParseError("dirichlet patch " + std::to_string(p) + " has non-finite value");
        for (int node : patch.nodes) {
            if (!std::binary_search(boundary.begin(), boundary.end(), node))
                throw MeshParseError("dirichlet patch " + std::to_string(p) + " contains non-boundary node " +
                                     std::to_string(node));
            if (!seen.insert(node).second)
                throw MeshParseError("node " + std::to_string(node) + " appears in two dirichlet patches");
        }
    }
}

void save_mesh(const Mesh& mesh, const std::string& path) {
    nlohmann::json j;
    j["nodes"] = nlohmann::json::array();
    for (const auto& p : mesh.nodes) j["nodes"].push_back({p[0], p[1], p[2]});
    j["tets"] = nlohmann::json::array();
    for (const auto& t : mesh.tets) j["tets"].push_back({t[0], t[1], t[2], t[3]});
    j["dirichlet"] = nlohmann::json::array();
    for (const auto& patch : mesh.dirichlet)
        j["dirichlet"].push_back({{"nodes", patch.nodes}, {"value", patch.value}});

    std::ofstream out(path);
    if (!out) throw MeshParseError("cannot open '" + path + "' for writing");
    out << j.dump(1) << '\n';
    if (!out) throw MeshParseError("write to '" + path + "' failed");
}

Mesh load_mesh(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MeshParseError("cannot open mesh file '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw MeshParseError(std::string("mesh file '") + path + "': " + e.what());
    }

    Mesh m;
    try {
        for (const auto& p : j.at("nodes"))
            m.nodes.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
        for (const auto& t : j.at("tets"))
            m.tets.push_back({t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<int>(), t.at(3).get<int>()});
        for (const auto& d : j.value("dirichlet", nlohmann::json::array())) {
            DirichletPatch patch;
            patch.value = d.at("value").get<double>();
            patch.nodes = d.at("nodes").get<std::vector<int>>();
            std::sort(patch.nodes.begin(), patch.nodes.end());
            m.dirichlet.push_back(std::move(patch));
        }
    } catch (const nlohmann::json::exception& e) {
        throw MeshParseError(std::string("mesh file '") + path + "': " + e.what());
    }

    // Index/volume checks must run before face classification can be trusted.
    const int n = m.node_count();
    for (int e = 0; e < m.tet_count(); ++e)
        for (int v : m.tets[e])
            if (v < 0 || v >= n)
                throw MeshParseError("mesh file '" + path + "': tet " + std::to_string(e) +
                                     " references node index " + std::to_string(v) + " out of range [0," +
                                     std::to_string(n) + ")");
    m.boundary_nodes = classify_boundary(m);
    try {
        validate_mesh(m);
    } catch (const MeshError& e) {
        throw MeshParseError("mesh file '" + path + "': " + e.what());
    }
    return m;
}

}  // namespace pifem
