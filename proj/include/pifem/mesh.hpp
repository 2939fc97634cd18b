#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace pifem {

struct MeshError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Load-time parse/validation failures (bad file, bad index, bad volume).
struct MeshParseError : MeshError {
    using MeshError::MeshError;
};
// A deformation or construction produced a non-positive tet volume.
struct DegenerateMeshError : MeshError {
    using MeshError::MeshError;
};
// A triangular face is shared by more than two tets.
struct NonManifoldError : MeshError {
    using MeshError::MeshError;
};

struct DirichletPatch {
    std::vector<int> nodes;  // sorted node indices, subset of the boundary
    double value = 0.0;
};

/// Tetrahedral mesh over a 3-D domain, doubling as the graph substrate for
/// the learning side. Immutable after construction; functions below return
/// new meshes instead of mutating.
///
/// Invariants (enforced by the constructors/loaders in this header):
///   - all tet indices in range, the four indices of a tet distinct
///   - every tet positively oriented (signed volume > 0)
///   - Dirichlet node sets are pairwise-disjoint subsets of boundary_nodes
///   - the node-edge graph induced by the tets is connected
struct Mesh {
    std::vector<std::array<double, 3>> nodes;
    std::vector<std::array<int, 4>> tets;
    std::vector<int> boundary_nodes;  // sorted
    std::vector<DirichletPatch> dirichlet;

    int node_count() const { return static_cast<int>(nodes.size()); }
    int tet_count() const { return static_cast<int>(tets.size()); }

    bool is_boundary(int node) const;
    /// Sorted complement of boundary_nodes.
    std::vector<int> interior_nodes() const;
    /// Sorted union of all Dirichlet patch nodes.
    std::vector<int> dirichlet_nodes() const;
    /// Prescribed value per node (0 for non-Dirichlet nodes), plus 0/1 mask.
    void dirichlet_field(std::vector<double>& value, std::vector<double>& mask) const;
};

/// Structured mesh of the unit cube [0,1]^3: (nx+1)(ny+1)(nz+1) nodes, each
/// hexahedral cell split into 6 tets (Kuhn subdivision, uniform orientation).
/// Dirichlet patches: {x=0 -> 0.0} and {x=1 -> 1.0}.
Mesh generate_box_mesh(int nx, int ny, int nz);

/// Smooth deformation of the box: x'=x, y'=y + a*sin(2*pi*x)*z, z'=z*(1+a*x).
/// Connectivity, boundary classification and Dirichlet patches are carried
/// over unchanged. Throws DegenerateMeshError if any tet volume becomes
/// non-positive. Intended amplitude range is [0, 0.4].
Mesh apply_deformation(const Mesh& mesh, double amplitude);

Mesh load_mesh(const std::string& path);
void save_mesh(const Mesh& mesh, const std::string& path);

/// Directed edge list of the mesh graph: every unordered node pair sharing a
/// tet edge appears in both directions, no self-loops, sorted by
/// (source, target).
std::vector<std::array<int, 2>> extract_edges(const Mesh& mesh);

/// Boundary nodes: vertices of faces that belong to exactly one tet.
/// Throws NonManifoldError if a face appears in more than two tets.
std::vector<int> classify_boundary(const Mesh& mesh);

std::vector<double> element_volumes(const Mesh& mesh);

double tet_volume(const Mesh& mesh, int tet);

/// Full invariant check; throws MeshParseError/NonManifoldError on violation.
void validate_mesh(const Mesh& mesh);

}  // namespace pifem
