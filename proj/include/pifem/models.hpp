#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pifem/mesh.hpp"
#include "pifem/tape.hpp"

namespace pifem {

enum class Activation { relu, tanh };
enum class Aggregation { max, mean };

Activation parse_activation(const std::string& s);
std::string to_string(Activation a);

struct LinearLayerSpec {
    std::string name;
    int in = 0;
    int out = 0;
};

struct ArchSpec {
    std::vector<LinearLayerSpec> linears;
    long parameter_count() const;
};

/// Two EdgeConv layers, each a Linear-ReLU-Linear-ReLU-Linear message MLP of
/// width 128: EdgeConv(in->128) then EdgeConv(128->1).
ArchSpec piecn_arch(int in_features = 5, int width = 128);

/// Pointwise MLP: Linear(in->128), three hidden Linear(128->128),
/// Linear(128->1), activation between all hidden layers.
ArchSpec pinn_arch(int in_features = 5, int width = 128);

/// Named, ordered collection of weight matrices and bias vectors.
/// Weights are Glorot-uniform (+-sqrt(6/(fan_in+fan_out))), biases zero;
/// the draw sequence is fixed, so one seed reproduces identical bytes.
class ParamSet {
public:
    static ParamSet glorot(const ArchSpec& arch, uint64_t seed);

    int tensor_count() const { return static_cast<int>(tensors_.size()); }
    const std::string& name(int i) const { return tensors_[i].first; }
    const Mat& value(int i) const { return tensors_[i].second; }
    Mat& value(int i) { return tensors_[i].second; }
    const Mat& value(const std::string& name) const;
    uint64_t seed() const { return seed_; }
    long parameter_count() const;

    void save(const std::string& path) const;
    static ParamSet load(const std::string& path);

private:
    std::vector<std::pair<std::string, Mat>> tensors_;
    uint64_t seed_ = 0;
};

/// Directed mesh edges regrouped for aggregation: sorted by (target, source)
/// so the target column is a valid sorted segment-id list. Throws GraphError
/// if some node has no incoming edge.
struct GraphIndex {
    std::vector<int> source;  // per edge
    std::vector<int> target;  // per edge, sorted ascending
    int n_nodes = 0;

    static GraphIndex from_edges(const std::vector<std::array<int, 2>>& directed_edges, int n_nodes);
};

/// Per-node input features, N x 5: (x, y, z, bc_value, bc_mask).
Mat node_features(const Mesh& mesh);

/// ParamSet tensors as tape leaves, in tensor order.
std::vector<Var> param_leaves(Tape& tape, const ParamSet& params);

/// One EdgeConv layer: per directed edge (j -> i) the message is
/// MLP([X_i || X_j - X_i]); node update aggregates messages over incoming
/// edges. mlp holds {w1,b1,w2,b2,w3,b3} leaves.
Var edgeconv_layer(Tape& tape, Var x, const GraphIndex& graph, const std::vector<Var>& mlp,
                   Aggregation agg = Aggregation::max);

/// EdgeConv(in->128) -> EdgeConv(128->1). leaves must match piecn_arch order.
Var piecn_forward(Tape& tape, const GraphIndex& graph, Var features, const std::vector<Var>& leaves,
                  Aggregation agg = Aggregation::max);

/// Strictly pointwise MLP; row i of the output depends only on row i of the
/// features. leaves must match pinn_arch order.
Var pinn_forward(Tape& tape, Var features, const std::vector<Var>& leaves, Activation activation);

}  // namespace pifem
