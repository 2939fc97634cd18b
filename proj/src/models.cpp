#include "pifem/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "pifem/rng.hpp"

namespace pifem {

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw std::invalid_argument("unknown activation '" + s + "' (expected relu|tanh)");
}

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

long ArchSpec::parameter_count() const {
    long n = 0;
    for (const auto& l : linears) n += static_cast<long>(l.in) * l.out + l.out;
    return n;
}

ArchSpec piecn_arch(int in_features, int width) {
    return ArchSpec{{{"ec1.l1", 2 * in_features, width},
                     {"ec1.l2", width, width},
                     {"ec1.l3", width, width},
                     {"ec2.l1", 2 * width, width},
                     {"ec2.l2", width, width},
                     {"ec2.l3", width, 1}}};
}

ArchSpec pinn_arch(int in_features, int width) {
    return ArchSpec{{{"fc1", in_features, width},
                     {"fc2", width, width},
                     {"fc3", width, width},
                     {"fc4", width, width},
                     {"fc5", width, 1}}};
}

ParamSet ParamSet::glorot(const ArchSpec& arch, uint64_t seed) {
    ParamSet p;
    p.seed_ = seed;
    Rng rng(seed);
    for (const auto& l : arch.linears) {
        if (l.in <= 0 || l.out <= 0)
            throw std::invalid_argument("layer '" + l.name + "' has zero-width dimension");
        const double bound = std::sqrt(6.0 / (l.in + l.out));
        Mat w(l.in, l.out);
        for (int c = 0; c < l.out; ++c)
            for (int r = 0; r < l.in; ++r) w(r, c) = rng.uniform(-bound, bound);
        p.tensors_.emplace_back(l.name + ".w", std::move(w));
        p.tensors_.emplace_back(l.name + ".b", Mat::Zero(1, l.out));
    }
    return p;
}

const Mat& ParamSet::value(const std::string& name) const {
    for (const auto& [n, v] : tensors_)
        if (n == name) return v;
    throw std::out_of_range("no parameter tensor named '" + name + "'");
}

long ParamSet::parameter_count() const {
    long n = 0;
    for (const auto& [name, v] : tensors_) n += static_cast<long>(v.size());
    return n;
}

void ParamSet::save(const std::string& path) const {
    nlohmann::json j;
    j["seed"] = seed_;
    j["tensors"] = nlohmann::json::array();
    for (const auto& [name, v] : tensors_) {
        std::vector<double> flat(v.data(), v.data() + v.size());
        j["tensors"].push_back({{"name", name},
                                {"rows", static_cast<int>(v.rows())},
                                {"cols", static_cast<int>(v.cols())},
                                {"values", flat}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open checkpoint '" + path + "' for writing");
    out << j.dump() << '\n';
    if (!out) throw std::runtime_error("write to checkpoint '" + path + "' failed");
}

ParamSet ParamSet::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
        ParamSet p;
        p.seed_ = j.at("seed").get<uint64_t>();
        for (const auto& t : j.at("tensors")) {
            const int rows = t.at("rows").get<int>();
            const int cols = t.at("cols").get<int>();
            const auto flat = t.at("values").get<std::vector<double>>();
            if (static_cast<long>(flat.size()) != static_cast<long>(rows) * cols)
                throw std::runtime_error("tensor '" + t.at("name").get<std::string>() +
                                         "' value count does not match its shape");
            Mat v(rows, cols);
            std::copy(flat.begin(), flat.end(), v.data());
            p.tensors_.emplace_back(t.at("name").get<std::string>(), std::move(v));
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint '" + path + "': " + e.what());
    }
}

GraphIndex GraphIndex::from_edges(const std::vector<std::array<int, 2>>& directed_edges, int n_nodes) {
    std::vector<std::array<int, 2>> edges = directed_edges;
    std::sort(edges.begin(), edges.end(), [](const auto& a, const auto& b) {
        return a[1] != b[1] ? a[1] < b[1] : a[0] < b[0];
    });
    GraphIndex g;
    g.n_nodes = n_nodes;
    g.source.reserve(edges.size());
    g.target.reserve(edges.size());
    for (const auto& e : edges) {
        if (e[0] < 0 || e[0] >= n_nodes || e[1] < 0 || e[1] >= n_nodes)
            throw GraphError("edge (" + std::to_string(e[0]) + "," + std::to_string(e[1]) +
                             ") outside node range");
        g.source.push_back(e[0]);
        g.target.push_back(e[1]);
    }
    // Aggregation needs at least one incoming edge everywhere.
    std::vector<char> has_in(n_nodes, 0);
    for (int t : g.target) has_in[t] = 1;
    for (int i = 0; i < n_nodes; ++i)
        if (!has_in[i]) throw GraphError("node " + std::to_string(i) + " has no incoming edge");
    return g;
}

Mat node_features(const Mesh& mesh) {
    std::vector<double> bc_value, bc_mask;
    mesh.dirichlet_field(bc_value, bc_mask);
    Mat x(mesh.node_count(), 5);
    for (int i = 0; i < mesh.node_count(); ++i) {
        x(i, 0) = mesh.nodes[i][0];
        x(i, 1) = mesh.nodes[i][1];
        x(i, 2) = mesh.nodes[i][2];
        x(i, 3) = bc_value[i];
        x(i, 4) = bc_mask[i];
    }
    return x;
}

std::vector<Var> param_leaves(Tape& tape, const ParamSet& params) {
    std::vector<Var> leaves;
    leaves.reserve(params.tensor_count());
    for (int i = 0; i < params.tensor_count(); ++i) leaves.push_back(tape.leaf(params.value(i)));
    return leaves;
}

Var edgeconv_layer(Tape& tape, Var x, const GraphIndex& graph, const std::vector<Var>& mlp,
                   Aggregation agg) {
    if (mlp.size() != 6) throw GraphError("edgeconv_layer: expected 6 parameter leaves (w,b x3)");
    const Var center = tape.gather_rows(x, graph.target);
    const Var neighbor = tape.gather_rows(x, graph.source);
    const Var message_in = tape.concat_cols(center, tape.sub(neighbor, center));

    Var h = tape.relu(tape.add_rowvec(tape.matmul(message_in, mlp[0]), mlp[1]));
    h = tape.relu(tape.add_rowvec(tape.matmul(h, mlp[2]), mlp[3]));
    const Var message = tape.add_rowvec(tape.matmul(h, mlp[4]), mlp[5]);

    return agg == Aggregation::max ? tape.segment_max(message, graph.target, graph.n_nodes)
                                   : tape.segment_mean(message, graph.target, graph.n_nodes);
}

Var piecn_forward(Tape& tape, const GraphIndex& graph, Var features, const std::vector<Var>& leaves,
                  Aggregation agg) {
    if (leaves.size() != 12) throw GraphError("piecn_forward: expected 12 parameter leaves");
    if (tape.rows(features) != graph.n_nodes)
        throw GraphError("piecn_forward: feature rows != graph nodes");
    const std::vector<Var> ec1(leaves.begin(), leaves.begin() + 6);
    const std::vector<Var> ec2(leaves.begin() + 6, leaves.end());
    const Var hidden = edgeconv_layer(tape, features, graph, ec1, agg);
    return edgeconv_layer(tape, hidden, graph, ec2, agg);
}

Var pinn_forward(Tape& tape, Var features, const std::vector<Var>& leaves, Activation activation) {
    if (leaves.size() != 10) throw GraphError("pinn_forward: expected 10 parameter leaves");
    const auto act = [&](Var v) { return activation == Activation::relu ? tape.relu(v) : tape.tanh(v); };
    Var h = features;
    for (int layer = 0; layer < 5; ++layer) {
        h = tape.add_rowvec(tape.matmul(h, leaves[2 * layer]), leaves[2 * layer + 1]);
        if (layer < 4) h = act(h);
    }
    return h;
}

}  // namespace pifem
