#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pifem/fem.hpp"
#include "pifem/mesh.hpp"
#include "pifem/models.hpp"
#include "pifem/tape.hpp"

namespace pifem {

enum class ModelKind { pinn, piecn };
enum class LossKind { autodiff_residual, mae, mae_plus_spatial };

struct Variant {
    ModelKind model = ModelKind::piecn;
    LossKind loss = LossKind::mae;
};

std::string variant_name(const Variant& v);          // e.g. "piecn/mae_plus_spatial"
Variant parse_variant(const std::string& name);
/// The six ablation variants in reporting order (autodiff pair, mae pair,
/// spatial+mae pair; pinn before piecn within each pair).
std::vector<Variant> table_variants();

struct TrainConfig {
    Variant variant;
    int epochs = 2000;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double weight_mae = 1.0;
    double weight_spatial = 0.01;
    double weight_autodiff = 1.0;
    double weight_boundary = 1.0;
    uint64_t seed = 0;
    Activation activation = Activation::relu;

    void validate() const;  // weights >= 0, at least one active term
};

/// The three reported columns for one model. autodiff_residual is only
/// defined for variants trained on autodiff residuals.
struct Metrics {
    double spatial_residual = 0.0;
    double mae = 0.0;
    std::optional<double> autodiff_residual;
};

/// Everything derived from one mesh that training and evaluation share:
/// graph index, input features, reference solution, assembled operators.
/// Immutable after construction and safe to share across training threads.
struct ProblemSetup {
    Mesh mesh;
    GraphIndex graph;
    Mat features;  // N x 5
    Vec target;
    SparseMatrix stiffness;
    Vec lumped_mass;
    ResidualOperator residual;
    LinearOperator residual_op;  // tape-facing wrapper of residual.matrix
    std::vector<int> dirichlet_idx;
    Vec dirichlet_values;

    bool has_residual() const { return residual.matrix.rows > 0; }
};

ProblemSetup make_setup(const Mesh& mesh, double solver_tol = 1e-10);

struct LossTerms {
    Var total;
    double mae_term = 0.0;       // raw (unweighted) term values
    double spatial_term = 0.0;
    double autodiff_term = 0.0;
    double boundary_term = 0.0;
};

/// Assembles the loss of the configured variant on the tape:
///   mae:              w_mae * mean |u - u*| over all nodes
///   mae_plus_spatial: adds w_spatial * mean((R u)^2) over interior nodes,
///                     with R coupled in through external_linear
///   autodiff_residual: w_autodiff * mean((input_laplacian u)^2)
///                      + w_boundary * mean |u - bc| over Dirichlet nodes
LossTerms compute_loss(Tape& tape, const TrainConfig& config, const ProblemSetup& setup,
                       Var features_leaf, Var prediction);

struct AdamState {
    std::vector<Mat> first_moment;
    std::vector<Mat> second_moment;
    long step = 0;
};

/// One standard Adam update with bias correction; no weight decay.
void adam_step(ParamSet& params, const std::vector<Mat>& grads, AdamState& state,
               const TrainConfig& config);

struct TrainingError : std::runtime_error {
    TrainingError(const std::string& what, int epoch) : std::runtime_error(what), epoch(epoch) {}
    int epoch;
};

struct EpochRecord {
    int epoch;
    double total, mae_term, spatial_term, autodiff_term, boundary_term;
};

struct TrainResult {
    ParamSet params;
    std::vector<EpochRecord> history;
};

/// Full-batch training of the configured variant for config.epochs epochs.
/// Deterministic per seed; aborts with TrainingError on a non-finite loss.
TrainResult train(const ProblemSetup& setup, const TrainConfig& config);

/// The three reported columns for a trained (or freshly initialized) model.
Metrics evaluate(const ParamSet& params, const ProblemSetup& setup, const Variant& variant,
                 Activation activation);

/// The reference solution evaluated as a pseudo-model (last report row).
Metrics evaluate_target(const ProblemSetup& setup);

/// Demonstration of the broken differentiation path when a spatially sampled
/// field enters a model as an independent input: M(phi, x) = alpha*phi(x) +
/// beta*x + gamma with phi = sin, sampled at `samples` points of [0, 2*pi].
/// The tape derivative of M w.r.t. x misses alpha*cos entirely; a 1-D
/// element-wise gradient recovery over the same samples does not.
struct FlawDemoReport {
    double alpha = 2.0, beta = 3.0, gamma = 1.0;
    Vec x;
    Vec tape_derivative;  // identically beta
    Vec analytic;         // alpha*cos(x) + beta
    Vec fe_chain;         // recovered derivative of the sampled field
    double max_dev_tape_from_beta = 0.0;   // exact zero
    double max_dev_analytic_vs_tape = 0.0; // |alpha| * max|cos|
    double fe_dev = 0.0;                   // max |fe_chain - analytic|
    double fe_dev_refined = 0.0;           // same with 2x samples
    int samples = 0;
};
FlawDemoReport demo_autodiff_flaw(int samples = 100);

}  // namespace pifem
