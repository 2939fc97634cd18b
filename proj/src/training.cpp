#include "pifem/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pifem {

namespace {

const char* model_name(ModelKind m) { return m == ModelKind::pinn ? "pinn" : "piecn"; }

const char* loss_name(LossKind l) {
    switch (l) {
        case LossKind::autodiff_residual: return "autodiff_residual";
        case LossKind::mae: return "mae";
        case LossKind::mae_plus_spatial: return "mae_plus_spatial";
    }
    return "?";
}

Var model_forward(Tape& tape, const ProblemSetup& setup, const Variant& variant,
                  Activation activation, Var features, const std::vector<Var>& leaves) {
    return variant.model == ModelKind::piecn
               ? piecn_forward(tape, setup.graph, features, leaves)
               : pinn_forward(tape, features, leaves, activation);
}

}  // namespace

std::string variant_name(const Variant& v) {
    return std::string(model_name(v.model)) + "/" + loss_name(v.loss);
}

Variant parse_variant(const std::string& name) {
    const auto slash = name.find('/');
    if (slash != std::string::npos) {
        const std::string m = name.substr(0, slash), l = name.substr(slash + 1);
        Variant v;
        if (m == "pinn")
            v.model = ModelKind::pinn;
        else if (m == "piecn")
            v.model = ModelKind::piecn;
        else
            throw std::invalid_argument("unknown model '" + m + "' (expected pinn|piecn)");
        if (l == "autodiff_residual")
            v.loss = LossKind::autodiff_residual;
        else if (l == "mae")
            v.loss = LossKind::mae;
        else if (l == "mae_plus_spatial")
            v.loss = LossKind::mae_plus_spatial;
        else
            throw std::invalid_argument("unknown loss '" + l +
                                        "' (expected autodiff_residual|mae|mae_plus_spatial)");
        return v;
    }
    throw std::invalid_argument("variant '" + name + "' must look like model/loss, e.g. piecn/mae");
}

std::vector<Variant> table_variants() {
    return {{ModelKind::pinn, LossKind::autodiff_residual},
            {ModelKind::piecn, LossKind::autodiff_residual},
            {ModelKind::pinn, LossKind::mae},
            {ModelKind::piecn, LossKind::mae},
            {ModelKind::pinn, LossKind::mae_plus_spatial},
            {ModelKind::piecn, LossKind::mae_plus_spatial}};
}

void TrainConfig::validate() const {
    const double ws[4] = {weight_mae, weight_spatial, weight_autodiff, weight_boundary};
    for (double w : ws)
        if (!(w >= 0.0) || !std::isfinite(w))
            throw std::invalid_argument("loss weights must be finite and >= 0");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw std::invalid_argument("adam betas must be in [0,1)");
    if (!(adam_epsilon > 0.0)) throw std::invalid_argument("adam epsilon must be > 0");

    bool active = false;
    switch (variant.loss) {
        case LossKind::mae: active = weight_mae > 0.0; break;
        case LossKind::mae_plus_spatial: active = weight_mae > 0.0 || weight_spatial > 0.0; break;
        case LossKind::autodiff_residual: active = weight_autodiff > 0.0 || weight_boundary > 0.0; break;
    }
    if (!active) throw std::invalid_argument("configured variant has no active loss term");
}

ProblemSetup make_setup(const Mesh& mesh, double solver_tol) {
    ProblemSetup s;
    s.mesh = mesh;
    s.graph = GraphIndex::from_edges(extract_edges(mesh), mesh.node_count());
    s.features = node_features(mesh);
    s.target = reference_solve(mesh, solver_tol);
    s.stiffness = assemble_stiffness(mesh);
    s.lumped_mass = assemble_lumped_mass(mesh);
    s.residual = build_residual_operator(mesh, s.stiffness, s.lumped_mass);
    s.residual_op = make_operator(s.residual.matrix, "laplace-residual");
    s.dirichlet_idx = mesh.dirichlet_nodes();
    std::vector<double> bc_value, bc_mask;
    mesh.dirichlet_field(bc_value, bc_mask);
    s.dirichlet_values = Vec::Zero(static_cast<int>(s.dirichlet_idx.size()));
    for (size_t i = 0; i < s.dirichlet_idx.size(); ++i)
        s.dirichlet_values[static_cast<int>(i)] = bc_value[s.dirichlet_idx[i]];
    return s;
}

LossTerms compute_loss(Tape& tape, const TrainConfig& config, const ProblemSetup& setup,
                       Var features_leaf, Var prediction) {
    config.validate();
    LossTerms terms;

    switch (config.variant.loss) {
        case LossKind::mae:
        case LossKind::mae_plus_spatial: {
            const Var target = tape.constant(setup.target);
            const Var mae = tape.mean_reduce(tape.abs(tape.sub(prediction, target)));
            terms.mae_term = tape.value(mae)(0, 0);
            terms.total = tape.scale(mae, config.weight_mae);
            if (config.variant.loss == LossKind::mae_plus_spatial) {
                if (!setup.has_residual())
                    throw FemError("spatial residual term requested but no residual operator assembled");
                const Var r = tape.external_linear(setup.residual_op, prediction);
                const Var spatial = tape.mean_reduce(tape.square(r));
                terms.spatial_term = tape.value(spatial)(0, 0);
                terms.total = tape.add(terms.total, tape.scale(spatial, config.weight_spatial));
            }
            break;
        }
        case LossKind::autodiff_residual: {
            if (setup.dirichlet_idx.empty())
                throw FemError("autodiff_residual variant requires Dirichlet nodes for its boundary term");
            const Var laplacian = input_laplacian(
                tape, [prediction](Tape&, Var) { return prediction; }, features_leaf);
            const Var residual = tape.mean_reduce(tape.square(laplacian));
            terms.autodiff_term = tape.value(residual)(0, 0);

            const Var pred_bc = tape.gather_rows(prediction, setup.dirichlet_idx);
            const Var bc = tape.constant(setup.dirichlet_values);
            const Var boundary = tape.mean_reduce(tape.abs(tape.sub(pred_bc, bc)));
            terms.boundary_term = tape.value(boundary)(0, 0);

            terms.total = tape.add(tape.scale(residual, config.weight_autodiff),
                                   tape.scale(boundary, config.weight_boundary));
            break;
        }
    }
    return terms;
}

void adam_step(ParamSet& params, const std::vector<Mat>& grads, AdamState& state,
               const TrainConfig& config) {
    if (static_cast<int>(grads.size()) != params.tensor_count())
        throw std::invalid_argument("adam_step: gradient count != tensor count");
    if (state.first_moment.empty()) {
        for (int i = 0; i < params.tensor_count(); ++i) {
            state.first_moment.push_back(Mat::Zero(params.value(i).rows(), params.value(i).cols()));
            state.second_moment.push_back(Mat::Zero(params.value(i).rows(), params.value(i).cols()));
        }
    }
    state.step += 1;
    const double b1 = config.adam_beta1, b2 = config.adam_beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (int i = 0; i < params.tensor_count(); ++i) {
        Mat& m = state.first_moment[i];
        Mat& v = state.second_moment[i];
        m = b1 * m + (1.0 - b1) * grads[i];
        v = (b2 * v).array() + (1.0 - b2) * grads[i].array().square();
        params.value(i).array() -=
            config.learning_rate * (m.array() / corr1) / ((v.array() / corr2).sqrt() + config.adam_epsilon);
    }
}

TrainResult train(const ProblemSetup& setup, const TrainConfig& config) {
    config.validate();
    const ArchSpec arch = config.variant.model == ModelKind::piecn ? piecn_arch() : pinn_arch();
    ParamSet params = ParamSet::glorot(arch, config.seed);

    AdamState state;
    std::vector<EpochRecord> history;
    history.reserve(config.epochs);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Tape tape;
        const Var x = tape.leaf(setup.features);
        const std::vector<Var> leaves = param_leaves(tape, params);
        const Var prediction = model_forward(tape, setup, config.variant, config.activation, x, leaves);
        const LossTerms terms = compute_loss(tape, config, setup, x, prediction);
        const double total = tape.value(terms.total)(0, 0);
        if (!std::isfinite(total)) {
            std::ostringstream msg;
            msg << "non-finite loss at epoch " << epoch << " (mae=" << terms.mae_term
                << ", spatial=" << terms.spatial_term << ", autodiff=" << terms.autodiff_term
                << ", boundary=" << terms.boundary_term << ")";
            throw TrainingError(msg.str(), epoch);
        }

        const std::vector<Var> grad_vars = tape.backward(terms.total, leaves);
        std::vector<Mat> grads;
        grads.reserve(grad_vars.size());
        for (Var g : grad_vars) grads.push_back(tape.value(g));
        adam_step(params, grads, state, config);

        history.push_back({epoch, total, terms.mae_term, terms.spatial_term, terms.autodiff_term,
                           terms.boundary_term});
    }
    return {std::move(params), std::move(history)};
}

Metrics evaluate(const ParamSet& params, const ProblemSetup& setup, const Variant& variant,
                 Activation activation) {
    Tape tape;
    const Var x = tape.leaf(setup.features);
    std::vector<Var> leaves;
    leaves.reserve(params.tensor_count());
    for (int i = 0; i < params.tensor_count(); ++i) leaves.push_back(tape.constant(params.value(i)));
    const Var prediction = model_forward(tape, setup, variant, activation, x, leaves);
    const Vec u = tape.value(prediction).col(0);

    Metrics m;
    m.spatial_residual = setup.residual.matrix.apply(u).cwiseAbs().mean();
    m.mae = (u - setup.target).cwiseAbs().mean();

    if (variant.loss == LossKind::autodiff_residual) {
        const Var laplacian =
            input_laplacian(tape, [prediction](Tape&, Var) { return prediction; }, x);
        const Mat& lap = tape.value(laplacian);
        double acc = 0.0;
        for (int node : setup.residual.interior) acc += std::abs(lap(node, 0));
        m.autodiff_residual = acc / static_cast<double>(setup.residual.interior.size());
    }
    return m;
}

Metrics evaluate_target(const ProblemSetup& setup) {
    Metrics m;
    m.spatial_residual = setup.residual.matrix.apply(setup.target).cwiseAbs().mean();
    m.mae = (setup.target - setup.target).cwiseAbs().mean();
    return m;
}

namespace {

// Length-weighted recovery of the segment-wise constant derivative to the
// sample points; the 1-D counterpart of the volume-weighted 3-D recovery.
Vec recover_derivative_1d(const Vec& x, const Vec& field) {
    const int n = static_cast<int>(x.size());
    Vec slope(n - 1);
    for (int i = 0; i + 1 < n; ++i) slope[i] = (field[i + 1] - field[i]) / (x[i + 1] - x[i]);
    Vec out(n);
    out[0] = slope[0];
    out[n - 1] = slope[n - 2];
    for (int i = 1; i + 1 < n; ++i) {
        const double hl = x[i] - x[i - 1], hr = x[i + 1] - x[i];
        out[i] = (slope[i - 1] * hl + slope[i] * hr) / (hl + hr);
    }
    return out;
}

double fe_chain_deviation(int samples, double alpha, double beta, double gamma) {
    constexpr double two_pi = 6.283185307179586476925286766559;
    Vec x(samples), field(samples);
    for (int i = 0; i < samples; ++i) {
        x[i] = two_pi * static_cast<double>(i) / (samples - 1);
        field[i] = alpha * std::sin(x[i]) + beta * x[i] + gamma;
    }
    const Vec recovered = recover_derivative_1d(x, field);
    double dev = 0.0;
    for (int i = 0; i < samples; ++i)
        dev = std::max(dev, std::abs(recovered[i] - (alpha * std::cos(x[i]) + beta)));
    return dev;
}

}  // namespace

FlawDemoReport demo_autodiff_flaw(int samples) {
    if (samples < 3) throw std::invalid_argument("demo_autodiff_flaw: need at least 3 samples");
    FlawDemoReport r;
    r.samples = samples;
    constexpr double two_pi = 6.283185307179586476925286766559;

    Mat x(samples, 1), phi(samples, 1);
    for (int i = 0; i < samples; ++i) {
        x(i, 0) = two_pi * static_cast<double>(i) / (samples - 1);
        phi(i, 0) = std::sin(x(i, 0));
    }

    // The sampled field enters the model as its own leaf: exactly the setup
    // in which the recorded graph has no phi -> x link.
    Tape tape;
    const Var x_leaf = tape.leaf(x);
    const Var phi_leaf = tape.leaf(phi);
    const Var model = tape.add(tape.add(tape.scale(phi_leaf, r.alpha), tape.scale(x_leaf, r.beta)),
                               tape.constant(Mat::Constant(samples, 1, r.gamma)));
    const Var grad = tape.backward(tape.sum_reduce(model), {x_leaf})[0];

    r.x = x.col(0);
    r.tape_derivative = tape.value(grad).col(0);
    r.analytic = Vec(samples);
    for (int i = 0; i < samples; ++i) r.analytic[i] = r.alpha * std::cos(r.x[i]) + r.beta;
    r.fe_chain = recover_derivative_1d(r.x, tape.value(model).col(0));

    for (int i = 0; i < samples; ++i) {
        r.max_dev_tape_from_beta = std::max(r.max_dev_tape_from_beta, std::abs(r.tape_derivative[i] - r.beta));
        r.max_dev_analytic_vs_tape =
            std::max(r.max_dev_analytic_vs_tape, std::abs(r.analytic[i] - r.tape_derivative[i]));
        r.fe_dev = std::max(r.fe_dev, std::abs(r.fe_chain[i] - r.analytic[i]));
    }
    r.fe_dev_refined = fe_chain_deviation(2 * samples, r.alpha, r.beta, r.gamma);
    return r;
}

}  // namespace pifem
