#include "pifem/io.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace pifem {

void save_field(const Vec& field, const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (int i = 0; i < field.size(); ++i) j.push_back(field[i]);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << j.dump() << '\n';
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

Vec load_field(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open field file '" + path + "'");
    try {
        const auto j = nlohmann::json::parse(in);
        const auto values = j.get<std::vector<double>>();
        Vec v(static_cast<int>(values.size()));
        for (size_t i = 0; i < values.size(); ++i) v[static_cast<int>(i)] = values[i];
        return v;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("field file '" + path + "': " + e.what());
    }
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config '" + path + "': " + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config '" + path + "': expected a JSON object");

    static const std::set<std::string> known = {
        "variant",        "epochs",          "learning_rate",  "adam_beta1",   "adam_beta2",
        "adam_epsilon",   "weight_mae",      "weight_spatial", "weight_autodiff",
        "weight_boundary", "seed",           "activation",     "mesh_path",    "nx",
        "ny",             "nz",              "amplitude",      "target_path",  "output_dir",
        "solver_tol"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw std::invalid_argument("config '" + path + "': unknown key '" + key + "'");

    RunConfig c;
    try {
        if (!j.contains("variant"))
            throw std::invalid_argument("config '" + path + "': missing required key 'variant'");
        c.train.variant = parse_variant(j.at("variant").get<std::string>());
        c.train.epochs = j.value("epochs", c.train.epochs);
        c.train.learning_rate = j.value("learning_rate", c.train.learning_rate);
        c.train.adam_beta1 = j.value("adam_beta1", c.train.adam_beta1);
        c.train.adam_beta2 = j.value("adam_beta2", c.train.adam_beta2);
        c.train.adam_epsilon = j.value("adam_epsilon", c.train.adam_epsilon);
        c.train.weight_mae = j.value("weight_mae", c.train.weight_mae);
        c.train.weight_spatial = j.value("weight_spatial", c.train.weight_spatial);
        c.train.weight_autodiff = j.value("weight_autodiff", c.train.weight_autodiff);
        c.train.weight_boundary = j.value("weight_boundary", c.train.weight_boundary);
        c.train.seed = j.value("seed", c.train.seed);
        if (j.contains("activation")) c.train.activation = parse_activation(j.at("activation").get<std::string>());
        c.mesh_path = j.value("mesh_path", c.mesh_path);
        c.nx = j.value("nx", c.nx);
        c.ny = j.value("ny", c.ny);
        c.nz = j.value("nz", c.nz);
        c.amplitude = j.value("amplitude", c.amplitude);
        c.target_path = j.value("target_path", c.target_path);
        c.output_dir = j.value("output_dir", c.output_dir);
        c.solver_tol = j.value("solver_tol", c.solver_tol);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config '" + path + "': " + e.what());
    }
    c.train.validate();
    return c;
}

Mesh config_mesh(const RunConfig& config) {
    if (!config.mesh_path.empty()) return load_mesh(config.mesh_path);
    return apply_deformation(generate_box_mesh(config.nx, config.ny, config.nz), config.amplitude);
}

ProblemSetup config_setup(const RunConfig& config) {
    ProblemSetup setup = make_setup(config_mesh(config), config.solver_tol);
    if (!config.target_path.empty()) {
        Vec target = load_field(config.target_path);
        if (target.size() != setup.mesh.node_count())
            throw std::invalid_argument("target field length " + std::to_string(target.size()) +
                                        " != node count " + std::to_string(setup.mesh.node_count()));
        setup.target = std::move(target);
    }
    return setup;
}

}  // namespace pifem
