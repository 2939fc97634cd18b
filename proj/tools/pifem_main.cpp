#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pifem/fem.hpp"
#include "pifem/io.hpp"
#include "pifem/mesh.hpp"
#include "pifem/table.hpp"
#include "pifem/training.hpp"
#include "pifem/vtk.hpp"

namespace fs = std::filesystem;
using namespace pifem;

namespace {

void write_history_csv(const std::vector<EpochRecord>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "epoch,total,mae_term,spatial_term,autodiff_term,boundary_term\n";
    for (const auto& r : history)
        out << r.epoch << ',' << format_full(r.total) << ',' << format_full(r.mae_term) << ','
            << format_full(r.spatial_term) << ',' << format_full(r.autodiff_term) << ','
            << format_full(r.boundary_term) << '\n';
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

void write_single_metrics_csv(const std::string& variant, const Metrics& metrics, long epochs,
                              uint64_t seed, std::optional<double> wall, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << metrics_csv_header() << '\n'
        << metrics_csv_row(variant, metrics, epochs, seed, wall) << '\n';
}

void cmd_mesh_gen(int nx, int ny, int nz, double amplitude, const std::string& out_path) {
    const Mesh mesh = apply_deformation(generate_box_mesh(nx, ny, nz), amplitude);
    save_mesh(mesh, out_path);
    std::printf("wrote %s: %d nodes, %d tets, %zu boundary nodes\n", out_path.c_str(),
                mesh.node_count(), mesh.tet_count(), mesh.boundary_nodes.size());
}

void cmd_solve_ref(const std::string& mesh_path, double tol, const std::string& out_path) {
    const Mesh mesh = load_mesh(mesh_path);
    const Vec u = reference_solve(mesh, tol);
    const SparseMatrix k = assemble_stiffness(mesh);
    const Vec lumped = assemble_lumped_mass(mesh);
    const ResidualOperator r = build_residual_operator(mesh, k, lumped);
    const double max_residual = r.matrix.apply(u).cwiseAbs().maxCoeff();
    save_field(u, out_path);
    std::printf("wrote %s: %d values, max interior residual %.3e\n", out_path.c_str(),
                static_cast<int>(u.size()), max_residual);
}

void cmd_train(const std::string& config_path) {
    const RunConfig config = load_run_config(config_path);
    const ProblemSetup setup = config_setup(config);

    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult result = train(setup, config.train);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const Metrics metrics =
        evaluate(result.params, setup, config.train.variant, config.train.activation);

    fs::create_directories(config.output_dir);
    const fs::path dir(config.output_dir);
    result.params.save((dir / "checkpoint.json").string());
    write_history_csv(result.history, (dir / "history.csv").string());
    const std::string name = variant_name(config.train.variant);
    write_single_metrics_csv(name, metrics, config.train.epochs, config.train.seed, wall,
                             (dir / "metrics.csv").string());
    std::cout << metrics_csv_header() << '\n'
              << metrics_csv_row(name, metrics, config.train.epochs, config.train.seed, wall) << '\n';
}

void cmd_eval(const std::string& config_path, const std::string& checkpoint) {
    const RunConfig config = load_run_config(config_path);
    const ProblemSetup setup = config_setup(config);

    Metrics metrics;
    std::string name;
    if (checkpoint == "target") {  // sentinel: score the reference solution itself
        metrics = evaluate_target(setup);
        name = "target";
    } else {
        const ParamSet params = ParamSet::load(checkpoint);
        metrics = evaluate(params, setup, config.train.variant, config.train.activation);
        name = variant_name(config.train.variant);
    }
    fs::create_directories(config.output_dir);
    write_single_metrics_csv(name, metrics, config.train.epochs, config.train.seed, std::nullopt,
                             (fs::path(config.output_dir) / "metrics.csv").string());
    std::cout << metrics_csv_header() << '\n'
              << metrics_csv_row(name, metrics, config.train.epochs, config.train.seed, std::nullopt)
              << '\n';
}

int cmd_reproduce_table(const std::string& mesh_path, int seeds, int epochs, double lr, int threads,
                        const std::string& out_path) {
    const Mesh mesh = load_mesh(mesh_path);
    const ProblemSetup setup = make_setup(mesh);

    TableOptions options;
    options.seeds = seeds;
    options.epochs = epochs;
    options.learning_rate = lr;
    options.threads = threads;
    const TableResult result = reproduce_table(setup, options);

    write_table_csv(result, out_path);
    const fs::path p(out_path);
    const fs::path mean_path = p.parent_path() / (p.stem().string() + ".mean.csv");
    write_table_mean_csv(result, mean_path.string());

    std::cout << format_table(result);
    std::printf("wrote %s and %s\n", out_path.c_str(), mean_path.string().c_str());
    if (result.any_failed) {
        for (const auto& run : result.runs)
            if (run.failed)
                std::fprintf(stderr, "run %s seed %llu FAILED: %s\n", variant_name(run.variant).c_str(),
                             static_cast<unsigned long long>(run.seed), run.error.c_str());
        return 2;
    }
    return 0;
}

void cmd_export_vtk(const std::string& mesh_path, const std::vector<std::string>& field_specs,
                    const std::string& out_path) {
    const Mesh mesh = load_mesh(mesh_path);
    std::vector<std::pair<std::string, Vec>> fields;
    for (const auto& spec : field_specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
            throw std::invalid_argument("--field expects name=path, got '" + spec + "'");
        fields.emplace_back(spec.substr(0, eq), load_field(spec.substr(eq + 1)));
    }

    const Vec* target = nullptr;
    const Vec* prediction = nullptr;
    for (const auto& [name, values] : fields) {
        if (name == "target") target = &values;
        if (name == "prediction") prediction = &values;
    }
    if (target && prediction && target->size() == prediction->size())
        fields.emplace_back("abs_error", (*prediction - *target).cwiseAbs());

    std::vector<double> bc_value, bc_mask;
    mesh.dirichlet_field(bc_value, bc_mask);
    Vec bc(mesh.node_count());
    for (int i = 0; i < mesh.node_count(); ++i) bc[i] = bc_value[i];
    fields.emplace_back("bc_value", bc);

    export_vtk(mesh, fields, out_path);
    std::printf("wrote %s with %zu point fields\n", out_path.c_str(), fields.size());
}

void cmd_demo_flaw(const std::string& out_path) {
    const FlawDemoReport report = demo_autodiff_flaw(100);

    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot open '" + out_path + "' for writing");
    out << "x1,tape_derivative,analytic,fe_chain\n";
    for (int i = 0; i < report.samples; ++i)
        out << format_full(report.x[i]) << ',' << format_full(report.tape_derivative[i]) << ','
            << format_full(report.analytic[i]) << ',' << format_full(report.fe_chain[i]) << '\n';

    std::printf("model M(phi,x) = %g*phi(x) + %g*x + %g with phi = sin, %d samples\n", report.alpha,
                report.beta, report.gamma, report.samples);
    std::printf("tape derivative dM/dx: constant %g, max |tape - beta| = %.17g\n", report.beta,
                report.max_dev_tape_from_beta);
    std::printf("max |analytic - tape| = %.17g (the alpha*cos term the tape cannot see)\n",
                report.max_dev_analytic_vs_tape);
    std::printf("fe-chain max deviation: %.6e at n=%d, %.6e at n=%d (reduction %.2fx)\n", report.fe_dev,
                report.samples, report.fe_dev_refined, 2 * report.samples,
                report.fe_dev / report.fe_dev_refined);
    std::printf("wrote %s\n", out_path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Physics-informed surrogate training for the 3-D Laplace problem on tet meshes"};
    app.require_subcommand(1);
    int exit_code = 0;

    auto* gen = app.add_subcommand("mesh-gen", "generate a (deformed) unit-box tet mesh");
    int nx = 4, ny = 4, nz = 4;
    double amplitude = 0.0;
    std::string gen_out;
    gen->add_option("--nx", nx, "cells in x")->required();
    gen->add_option("--ny", ny, "cells in y")->required();
    gen->add_option("--nz", nz, "cells in z")->required();
    gen->add_option("--amplitude", amplitude, "deformation amplitude, in [0, 0.4]");
    gen->add_option("--out", gen_out, "output mesh JSON")->required();
    gen->callback([&] { cmd_mesh_gen(nx, ny, nz, amplitude, gen_out); });

    auto* solve = app.add_subcommand("solve-ref", "solve the reference Laplace problem");
    std::string solve_mesh, solve_out;
    double solve_tol = 1e-10;
    solve->add_option("--mesh", solve_mesh, "mesh JSON")->required();
    solve->add_option("--tol", solve_tol, "CG relative tolerance");
    solve->add_option("--out", solve_out, "output solution JSON array")->required();
    solve->callback([&] { cmd_solve_ref(solve_mesh, solve_tol, solve_out); });

    auto* tr = app.add_subcommand("train", "train one variant from a JSON config");
    std::string train_config;
    tr->add_option("--config", train_config, "run config JSON")->required();
    tr->callback([&] { cmd_train(train_config); });

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (or the sentinel 'target')");
    std::string eval_config, eval_checkpoint;
    ev->add_option("--config", eval_config, "run config JSON")->required();
    ev->add_option("--checkpoint", eval_checkpoint, "checkpoint JSON, or 'target'")->required();
    ev->callback([&] { cmd_eval(eval_config, eval_checkpoint); });

    auto* table = app.add_subcommand("reproduce-table", "train all six variants x seeds");
    std::string table_mesh, table_out;
    int seeds = 3, epochs = 2000, threads = 0;
    double lr = 1e-3;
    table->add_option("--mesh", table_mesh, "mesh JSON")->required();
    table->add_option("--seeds", seeds, "seeds per variant (0..k-1)");
    table->add_option("--epochs", epochs, "training epochs per run");
    table->add_option("--lr", lr, "learning rate");
    table->add_option("--threads", threads, "worker threads (0 = auto)");
    table->add_option("--out", table_out, "output CSV")->required();
    table->callback([&] { exit_code = cmd_reproduce_table(table_mesh, seeds, epochs, lr, threads, table_out); });

    auto* vtk = app.add_subcommand("export-vtk", "export mesh and nodal fields as legacy VTK");
    std::string vtk_mesh, vtk_out;
    std::vector<std::string> vtk_fields;
    vtk->add_option("--mesh", vtk_mesh, "mesh JSON")->required();
    vtk->add_option("--field", vtk_fields, "name=path of a JSON nodal field (repeatable)");
    vtk->add_option("--out", vtk_out, "output .vtk path")->required();
    vtk->callback([&] { cmd_export_vtk(vtk_mesh, vtk_fields, vtk_out); });

    auto* flaw = app.add_subcommand("demo-flaw", "show the broken tape derivative of a sampled field");
    std::string flaw_out;
    flaw->add_option("--out", flaw_out, "output CSV")->required();
    flaw->callback([&] { cmd_demo_flaw(flaw_out); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const DegenerateMeshError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const NonManifoldError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const SolveError& e) {
        std::fprintf(stderr, "error: %s (final residual %.3e)\n", e.what(), e.final_residual);
        return 2;
    } catch (const TrainingError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const FemError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const GraphError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return exit_code;
}
