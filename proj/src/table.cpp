#include "pifem/table.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace pifem {

TableResult reproduce_table(const ProblemSetup& setup, const TableOptions& options) {
    if (options.seeds < 1) throw std::invalid_argument("reproduce_table: need at least one seed");
    const std::vector<Variant> variants = table_variants();
    const int n_runs = static_cast<int>(variants.size()) * options.seeds;

    TableResult result;
    result.seeds = options.seeds;
    result.runs.resize(n_runs);

    std::atomic<int> cursor{0};
    const auto worker = [&]() {
        while (true) {
            const int i = cursor.fetch_add(1);
            if (i >= n_runs) return;
            RunOutcome& out = result.runs[i];
            out.variant = variants[i / options.seeds];
            out.seed = static_cast<uint64_t>(i % options.seeds);
            out.epochs = options.epochs;
            try {
                TrainConfig cfg;
                cfg.variant = out.variant;
                cfg.epochs = options.epochs;
                cfg.learning_rate = options.learning_rate;
                cfg.seed = out.seed;
                cfg.activation = options.activation;
                const TrainResult trained = train(setup, cfg);
                out.metrics = evaluate(trained.params, setup, cfg.variant, cfg.activation);
            } catch (const std::exception& e) {
                out.failed = true;
                out.error = e.what();
            }
        }
    };

    int n_threads = options.threads;
    if (n_threads <= 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        n_threads = static_cast<int>(hw == 0 ? 1 : std::min(hw, 8u));
    }
    n_threads = std::min(n_threads, n_runs);
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    for (size_t v = 0; v < variants.size(); ++v) {
        RunOutcome mean;
        mean.variant = variants[v];
        mean.epochs = options.epochs;
        double spatial = 0.0, mae = 0.0, autodiff = 0.0;
        bool has_autodiff = true;
        for (int s = 0; s < options.seeds; ++s) {
            const RunOutcome& r = result.runs[v * options.seeds + s];
            if (r.failed) {
                mean.failed = true;
                result.any_failed = true;
                continue;
            }
            spatial += r.metrics.spatial_residual;
            mae += r.metrics.mae;
            if (r.metrics.autodiff_residual)
                autodiff += *r.metrics.autodiff_residual;
            else
                has_autodiff = false;
        }
        if (!mean.failed) {
            mean.metrics.spatial_residual = spatial / options.seeds;
            mean.metrics.mae = mae / options.seeds;
            if (has_autodiff) mean.metrics.autodiff_residual = autodiff / options.seeds;
        }
        result.means.push_back(std::move(mean));
    }

    result.target = evaluate_target(setup);
    return result;
}

std::string format_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string metrics_csv_header() {
    return "variant,spatial_residual,mae,autodiff_residual,epochs,seed,wall_seconds";
}

std::string metrics_csv_row(const std::string& variant, const Metrics& metrics,
                            std::optional<long> epochs, std::optional<uint64_t> seed,
                            std::optional<double> wall_seconds, bool failed) {
    std::ostringstream row;
    row << variant << ',';
    if (failed)
        row << "FAILED,FAILED,FAILED,";
    else {
        row << format_full(metrics.spatial_residual) << ',' << format_full(metrics.mae) << ',';
        row << (metrics.autodiff_residual ? format_full(*metrics.autodiff_residual) : "-") << ',';
    }
    row << (epochs ? std::to_string(*epochs) : "-") << ',';
    row << (seed ? std::to_string(*seed) : "-") << ',';
    row << (wall_seconds ? format_full(*wall_seconds) : "-");
    return row.str();
}

namespace {
void write_rows(const std::string& path, const std::vector<std::string>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << metrics_csv_header() << '\n';
    for (const auto& r : rows) out << r << '\n';
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}
}  // namespace

void write_table_csv(const TableResult& result, const std::string& path) {
    std::vector<std::string> rows;
    for (const auto& run : result.runs)
        rows.push_back(metrics_csv_row(variant_name(run.variant), run.metrics, run.epochs, run.seed,
                                       std::nullopt, run.failed));
    rows.push_back(metrics_csv_row("target", result.target, std::nullopt, std::nullopt, std::nullopt));
    write_rows(path, rows);
}

void write_table_mean_csv(const TableResult& result, const std::string& path) {
    std::vector<std::string> rows;
    for (const auto& mean : result.means)
        rows.push_back(metrics_csv_row(variant_name(mean.variant), mean.metrics, mean.epochs,
                                       std::nullopt, std::nullopt, mean.failed));
    rows.push_back(metrics_csv_row("target", result.target, std::nullopt, std::nullopt, std::nullopt));
    write_rows(path, rows);
}

std::string format_table(const TableResult& result) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-28s %15s %12s %20s\n", "variant (seed mean)", "PDE residual",
                  "MAE", "autodiff residual");
    out << line;
    const auto cell = [](std::optional<double> v, bool failed) -> std::string {
        if (failed) return "FAILED";
        if (!v) return "-";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3e", *v);
        return buf;
    };
    for (const auto& mean : result.means) {
        std::snprintf(line, sizeof(line), "%-28s %15s %12s %20s\n", variant_name(mean.variant).c_str(),
                      cell(mean.metrics.spatial_residual, mean.failed).c_str(),
                      cell(mean.metrics.mae, mean.failed).c_str(),
                      cell(mean.metrics.autodiff_residual, mean.failed).c_str());
        out << line;
    }
    std::snprintf(line, sizeof(line), "%-28s %15s %12s %20s\n", "target",
                  cell(result.target.spatial_residual, false).c_str(),
                  cell(result.target.mae, false).c_str(),
                  cell(result.target.autodiff_residual, false).c_str());
    out << line;
    return out.str();
}

}  // namespace pifem
