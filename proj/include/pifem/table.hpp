#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pifem/training.hpp"

namespace pifem {

struct TableOptions {
    int seeds = 3;
    int epochs = 2000;
    double learning_rate = 1e-3;
    Activation activation = Activation::relu;
    int threads = 0;  // 0 = pick from hardware
};

struct RunOutcome {
    Variant variant;
    uint64_t seed = 0;
    int epochs = 0;
    bool failed = false;
    std::string error;
    Metrics metrics;
};

struct TableResult {
    std::vector<RunOutcome> runs;   // variant-major (reporting order), seed-minor
    std::vector<RunOutcome> means;  // one per variant, averaged over seeds
    Metrics target;
    int seeds = 0;
    bool any_failed = false;
};

/// Trains all six variants x seeds on one problem and evaluates each final
/// model. Runs are independent and may execute on several threads; results
/// land in a fixed order, so the output is identical for any thread count.
TableResult reproduce_table(const ProblemSetup& setup, const TableOptions& options);

/// Full-precision decimal (round-trip exact) for CSV cells.
std::string format_full(double v);

std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& variant, const Metrics& metrics,
                            std::optional<long> epochs, std::optional<uint64_t> seed,
                            std::optional<double> wall_seconds, bool failed = false);

/// Per-seed rows plus the target row. wall_seconds is written as "-": the
/// file must be byte-identical across identical invocations.
void write_table_csv(const TableResult& result, const std::string& path);
/// Seed-mean rows plus the target row.
void write_table_mean_csv(const TableResult& result, const std::string& path);

/// Human-readable seed-mean table in the reporting row order.
std::string format_table(const TableResult& result);

}  // namespace pifem
