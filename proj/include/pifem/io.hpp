#pragma once

#include <string>

#include "pifem/sparse.hpp"
#include "pifem/training.hpp"

namespace pifem {

/// Nodal field as a JSON array of doubles, round-trip exact.
void save_field(const Vec& field, const std::string& path);
Vec load_field(const std::string& path);

/// One command-line run: training hyperparameters plus where the mesh comes
/// from and where outputs go. Parsed from a flat JSON object; unknown keys
/// are rejected.
struct RunConfig {
    TrainConfig train;
    std::string mesh_path;    // when empty, the box below is generated
    int nx = 4, ny = 4, nz = 4;
    double amplitude = 0.25;
    std::string target_path;  // when empty, solved with reference_solve
    std::string output_dir = ".";
    double solver_tol = 1e-10;
};

RunConfig load_run_config(const std::string& path);

/// Materializes the configured mesh (loaded or generated+deformed).
Mesh config_mesh(const RunConfig& config);

/// make_setup plus the optional target override from target_path.
ProblemSetup config_setup(const RunConfig& config);

}  // namespace pifem
