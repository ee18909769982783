#pragma once

#include "mbsde/backward.hpp"
#include "mbsde/config.hpp"
#include "mbsde/nvdensity.hpp"

#include <iosfwd>
#include <optional>
#include <string_view>

namespace mbsde {

inline constexpr std::string_view kVersion = "0.1.0";

enum class Stage { hypotheses = 0, simulate = 1, density = 2, verify = 3 };

[[nodiscard]] Stage parse_stage(std::string_view text);
[[nodiscard]] std::string_view to_string(Stage stage);

/// Process exit codes of a run.
enum ExitCode : int {
    exit_pass = 0,
    exit_verdict_failed = 1,
    exit_error = 2,
    exit_sigma_sign = 3,
};

struct RunOptions {
    /// Last stage to run; every stage before it runs too.
    Stage last_stage = Stage::verify;
    int workers = 1;
    std::ostream* log = nullptr;
};

/// Runs the pipeline prefix up to options.last_stage inside config.out_dir.
/// Each stage reads only the files written by the previous one. Returns an
/// ExitCode; module errors propagate as exceptions.
[[nodiscard]] int run_experiment(const ExperimentConfig& config, const RunOptions& options);

/// Prints the hypothesis report; exit_pass iff every applicable entry holds.
[[nodiscard]] int check_hypotheses_command(const ExperimentConfig& config, std::ostream& out);

/// Φ-sampler for F = value(X_t, W_t) at node k: replays the forward flow on
/// the given increments and evaluates D_θF = c0 + D_θU_t c1 with the fitted
/// parts. The map must outlive the sampler.
[[nodiscard]] PhiSampler tableau_sampler(const LampertiMap& map, double x0, double dt, StateFunction value,
                                         const AffineParts& parts, int k);

}  // namespace mbsde
