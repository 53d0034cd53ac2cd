#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedema/orchestrator.hpp"

namespace fedema {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitBadConfig = 2;

struct RunOptions {
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

/// Writes metrics.csv, report.json, config.json and final.ckpt into out_dir.
int cmd_run(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
            const RunOptions& options, std::ostream& log, std::ostream& err);

/// Runs the experiment once per value of `axis` ("lambda" or "window") and writes
/// ablation.csv (metrics rows prefixed by sweep_value) and ablation_summary.csv.
int cmd_ablate(const std::filesystem::path& config_path, const std::string& axis,
               const std::vector<std::string>& values, const std::filesystem::path& out_dir,
               const RunOptions& options, std::ostream& log, std::ostream& err);

struct GradCheckDraw {
  double lambda = 0.0;
  EntropySign sign = EntropySign::ConfidencePenalty;
  double max_relative_error = 0.0;
};

/// Compares SegNet::backward against central differences (h = 1e-5) on a small model
/// (3 features, 4 hidden, 3 classes) for `draws` random (params, batch) pairs per
/// (lambda, sign) combination.
std::vector<GradCheckDraw> gradient_check(std::uint64_t seed, const std::vector<double>& lambdas,
                                          const std::vector<EntropySign>& signs, std::size_t draws,
                                          bool corrupt_gradient = false);

inline constexpr double kGradCheckTolerance = 1e-4;

/// Five random (params, batch, lambda, sign) draws; exit 0 iff the worst error <= 1e-4.
int cmd_gradcheck(std::uint64_t seed, bool corrupt_gradient, std::ostream& log, std::ostream& err);

/// Generates `count` scenes of one phase and writes scenes.bin + scenes.json.
int cmd_export_scenes(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
                      std::size_t phase, std::size_t count, const RunOptions& options, std::ostream& log,
                      std::ostream& err);

/// Writes a finished report (metrics.csv, report.json, config.json, final.ckpt).
void write_run_outputs(const std::filesystem::path& out_dir, const ExperimentReport& report);

}  // namespace fedema
