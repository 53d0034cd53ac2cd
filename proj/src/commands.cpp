#include "fedema/commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

#include "fedema/persistence.hpp"
#include "fedema/seeding.hpp"

namespace fedema {

namespace {

ExperimentConfig load_with_overrides(const std::filesystem::path& path, const RunOptions& options) {
  ExperimentConfig config = load_config(path);
  if (options.seed) config.seed = *options.seed;
  return config;
}

}  // namespace

void write_run_outputs(const std::filesystem::path& out_dir, const ExperimentReport& report) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream csv(out_dir / "metrics.csv", std::ios::binary);
    write_metrics_csv(csv, report);
    if (!csv) throw Error(ErrorKind::Format, "cannot write metrics.csv");
  }
  std::ofstream(out_dir / "report.json") << report_to_json(report).dump(2) << '\n';
  save_config(out_dir / "config.json", report.config);
  if (!report.records.empty()) {
    save_checkpoint(out_dir / "final.ckpt", report.final_model(),
                    {report.records.back().round, std::string(to_string(report.config.algorithm)),
                     config_hash(report.config)});
  }
}

int cmd_run(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
            const RunOptions& options, std::ostream& log, std::ostream& err) {
  ExperimentConfig config;
  try {
    config = load_with_overrides(config_path, options);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadConfig;
  }
  try {
    const ExperimentReport report = run_experiment(config);
    write_run_outputs(out_dir, report);
    if (report.error) {
      err << "error: run aborted after " << report.records.size() << " rounds: " << *report.error << '\n';
      return kExitFailure;
    }
    if (!options.quiet) {
      const auto& last = report.records.back();
      log << to_string(config.algorithm) << ": " << report.records.size() << " rounds, final mIoU "
          << format_number(last.ema_current().miou) << ", historical mIoU "
          << format_number(last.historical_miou_mean());
      if (report.forgetting) log << ", forgetting " << format_number(*report.forgetting);
      log << "\nwrote " << (out_dir / "metrics.csv").string() << '\n';
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

int cmd_ablate(const std::filesystem::path& config_path, const std::string& axis,
               const std::vector<std::string>& values, const std::filesystem::path& out_dir,
               const RunOptions& options, std::ostream& log, std::ostream& err) {
  ExperimentConfig base;
  std::vector<ExperimentConfig> variants;
  try {
    base = load_with_overrides(config_path, options);
    if (axis != "lambda" && axis != "window") throw Error(ErrorKind::InvalidConfig, "axis must be lambda or window");
    if (values.empty()) throw Error(ErrorKind::InvalidConfig, "no sweep values given");
    for (const auto& text : values) {
      ExperimentConfig c = base;
      std::size_t used = 0;
      try {
        if (axis == "lambda") {
          c.lambda = std::stod(text, &used);
        } else {
          c.window = std::stoll(text, &used);
          c.beta.reset();
        }
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != text.size()) throw Error(ErrorKind::InvalidConfig, "bad " + axis + " value '" + text + "'");
      c.validate();
      variants.push_back(c);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadConfig;
  }

  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir / "ablation.csv", std::ios::binary);
  std::ofstream summary(out_dir / "ablation_summary.csv", std::ios::binary);
  csv << "sweep_value";
  for (const auto& col : metrics_csv_columns()) csv << ',' << col;
  csv << '\n';
  summary << "axis,sweep_value,status,rounds_to_threshold,final_miou_cur,final_miou_hist_mean,forgetting_score\n";

  int failures = 0;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const auto& c = variants[i];
    const std::string key = values[i];
    try {
      const ExperimentReport report = run_experiment(c);
      write_run_outputs(out_dir / (axis + "_" + key), report);
      if (report.error) throw Error(ErrorKind::InvalidInput, *report.error);
      for (const auto& r : report.records) {
        csv << key;
        for (const auto& cell : metrics_csv_row(c, r)) csv << ',' << cell;
        csv << '\n';
      }
      const auto& last = report.records.back();
      summary << axis << ',' << key << ",ok," << rounds_to_threshold(report.records, c.objective_threshold) << ','
              << format_number(last.ema_current().miou) << ',' << format_number(last.historical_miou_mean()) << ','
              << (report.forgetting ? format_number(*report.forgetting) : std::string()) << '\n';
      if (!options.quiet) log << axis << '=' << key << " done\n";
    } catch (const std::exception& e) {
      ++failures;
      summary << axis << ',' << key << ",failed,,,,\n";
      err << "error: " << axis << '=' << key << ": " << e.what() << '\n';
    }
  }
  return failures == 0 ? kExitOk : kExitFailure;
}

std::vector<GradCheckDraw> gradient_check(std::uint64_t seed, const std::vector<double>& lambdas,
                                          const std::vector<EntropySign>& signs, std::size_t draws,
                                          bool corrupt_gradient) {
  const SegNet model(ModelConfig{3, 4, 3, seed});
  constexpr double kStep = 1e-5;
  constexpr std::size_t kPixels = 6;
  std::vector<GradCheckDraw> out;
  std::uint64_t stream = 0;
  for (double lambda : lambdas) {
    for (EntropySign sign : signs) {
      for (std::size_t d = 0; d < draws; ++d) {
        std::mt19937_64 rng(derive_seed(seed, {++stream}));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_int_distribution<std::uint32_t> label(0, 2);
        ParamVector params(model.param_count());
        for (double& v : params.view()) v = 0.7 * normal(rng);
        Batch batch;
        batch.feature_dim = 3;
        for (std::size_t i = 0; i < kPixels; ++i) {
          for (int f = 0; f < 3; ++f) batch.features.push_back(normal(rng));
          batch.labels.push_back(label(rng));
          batch.image_ids.push_back(0);
        }
        const Regularizer reg{lambda, sign};
        ParamVector analytic = model.backward(params, batch, reg);
        if (corrupt_gradient) analytic[0] += 1e-2 * (std::abs(analytic[0]) + 1.0);
        const ParamVector numeric = finite_diff_gradient(
            [&](const ParamVector& p) { return model.objective(p, batch, reg); }, params, kStep);
        out.push_back({lambda, sign, max_relative_error(analytic, numeric)});
      }
    }
  }
  return out;
}

int cmd_gradcheck(std::uint64_t seed, bool corrupt_gradient, std::ostream& log, std::ostream& err) {
  try {
    // Five draws with lambda and sign chosen per draw.
    std::mt19937_64 rng(derive_seed(seed, {0x67726164ULL}));
    const double lambdas[] = {0.0, 0.002, 0.01};
    double worst = 0.0;
    for (int draw = 0; draw < 5; ++draw) {
      const double lambda = lambdas[std::uniform_int_distribution<int>(0, 2)(rng)];
      const EntropySign sign =
          std::uniform_int_distribution<int>(0, 1)(rng) ? EntropySign::ConfidencePenalty : EntropySign::ConfidenceReward;
      const auto result = gradient_check(derive_seed(seed, {static_cast<std::uint64_t>(draw)}), {lambda}, {sign}, 1,
                                         corrupt_gradient);
      const double e = result.front().max_relative_error;
      worst = std::max(worst, e);
      char line[128];
      std::snprintf(line, sizeof line, "draw %d: lambda=%g sign=%+d max_rel_err=%.3e\n", draw, lambda,
                    static_cast<int>(sign), e);
      log << line;
    }
    char line[96];
    std::snprintf(line, sizeof line, "max relative error %.3e (tolerance %.0e): %s\n", worst, kGradCheckTolerance,
                  worst <= kGradCheckTolerance ? "PASS" : "FAIL");
    log << line;
    return worst <= kGradCheckTolerance ? kExitOk : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: gradient check failed: " << e.what() << '\n';
    return kExitFailure;
  }
}

int cmd_export_scenes(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
                      std::size_t phase, std::size_t count, const RunOptions& options, std::ostream& log,
                      std::ostream& err) {
  ExperimentConfig config;
  try {
    config = load_with_overrides(config_path, options);
    if (phase >= config.scenes.phase_count) throw Error(ErrorKind::InvalidConfig, "phase index out of range");
    if (count == 0) throw Error(ErrorKind::InvalidConfig, "count must be >= 1");
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadConfig;
  }
  try {
    const PhaseParams params = make_phase(config.scenes, phase, config.seed);
    const auto scenes = generate_scenes(config.scenes, params, count, 0, derive_seed(config.seed, {kTagEvalSet, phase}));
    export_scenes(out_dir, scenes, config.scenes.class_count);
    if (!options.quiet) log << "wrote " << count << " scenes to " << (out_dir / "scenes.bin").string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace fedema
