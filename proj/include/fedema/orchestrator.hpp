#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedema/aggregator.hpp"
#include "fedema/metrics.hpp"
#include "fedema/scenegen.hpp"
#include "fedema/segnet.hpp"
#include "fedema/vehicle.hpp"

namespace fedema {

enum class Algorithm { FedEMA, FedAvg, FedProx };

std::string_view to_string(Algorithm algorithm);
Algorithm parse_algorithm(std::string_view text);

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::FedEMA;
  std::size_t clients = 4;
  std::size_t rounds = 60;
  std::size_t local_steps = 5;
  std::size_t batch_images = 8;
  OptimizerConfig optimizer;

  // FedEMA only.
  double lambda = 0.0;
  EntropySign sign = EntropySign::ConfidencePenalty;
  std::optional<long long> window = 5;
  std::optional<double> beta;  // overrides the window when set

  // FedProx only.
  double mu = 0.0;

  std::size_t hidden_dim = 64;
  SceneConfig scenes;
  std::size_t images_per_client = 40;
  std::size_t eval_images = 24;
  double partition_alpha = 1.0;

  std::uint64_t seed = 1;
  std::size_t eval_every = 1;
  bool parallel_clients = true;
  double objective_threshold = 1.2;

  void validate() const;
  /// Decay actually used by the server: 0 for FedAvg and FedProx.
  double effective_beta() const;
  ModelConfig model_config() const;
  LocalTrainSpec local_spec() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Same experiment run as another algorithm; hyperparameters that do not apply are zeroed.
ExperimentConfig as_algorithm(ExperimentConfig config, Algorithm algorithm);

struct RoundRecord {
  std::size_t round = 0;
  std::size_t phase = 0;
  double mean_objective = 0.0;
  double grad_norm_sq = 0.0;
  std::vector<double> weights;
  bool evaluated = false;
  // Index p holds scores on phase p's eval set, for every phase started so far.
  std::vector<MetricBundle> ema_phase_metrics;
  std::vector<MetricBundle> aggregated_phase_metrics;
  double wall_seconds = 0.0;

  const MetricBundle& ema_current() const { return ema_phase_metrics.at(phase); }
  /// Mean EMA-model mIoU over phases before the current one; the current-phase
  /// mIoU while still in the first phase.
  double historical_miou_mean() const;
};

struct ConvergenceSummary {
  std::vector<double> running_mean;
  double kendall_tau = 0.0;
  std::size_t quarter_round = 0;
  double running_mean_at_quarter = 0.0;
  double running_mean_at_end = 0.0;
  bool improved = false;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<RoundRecord> records;
  std::optional<double> forgetting;
  std::optional<ConvergenceSummary> convergence;
  ParamVector initial_model;
  std::vector<ParamVector> aggregated_models;  // omega^r, r = 1..R
  std::vector<ParamVector> ema_models;         // omega_EMA^r, r = 1..R
  std::optional<std::string> error;

  const ParamVector& final_model() const {
    return ema_models.empty() ? initial_model : ema_models.back();
  }
};

/// ||sum_c weights[c] * grad CE(params; batches[c])||^2.
double grad_norm_estimate(const SegNet& model, const ParamVector& params, std::span<const Batch> batches,
                          std::span<const double> weights);

/// Running mean of the series, its Kendall tau against the round index, and whether
/// the running mean at the end is below the one at round floor(n/4). Needs >= 10 values.
ConvergenceSummary convergence_summary(std::span<const double> grad_norm_sq);
ConvergenceSummary convergence_summary(std::span<const RoundRecord> records);

/// Tau-a rank correlation of the series against its index.
double kendall_tau(std::span<const double> series);

/// First round whose mean objective is <= threshold, or records.size() + 1 if none.
std::size_t rounds_to_threshold(std::span<const RoundRecord> records, double threshold);

/// Forgetting of the EMA model over phases that ended before the last record.
std::optional<double> forgetting_from_records(std::span<const RoundRecord> records);

/// One simulated federation: fixed drift schedule, eval sets and client data streams.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig config);

  const ExperimentConfig& config() const noexcept { return config_; }
  const SegNet& model() const noexcept { return model_; }
  const DriftSchedule& schedule() const noexcept { return schedule_; }

  ServerState initial_state() const;

  /// Client shards of round r (fresh draw from the active phase, then a non-IID split).
  std::vector<ClientShard> client_shards(std::size_t round) const;
  const std::vector<LabeledScene>& eval_set(std::size_t phase) const { return eval_sets_.at(phase); }
  std::span<const Batch> grad_eval_batches(std::size_t phase) const { return grad_eval_.at(phase); }

  struct RoundOutcome {
    ServerState state;
    RoundRecord record;
    ParamVector aggregated;
    std::vector<LocalTrainReport> client_reports;
  };
  /// Distribute the EMA model, train every client locally, aggregate and fuse.
  /// Metrics are computed when `evaluate` is set.
  RoundOutcome run_round(const ServerState& state, std::size_t round, bool evaluate = true) const;

  MetricBundle evaluate_on_phase(const ParamVector& params, std::size_t phase) const;

 private:
  ExperimentConfig config_;
  SegNet model_;
  DriftSchedule schedule_;
  std::vector<std::vector<LabeledScene>> eval_sets_;
  std::vector<std::vector<Batch>> grad_eval_;
};

ExperimentReport run_experiment(const ExperimentConfig& config);

}  // namespace fedema
