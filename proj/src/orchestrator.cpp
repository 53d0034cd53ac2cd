#include "fedema/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <numeric>

#include "fedema/seeding.hpp"

namespace fedema {

std::string_view to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::FedEMA: return "fedema";
    case Algorithm::FedAvg: return "fedavg";
    case Algorithm::FedProx: return "fedprox";
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view text) {
  if (text == "fedema") return Algorithm::FedEMA;
  if (text == "fedavg") return Algorithm::FedAvg;
  if (text == "fedprox") return Algorithm::FedProx;
  throw Error(ErrorKind::InvalidConfig, "unknown algorithm '" + std::string(text) + "'");
}

void ExperimentConfig::validate() const {
  if (clients < 1) throw Error(ErrorKind::InvalidConfig, "clients must be >= 1");
  if (rounds < 1) throw Error(ErrorKind::InvalidConfig, "rounds must be >= 1");
  if (batch_images < 1) throw Error(ErrorKind::InvalidConfig, "batch_images must be >= 1");
  if (images_per_client < 1) throw Error(ErrorKind::InvalidConfig, "images_per_client must be >= 1");
  if (eval_images < 1) throw Error(ErrorKind::InvalidConfig, "eval_images must be >= 1");
  if (eval_every < 1) throw Error(ErrorKind::InvalidConfig, "eval_every must be >= 1");
  if (!(partition_alpha > 0.0)) throw Error(ErrorKind::InvalidConfig, "partition_alpha must be > 0");
  if (!std::isfinite(objective_threshold)) throw Error(ErrorKind::InvalidConfig, "objective_threshold must be finite");
  optimizer.validate();
  scenes.validate();
  model_config().validate();
  Regularizer{lambda, sign}.validate();
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw Error(ErrorKind::InvalidConfig, "mu must be finite and >= 0");
  if (algorithm != Algorithm::FedEMA && lambda != 0.0) {
    throw Error(ErrorKind::InvalidConfig, "lambda applies to fedema only");
  }
  if (algorithm != Algorithm::FedProx && mu != 0.0) {
    throw Error(ErrorKind::InvalidConfig, "mu applies to fedprox only");
  }
  if (algorithm == Algorithm::FedEMA) {
    if (beta) {
      validate_beta(*beta);
    } else if (window) {
      beta_from_window(*window);
    } else {
      throw Error(ErrorKind::InvalidConfig, "fedema needs a window size or a beta");
    }
  }
  if (rounds < scenes.phase_count) throw Error(ErrorKind::InvalidConfig, "fewer rounds than drift phases");
}

double ExperimentConfig::effective_beta() const {
  if (algorithm != Algorithm::FedEMA) return 0.0;
  if (beta) return *beta;
  return beta_from_window(window.value_or(0));
}

ModelConfig ExperimentConfig::model_config() const {
  return ModelConfig{scenes.feature_dim, hidden_dim, scenes.class_count, derive_seed(seed, {kTagInit})};
}

LocalTrainSpec ExperimentConfig::local_spec() const {
  LocalTrainSpec spec;
  spec.steps = local_steps;
  spec.batch_images = batch_images;
  spec.optimizer = optimizer;
  if (algorithm == Algorithm::FedEMA) spec.objective.entropy = Regularizer{lambda, sign};
  if (algorithm == Algorithm::FedProx) spec.objective.proximal_mu = mu;
  return spec;
}

ExperimentConfig as_algorithm(ExperimentConfig config, Algorithm algorithm) {
  config.algorithm = algorithm;
  if (algorithm != Algorithm::FedEMA) config.lambda = 0.0;
  if (algorithm != Algorithm::FedProx) config.mu = 0.0;
  return config;
}

double RoundRecord::historical_miou_mean() const {
  if (phase == 0) return ema_phase_metrics.at(0).miou;
  double total = 0.0;
  for (std::size_t p = 0; p < phase; ++p) total += ema_phase_metrics.at(p).miou;
  return total / static_cast<double>(phase);
}

double grad_norm_estimate(const SegNet& model, const ParamVector& params, std::span<const Batch> batches,
                          std::span<const double> weights) {
  if (batches.empty()) throw Error(ErrorKind::InvalidInput, "grad_norm_estimate: no eval batches");
  if (batches.size() != weights.size()) throw Error(ErrorKind::Dimension, "grad_norm_estimate: weight count mismatch");
  ParamVector total(params.size());
  for (std::size_t c = 0; c < batches.size(); ++c) {
    total = axpy_combine(1.0, total, weights[c], model.backward(params, batches[c], Regularizer{}));
  }
  return squared_norm(total.view());
}

double kendall_tau(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n < 2) return 0.0;
  long long score = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (series[j] > series[i]) ++score;
      if (series[j] < series[i]) --score;
    }
  }
  return static_cast<double>(score) / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

ConvergenceSummary convergence_summary(std::span<const double> values) {
  if (values.size() < 10) {
    throw Error(ErrorKind::NotApplicable, "convergence_summary needs at least 10 rounds");
  }
  ConvergenceSummary s;
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    s.running_mean.push_back(acc / static_cast<double>(i + 1));
  }
  s.kendall_tau = kendall_tau(s.running_mean);
  s.quarter_round = std::max<std::size_t>(1, values.size() / 4);
  s.running_mean_at_quarter = s.running_mean[s.quarter_round - 1];
  s.running_mean_at_end = s.running_mean.back();
  s.improved = s.running_mean_at_end < s.running_mean_at_quarter;
  return s;
}

ConvergenceSummary convergence_summary(std::span<const RoundRecord> records) {
  std::vector<double> values;
  for (const auto& r : records) values.push_back(r.grad_norm_sq);
  return convergence_summary(values);
}

std::size_t rounds_to_threshold(std::span<const RoundRecord> records, double threshold) {
  for (const auto& r : records) {
    if (r.mean_objective <= threshold) return r.round;
  }
  return records.size() + 1;
}

std::optional<double> forgetting_from_records(std::span<const RoundRecord> records) {
  if (records.empty()) return std::nullopt;
  const std::size_t final_phase = records.back().phase;
  if (final_phase == 0) return std::nullopt;
  std::vector<std::vector<double>> histories(final_phase);
  for (const auto& r : records) {
    if (!r.evaluated) continue;
    for (std::size_t p = 0; p < final_phase && p < r.ema_phase_metrics.size(); ++p) {
      histories[p].push_back(r.ema_phase_metrics[p].miou);
    }
  }
  // The final record is always evaluated, so each history ends with the final score.
  return forgetting_score(histories);
}

Experiment::Experiment(ExperimentConfig config)
    : config_(std::move(config)), model_((config_.validate(), config_.model_config())) {
  schedule_ = make_schedule(config_.scenes, config_.rounds, config_.seed);
  for (const auto& entry : schedule_.phases) {
    const std::size_t p = entry.phase.phase_id;
    eval_sets_.push_back(generate_scenes(config_.scenes, entry.phase, config_.eval_images, 0,
                                         derive_seed(config_.seed, {kTagEvalSet, p})));
    std::vector<Batch> per_client;
    for (std::size_t c = 0; c < config_.clients; ++c) {
      const auto scenes = generate_scenes(config_.scenes, entry.phase, config_.batch_images, 0,
                                          derive_seed(config_.seed, {kTagGradEval, p, c}));
      per_client.push_back(concat_batches(scenes));
    }
    grad_eval_.push_back(std::move(per_client));
  }
}

ServerState Experiment::initial_state() const {
  return ServerState::initial(model_.initial_params(), config_.effective_beta());
}

std::vector<ClientShard> Experiment::client_shards(std::size_t round) const {
  const PhaseParams& phase = phase_at(schedule_, round);
  const auto pool = generate_scenes(config_.scenes, phase, config_.clients * config_.images_per_client,
                                    0, derive_seed(config_.seed, {kTagTrainPool, round}));
  return partition(pool, config_.clients, config_.partition_alpha, config_.scenes.class_count,
                   derive_seed(config_.seed, {kTagPartition, round}));
}

MetricBundle Experiment::evaluate_on_phase(const ParamVector& params, std::size_t phase) const {
  ConfusionMatrix cm(config_.scenes.class_count);
  for (const auto& scene : eval_sets_.at(phase)) {
    const auto predicted = model_.predict(params, scene.to_batch());
    cm.add_image(predicted, scene.labels);
  }
  return metric_bundle(cm);
}

Experiment::RoundOutcome Experiment::run_round(const ServerState& state, std::size_t round,
                                               bool evaluate) const {
  if (round != state.round + 1) {
    throw Error(ErrorKind::Range, "run_round: expected round " + std::to_string(state.round + 1) +
                                      ", got " + std::to_string(round));
  }
  const auto started = std::chrono::steady_clock::now();
  const std::size_t phase = phase_index_at(schedule_, round);
  const auto shards = client_shards(round);
  const LocalTrainSpec spec = config_.local_spec();

  // Every client starts from the distributed EMA model of the previous round.
  auto train_client = [&](std::size_t c) {
    std::vector<Batch> images;
    images.reserve(shards[c].scenes.size());
    for (const auto& s : shards[c].scenes) images.push_back(s.to_batch());
    try {
      return local_train(model_, state.ema, images, spec, derive_seed(config_.seed, {kTagShuffle, round, c}));
    } catch (const Error& e) {
      throw Error(e.kind(), "round " + std::to_string(round) + ", client " + std::to_string(c) + ": " + e.what());
    }
  };

  std::vector<LocalTrainReport> reports;
  reports.reserve(config_.clients);
  if (config_.parallel_clients && config_.clients > 1) {
    std::vector<std::future<LocalTrainReport>> pending;
    for (std::size_t c = 0; c < config_.clients; ++c) pending.push_back(std::async(std::launch::async, train_client, c));
    for (auto& f : pending) reports.push_back(f.get());
  } else {
    for (std::size_t c = 0; c < config_.clients; ++c) reports.push_back(train_client(c));
  }

  std::vector<std::size_t> sizes;
  std::vector<ParamVector> models;
  double objective_total = 0.0;
  for (std::size_t c = 0; c < config_.clients; ++c) {
    sizes.push_back(shards[c].scenes.size());
    models.push_back(reports[c].final_params);
    objective_total += reports[c].mean_objective();
  }

  RoundOutcome out{state, {}, {}, std::move(reports)};
  out.aggregated = out.state.fuse(models, data_size_weights(sizes));

  RoundRecord& rec = out.record;
  rec.round = round;
  rec.phase = phase;
  rec.mean_objective = objective_total / static_cast<double>(config_.clients);
  rec.weights = out.state.weights;
  rec.grad_norm_sq = grad_norm_estimate(model_, out.state.ema, grad_eval_[phase], rec.weights);
  rec.evaluated = evaluate;
  if (evaluate) {
    for (std::size_t p = 0; p <= phase; ++p) {
      rec.ema_phase_metrics.push_back(evaluate_on_phase(out.state.ema, p));
      rec.aggregated_phase_metrics.push_back(config_.effective_beta() == 0.0 ? rec.ema_phase_metrics.back()
                                                                             : evaluate_on_phase(out.aggregated, p));
    }
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  ExperimentReport report;
  report.config = config;
  try {
    Experiment experiment(config);
    ServerState state = experiment.initial_state();
    report.initial_model = state.ema;
    for (std::size_t r = 1; r <= config.rounds; ++r) {
      const bool phase_start = phase_index_at(experiment.schedule(), r) !=
                               (r == 1 ? std::size_t(-1) : phase_index_at(experiment.schedule(), r - 1));
      const bool evaluate = phase_start || r == config.rounds || r % config.eval_every == 0;
      auto outcome = experiment.run_round(state, r, evaluate);
      if (!evaluate) {
        const RoundRecord& last = report.records.back();
        outcome.record.ema_phase_metrics = last.ema_phase_metrics;
        outcome.record.aggregated_phase_metrics = last.aggregated_phase_metrics;
      }
      state = std::move(outcome.state);
      report.aggregated_models.push_back(std::move(outcome.aggregated));
      report.ema_models.push_back(state.ema);
      report.records.push_back(std::move(outcome.record));
    }
    report.forgetting = forgetting_from_records(report.records);
    if (report.records.size() >= 10) report.convergence = convergence_summary(report.records);
  } catch (const std::exception& e) {
    report.error = e.what();
  }
  return report;
}

}  // namespace fedema
