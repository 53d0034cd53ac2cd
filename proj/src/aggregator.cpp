#include "fedema/aggregator.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace fedema {

ParamVector aggregate(std::span<const ParamVector> models, std::span<const double> weights) {
  if (models.empty()) throw Error(ErrorKind::InvalidInput, "aggregate: no models");
  if (models.size() != weights.size()) {
    throw Error(ErrorKind::InvalidWeights, "aggregate: " + std::to_string(models.size()) + " models but " +
                                               std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorKind::InvalidWeights, "aggregate: negative or non-finite weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidWeights, "aggregate: weights sum to " + std::to_string(total));
  }
  const std::size_t d = models.front().size();
  for (const auto& m : models) {
    if (m.size() != d) throw Error(ErrorKind::Dimension, "aggregate: model lengths differ");
  }
  ParamVector out(d);
  for (std::size_t c = 0; c < models.size(); ++c) {
    for (std::size_t i = 0; i < d; ++i) out[i] += weights[c] * models[c][i];
  }
  return out;
}

std::vector<double> data_size_weights(std::span<const std::size_t> shard_sizes) {
  const std::size_t total = std::accumulate(shard_sizes.begin(), shard_sizes.end(), std::size_t{0});
  if (total == 0) throw Error(ErrorKind::InvalidWeights, "data_size_weights: all shards empty");
  std::vector<double> w;
  w.reserve(shard_sizes.size());
  for (std::size_t s : shard_sizes) w.push_back(static_cast<double>(s) / static_cast<double>(total));
  return w;
}

double beta_from_window(long long window) {
  if (window < 2) {
    throw Error(ErrorKind::InvalidConfig,
                "window size must be >= 2 (N=" + std::to_string(window) + " gives beta >= 1)");
  }
  return 2.0 / (static_cast<double>(window) + 1.0);
}

void validate_beta(double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "EMA decay must lie in [0, 1), got " + std::to_string(beta));
  }
}

ParamVector ema_update(const ParamVector& prev, const ParamVector& aggregated, double beta) {
  validate_beta(beta);
  if (prev.size() != aggregated.size()) throw Error(ErrorKind::Dimension, "ema_update: length mismatch");
  return axpy_combine(beta, prev, 1.0 - beta, aggregated);
}

ParamVector momentum_residual(const ParamVector& prev, const ParamVector& aggregated, double beta) {
  const ParamVector next = ema_update(prev, aggregated, beta);
  return axpy_combine(1.0, next, -1.0, prev);
}

ServerState ServerState::initial(ParamVector initial_model, double beta) {
  validate_beta(beta);
  return ServerState{0, std::move(initial_model), beta, {}};
}

ParamVector ServerState::fuse(std::span<const ParamVector> client_models, std::vector<double> new_weights) {
  ParamVector aggregated = aggregate(client_models, new_weights);
  ema = ema_update(ema, aggregated, beta);
  weights = std::move(new_weights);
  ++round;
  return aggregated;
}

}  // namespace fedema
