#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedema/numerics.hpp"

namespace fedema {

/// Sum_c weights[c] * models[c]. Weights must be nonnegative and sum to 1 (1e-9).
ParamVector aggregate(std::span<const ParamVector> models, std::span<const double> weights);

/// |D_c| / |D| for each client.
std::vector<double> data_size_weights(std::span<const std::size_t> shard_sizes);

/// EMA decay from a window size: 2 / (N + 1). N must be >= 2.
double beta_from_window(long long window);

/// Throws unless 0 <= beta < 1.
void validate_beta(double beta);

/// beta * prev + (1 - beta) * aggregated.
ParamVector ema_update(const ParamVector& prev, const ParamVector& aggregated, double beta);

/// ema_update(prev, aggregated, beta) - prev, which equals (1 - beta) * (aggregated - prev).
ParamVector momentum_residual(const ParamVector& prev, const ParamVector& aggregated, double beta);

/// Server-side state carried between rounds.
struct ServerState {
  std::size_t round = 0;
  ParamVector ema;
  double beta = 0.0;
  std::vector<double> weights;

  /// Round-0 state: the EMA model is the shared initial model.
  static ServerState initial(ParamVector initial_model, double beta);

  /// Aggregates client models with `weights`, fuses into the EMA and advances the round.
  /// Returns the aggregated (pre-EMA) model.
  ParamVector fuse(std::span<const ParamVector> client_models, std::vector<double> weights);
};

}  // namespace fedema
