#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedema/segnet.hpp"

namespace fedema {

/// Adam with decoupled weight decay.
struct OptimizerConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;

  void validate() const;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct OptimizerState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;

  static OptimizerState zeros(std::size_t dim) {
    return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0), 0};
  }
};

/// One bias-corrected Adam update; weight decay (lr * wd * params) is applied to the
/// post-step parameters. Mutates state and params in place.
void adam_step(const OptimizerConfig& config, OptimizerState& state, ParamVector& params,
               const ParamVector& grad);

/// What a vehicle minimizes locally: CE + sign*lambda*negH + (mu/2)*||w - anchor||^2.
/// The anchor is the model the round started from.
struct LocalObjective {
  Regularizer entropy;
  double proximal_mu = 0.0;

  void validate() const;
};

struct LocalTrainSpec {
  std::size_t steps = 5;          // tau
  std::size_t batch_images = 8;
  OptimizerConfig optimizer;
  LocalObjective objective;

  void validate() const;
};

struct LocalTrainReport {
  ParamVector final_params;
  std::vector<double> step_objectives;      // objective before each step
  std::vector<double> step_grad_norms_sq;   // ||grad||^2 at each step
  std::size_t steps_executed = 0;

  double mean_objective() const;
  friend bool operator==(const LocalTrainReport&, const LocalTrainReport&) = default;
};

/// Runs `spec.steps` Adam steps from `start`. The shard (one Batch per image) is
/// shuffled once with `seed` and consumed cyclically, batch_images images per step.
/// Optimizer moments start at zero.
LocalTrainReport local_train(const SegNet& model, const ParamVector& start,
                             std::span<const Batch> shard_images, const LocalTrainSpec& spec,
                             std::uint64_t seed);

double fedprox_objective(const SegNet& model, const ParamVector& params, const Batch& batch,
                         const ParamVector& anchor, double mu);

/// Gradient of (mu/2)*||params - anchor||^2.
ParamVector proximal_gradient(const ParamVector& params, const ParamVector& anchor, double mu);

}  // namespace fedema
