#include "fedema/vehicle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fedema {

void OptimizerConfig::validate() const {
  const bool ok = learning_rate > 0.0 && beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 &&
                  beta2 < 1.0 && epsilon > 0.0 && weight_decay >= 0.0;
  if (!ok) throw Error(ErrorKind::InvalidConfig, "optimizer hyperparameters out of range");
}

void LocalObjective::validate() const {
  entropy.validate();
  if (!(proximal_mu >= 0.0) || !std::isfinite(proximal_mu)) {
    throw Error(ErrorKind::InvalidConfig, "proximal coefficient must be finite and >= 0");
  }
}

void LocalTrainSpec::validate() const {
  if (batch_images == 0) throw Error(ErrorKind::InvalidConfig, "batch_images must be >= 1");
  optimizer.validate();
  objective.validate();
}

void adam_step(const OptimizerConfig& c, OptimizerState& state, ParamVector& params,
               const ParamVector& grad) {
  const std::size_t d = params.size();
  if (grad.size() != d || state.first_moment.size() != d || state.second_moment.size() != d) {
    throw Error(ErrorKind::Dimension, "adam_step: parameter, gradient and moment lengths differ");
  }
  if (!grad.all_finite()) throw Error(ErrorKind::OptimizerFailure, "adam_step: non-finite gradient");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < d; ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * grad[i];
    v = c.beta2 * v + (1.0 - c.beta2) * grad[i] * grad[i];
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    double w = params[i] - c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    w -= c.learning_rate * c.weight_decay * w;
    params[i] = w;
  }
  if (!params.all_finite()) throw Error(ErrorKind::OptimizerFailure, "adam_step: parameters diverged");
}

double LocalTrainReport::mean_objective() const {
  if (step_objectives.empty()) return 0.0;
  return std::accumulate(step_objectives.begin(), step_objectives.end(), 0.0) /
         static_cast<double>(step_objectives.size());
}

ParamVector proximal_gradient(const ParamVector& params, const ParamVector& anchor, double mu) {
  return axpy_combine(mu, params, -mu, anchor);
}

double fedprox_objective(const SegNet& model, const ParamVector& params, const Batch& batch,
                         const ParamVector& anchor, double mu) {
  if (!(mu >= 0.0)) throw Error(ErrorKind::InvalidConfig, "fedprox: mu must be >= 0");
  if (anchor.size() != params.size()) throw Error(ErrorKind::Dimension, "fedprox: anchor length mismatch");
  const double ce = model.objective(params, batch, Regularizer{});
  if (mu == 0.0) return ce;
  const ParamVector diff = axpy_combine(1.0, params, -1.0, anchor);
  return ce + 0.5 * mu * squared_norm(diff.view());
}

LocalTrainReport local_train(const SegNet& model, const ParamVector& start,
                             std::span<const Batch> shard_images, const LocalTrainSpec& spec,
                             std::uint64_t seed) {
  spec.validate();
  if (shard_images.empty()) throw Error(ErrorKind::InvalidConfig, "local_train: empty shard");
  if (start.size() != model.param_count()) throw Error(ErrorKind::Dimension, "local_train: start length mismatch");

  std::vector<std::size_t> order(shard_images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t per_step = std::min(spec.batch_images, order.size());
  const double mu = spec.objective.proximal_mu;

  LocalTrainReport report{start, {}, {}, 0};
  report.step_objectives.reserve(spec.steps);
  report.step_grad_norms_sq.reserve(spec.steps);
  OptimizerState state = OptimizerState::zeros(start.size());
  std::size_t cursor = 0;

  for (std::size_t step = 0; step < spec.steps; ++step) {
    Batch batch;
    for (std::size_t j = 0; j < per_step; ++j) {
      batch.append(shard_images[order[cursor]]);
      cursor = (cursor + 1) % order.size();
    }
    auto [value, grad] = model.evaluate(report.final_params, batch, spec.objective.entropy);
    if (mu > 0.0) {
      const ParamVector diff = axpy_combine(1.0, report.final_params, -1.0, start);
      value += 0.5 * mu * squared_norm(diff.view());
      grad = axpy_combine(1.0, grad, mu, diff);
    }
    report.step_objectives.push_back(value);
    report.step_grad_norms_sq.push_back(squared_norm(grad.view()));
    adam_step(spec.optimizer, state, report.final_params, grad);
    ++report.steps_executed;
  }
  return report;
}

}  // namespace fedema
