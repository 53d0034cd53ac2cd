#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedema/numerics.hpp"

namespace fedema {

/// Two-layer per-pixel perceptron: features -> tanh hidden -> class logits.
///
/// Parameter layout (row-major, concatenated):
///   W1 [hidden x features] | b1 [hidden] | W2 [classes x hidden] | b2 [classes]
struct ModelConfig {
  std::size_t feature_dim = 3;
  std::size_t hidden_dim = 32;
  std::size_t class_count = 6;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t param_count() const noexcept {
    return feature_dim * hidden_dim + hidden_dim + hidden_dim * class_count + class_count;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Pixels with features stored row-major ([pixel][feature]).
struct Batch {
  std::size_t feature_dim = 0;
  std::vector<double> features;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint64_t> image_ids;

  std::size_t pixel_count() const noexcept { return labels.size(); }
  std::span<const double> pixel(std::size_t i) const {
    return std::span<const double>(features).subspan(i * feature_dim, feature_dim);
  }
  void append(const Batch& other);
  void validate(std::size_t class_count) const;
};

/// Per-pixel class probabilities, row-major ([pixel][class]).
struct ProbTable {
  std::size_t class_count = 0;
  std::vector<double> values;

  std::size_t pixel_count() const noexcept {
    return class_count == 0 ? 0 : values.size() / class_count;
  }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values).subspan(i * class_count, class_count);
  }
};

/// Which way the entropy term enters the objective: CE + sign * lambda * negH.
enum class EntropySign : int { ConfidencePenalty = 1, ConfidenceReward = -1 };

inline double sign_value(EntropySign s) { return static_cast<int>(s); }

struct Regularizer {
  double lambda = 0.0;
  EntropySign sign = EntropySign::ConfidencePenalty;

  void validate() const;
};

class SegNet {
 public:
  explicit SegNet(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t param_count() const noexcept { return config_.param_count(); }

  /// Glorot-uniform weights and zero biases drawn from config().seed.
  ParamVector initial_params() const;

  ProbTable forward(const ParamVector& params, const Batch& batch) const;
  std::vector<std::uint32_t> predict(const ParamVector& params, const Batch& batch) const;

  double objective(const ParamVector& params, const Batch& batch, const Regularizer& reg) const;

  /// Analytic gradient of objective().
  ParamVector backward(const ParamVector& params, const Batch& batch, const Regularizer& reg) const;

  struct ValueAndGradient {
    double value = 0.0;
    ParamVector gradient;
  };
  /// objective() and backward() from a single pass over the batch.
  ValueAndGradient evaluate(const ParamVector& params, const Batch& batch, const Regularizer& reg) const;

 private:
  void check(const ParamVector& params, const Batch& batch) const;

  ModelConfig config_;
};

/// Mean of -log p_label over pixels.
double cross_entropy(const ProbTable& probs, std::span<const std::uint32_t> labels);

/// Mean over pixels of sum_k p_k log p_k. Lies in [-ln K, 0].
double negative_entropy(const ProbTable& probs);

}  // namespace fedema
