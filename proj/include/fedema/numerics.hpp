#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "fedema/error.hpp"

namespace fedema {

// Probabilities are floored at this value before any logarithm.
inline constexpr double kProbClamp = 1e-12;

/// Flat model parameter vector. The length is fixed at construction.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t size, double fill = 0.0) : values_(size, fill) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
  ParamVector(std::initializer_list<double> values) : values_(values) {}

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  std::span<const double> view() const noexcept { return values_; }
  std::span<double> view() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool all_finite() const noexcept;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

/// Probability distribution over K classes.
class ProbVector {
 public:
  explicit ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {}

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t k) const { return probs_[k]; }
  std::span<const double> view() const noexcept { return probs_; }

 private:
  std::vector<double> probs_;
};

/// Max-subtracted softmax, entries floored at kProbClamp. Needs K >= 2.
ProbVector softmax(std::span<const double> logits);

/// In-place variant used by the model hot loop; `out` must have logits.size().
void softmax_into(std::span<const double> logits, std::span<double> out);

double clamped_log(double p) noexcept;

/// a*x + b*y, elementwise.
ParamVector axpy_combine(double a, const ParamVector& x, double b, const ParamVector& y);

double dot(std::span<const double> x, std::span<const double> y);
double squared_norm(std::span<const double> x);

using ScalarFunction = std::function<double(const ParamVector&)>;

/// Central-difference gradient of f at `at`. Used as a test oracle.
ParamVector finite_diff_gradient(const ScalarFunction& f, const ParamVector& at, double h);

/// Largest |a_i - b_i| / max(|a_i|, |b_i|, floor) over all coordinates.
double max_relative_error(const ParamVector& a, const ParamVector& b, double floor = 1e-6);

}  // namespace fedema
