#include "fedema/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fedema {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid input";
    case ErrorKind::Dimension: return "dimension error";
    case ErrorKind::OracleFailure: return "oracle failure";
    case ErrorKind::InvalidConfig: return "invalid config";
    case ErrorKind::OptimizerFailure: return "optimizer failure";
    case ErrorKind::Range: return "range error";
    case ErrorKind::InvalidWeights: return "invalid weights";
    case ErrorKind::InvalidLabel: return "invalid label";
    case ErrorKind::NotApplicable: return "not applicable";
    case ErrorKind::Format: return "format error";
  }
  return "unknown";
}

bool ParamVector::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void softmax_into(std::span<const double> logits, std::span<double> out) {
  double top = logits[0];
  for (double z : logits) top = std::max(top, z);
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - top);
    total += out[k];
  }
  for (double& p : out) p = std::max(p / total, kProbClamp);
}

ProbVector softmax(std::span<const double> logits) {
  if (logits.size() < 2) {
    throw Error(ErrorKind::InvalidInput, "softmax needs at least two logits");
  }
  for (double z : logits) {
    if (!std::isfinite(z)) throw Error(ErrorKind::InvalidInput, "softmax: non-finite logit");
  }
  std::vector<double> probs(logits.size());
  softmax_into(logits, probs);
  return ProbVector(std::move(probs));
}

double clamped_log(double p) noexcept { return std::log(std::max(p, kProbClamp)); }

ParamVector axpy_combine(double a, const ParamVector& x, double b, const ParamVector& y) {
  if (x.size() != y.size()) {
    throw Error(ErrorKind::Dimension, "axpy_combine: lengths " + std::to_string(x.size()) +
                                          " and " + std::to_string(y.size()) + " differ");
  }
  ParamVector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
  if (!out.all_finite()) throw Error(ErrorKind::InvalidInput, "axpy_combine: non-finite result");
  return out;
}

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::Dimension, "dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

double squared_norm(std::span<const double> x) { return dot(x, x); }

ParamVector finite_diff_gradient(const ScalarFunction& f, const ParamVector& at, double h) {
  if (!(h > 0.0)) throw Error(ErrorKind::InvalidInput, "finite_diff_gradient: h must be positive");
  ParamVector grad(at.size());
  ParamVector probe = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    probe[i] = at[i] + h;
    const double up = f(probe);
    probe[i] = at[i] - h;
    const double down = f(probe);
    probe[i] = at[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorKind::OracleFailure,
                  "finite_diff_gradient: non-finite value at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double max_relative_error(const ParamVector& a, const ParamVector& b, double floor) {
  if (a.size() != b.size()) throw Error(ErrorKind::Dimension, "max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace fedema
