#include "fedema/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "fedema/seeding.hpp"

namespace fedema {

void ModelConfig::validate() const {
  if (feature_dim < 1 || hidden_dim < 1 || class_count < 2) {
    throw Error(ErrorKind::InvalidConfig,
                "model config needs feature_dim >= 1, hidden_dim >= 1, class_count >= 2");
  }
}

void Batch::append(const Batch& other) {
  if (feature_dim == 0) feature_dim = other.feature_dim;
  if (other.feature_dim != feature_dim) throw Error(ErrorKind::Dimension, "Batch::append: feature dim mismatch");
  features.insert(features.end(), other.features.begin(), other.features.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  image_ids.insert(image_ids.end(), other.image_ids.begin(), other.image_ids.end());
}

void Batch::validate(std::size_t class_count) const {
  if (labels.empty()) throw Error(ErrorKind::InvalidInput, "batch is empty");
  if (features.size() != labels.size() * feature_dim) {
    throw Error(ErrorKind::Dimension, "batch feature array does not match pixel count");
  }
  for (auto y : labels) {
    if (y >= class_count) throw Error(ErrorKind::InvalidLabel, "label " + std::to_string(y) + " out of range");
  }
}

void Regularizer::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorKind::InvalidConfig, "regularization coefficient must be finite and >= 0");
  }
}

SegNet::SegNet(ModelConfig config) : config_(config) { config_.validate(); }

ParamVector SegNet::initial_params() const {
  const auto [F, H, K, seed] = config_;
  ParamVector p(param_count());
  std::mt19937_64 rng(derive_seed(seed, {kTagInit}));
  const double limit1 = std::sqrt(6.0 / static_cast<double>(F + H));
  const double limit2 = std::sqrt(6.0 / static_cast<double>(H + K));
  std::uniform_real_distribution<double> u1(-limit1, limit1);
  std::uniform_real_distribution<double> u2(-limit2, limit2);
  std::size_t at = 0;
  for (std::size_t i = 0; i < F * H; ++i) p[at++] = u1(rng);
  at += H;
  for (std::size_t i = 0; i < H * K; ++i) p[at++] = u2(rng);
  return p;
}

void SegNet::check(const ParamVector& params, const Batch& batch) const {
  if (params.size() != param_count()) {
    throw Error(ErrorKind::Dimension, "params have length " + std::to_string(params.size()) +
                                          ", model expects " + std::to_string(param_count()));
  }
  if (batch.feature_dim != config_.feature_dim) {
    throw Error(ErrorKind::Dimension, "batch feature dim does not match model");
  }
  batch.validate(config_.class_count);
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

struct Layers {
  ConstMatrixMap w1;  // hidden x features
  ConstVectorMap b1;
  ConstMatrixMap w2;  // classes x hidden
  ConstVectorMap b2;
};

Layers split(const ParamVector& p, const ModelConfig& c) {
  const double* base = p.view().data();
  const auto F = static_cast<Eigen::Index>(c.feature_dim), H = static_cast<Eigen::Index>(c.hidden_dim),
             K = static_cast<Eigen::Index>(c.class_count);
  return {ConstMatrixMap(base, H, F), ConstVectorMap(base + F * H, H),
          ConstMatrixMap(base + F * H + H, K, H), ConstVectorMap(base + F * H + H + H * K, K)};
}

struct Activations {
  RowMatrix hidden;  // pixels x hidden, after tanh
  RowMatrix probs;   // pixels x classes, floored at kProbClamp
};

Activations run_forward(const Layers& net, const Batch& batch) {
  const auto n = static_cast<Eigen::Index>(batch.pixel_count());
  const ConstMatrixMap x(batch.features.data(), n, static_cast<Eigen::Index>(batch.feature_dim));
  Activations a;
  a.hidden = ((x * net.w1.transpose()).rowwise() + net.b1.transpose()).unaryExpr([](double v) { return std::tanh(v); });
  RowMatrix logits = (a.hidden * net.w2.transpose()).rowwise() + net.b2.transpose();
  a.probs.resize(n, logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    softmax_into(std::span<const double>(logits.row(i).data(), static_cast<std::size_t>(logits.cols())),
                 std::span<double>(a.probs.row(i).data(), static_cast<std::size_t>(logits.cols())));
  }
  return a;
}

}  // namespace

ProbTable SegNet::forward(const ParamVector& params, const Batch& batch) const {
  check(params, batch);
  const Activations a = run_forward(split(params, config_), batch);
  return ProbTable{config_.class_count, std::vector<double>(a.probs.data(), a.probs.data() + a.probs.size())};
}

std::vector<std::uint32_t> SegNet::predict(const ParamVector& params, const Batch& batch) const {
  const ProbTable probs = forward(params, batch);
  std::vector<std::uint32_t> out(probs.pixel_count());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto row = probs.row(i);
    out[i] = static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double cross_entropy(const ProbTable& probs, std::span<const std::uint32_t> labels) {
  if (probs.pixel_count() != labels.size()) {
    throw Error(ErrorKind::Dimension, "cross_entropy: probability and label counts differ");
  }
  if (labels.empty()) throw Error(ErrorKind::InvalidInput, "cross_entropy: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) acc -= clamped_log(probs.row(i)[labels[i]]);
  return acc / static_cast<double>(labels.size());
}

double negative_entropy(const ProbTable& probs) {
  const std::size_t n = probs.pixel_count();
  if (n == 0) throw Error(ErrorKind::InvalidInput, "negative_entropy: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (double p : probs.row(i)) acc += p * clamped_log(p);
  }
  return acc / static_cast<double>(n);
}

double SegNet::objective(const ParamVector& params, const Batch& batch, const Regularizer& reg) const {
  reg.validate();
  const ProbTable probs = forward(params, batch);
  const double ce = cross_entropy(probs, batch.labels);
  if (reg.lambda == 0.0) return ce;
  return ce + sign_value(reg.sign) * reg.lambda * negative_entropy(probs);
}

ParamVector SegNet::backward(const ParamVector& params, const Batch& batch, const Regularizer& reg) const {
  return evaluate(params, batch, reg).gradient;
}

SegNet::ValueAndGradient SegNet::evaluate(const ParamVector& params, const Batch& batch,
                                          const Regularizer& reg) const {
  reg.validate();
  check(params, batch);
  const auto F = static_cast<Eigen::Index>(config_.feature_dim), H = static_cast<Eigen::Index>(config_.hidden_dim),
             K = static_cast<Eigen::Index>(config_.class_count);
  const std::size_t n = batch.pixel_count();
  const Layers net = split(params, config_);
  const Activations a = run_forward(net, batch);

  const double inv_n = 1.0 / static_cast<double>(n);
  const double entropy_scale = sign_value(reg.sign) * reg.lambda;
  double ce = 0.0, neg_entropy = 0.0;

  // dz = (p - onehot(y) + s*lambda * p_j (log p_j - sum_k p_k log p_k)) / n
  RowMatrix dz(static_cast<Eigen::Index>(n), K);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    double plogp = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) plogp += a.probs(row, k) * clamped_log(a.probs(row, k));
    ce -= clamped_log(a.probs(row, batch.labels[i]));
    neg_entropy += plogp;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double p = a.probs(row, k);
      double d = p - (static_cast<std::uint32_t>(k) == batch.labels[i] ? 1.0 : 0.0);
      if (entropy_scale != 0.0) d += entropy_scale * p * (clamped_log(p) - plogp);
      dz(row, k) = d * inv_n;
    }
  }

  ParamVector grad(param_count());
  double* g = grad.view().data();
  MatrixMap gw1(g, H, F);
  Eigen::Map<Eigen::VectorXd> gb1(g + F * H, H);
  MatrixMap gw2(g + F * H + H, K, H);
  Eigen::Map<Eigen::VectorXd> gb2(g + F * H + H + H * K, K);

  const ConstMatrixMap x(batch.features.data(), static_cast<Eigen::Index>(n), F);
  gw2.noalias() = dz.transpose() * a.hidden;
  gb2 = dz.colwise().sum().transpose();
  const RowMatrix da = ((dz * net.w2).array() * (1.0 - a.hidden.array().square())).matrix();
  gw1.noalias() = da.transpose() * x;
  gb1 = da.colwise().sum().transpose();

  const double count = static_cast<double>(n);
  double value = ce / count;
  if (reg.lambda != 0.0) value = value + sign_value(reg.sign) * reg.lambda * (neg_entropy / count);
  return {value, std::move(grad)};
}

}  // namespace fedema
