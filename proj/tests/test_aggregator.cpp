#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fedema/aggregator.hpp"

using namespace fedema;

namespace {

ParamVector random_vector(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n(0.0, 1.0);
  ParamVector v(d);
  for (double& x : v.view()) x = n(rng);
  return v;
}

}  // namespace

TEST_CASE("aggregate examples") {
  const std::vector<ParamVector> same{{1, 2}, {1, 2}, {1, 2}};
  const std::vector<double> thirds{0.25, 0.25, 0.5};
  CHECK(aggregate(same, thirds) == ParamVector{1, 2});

  const std::vector<ParamVector> two{{4}, {8}};
  const std::vector<double> w{0.25, 0.75};
  CHECK(aggregate(two, w) == ParamVector{7});

  const std::vector<ParamVector> one{{3, -1}};
  const std::vector<double> unit{1.0};
  CHECK(aggregate(one, unit) == ParamVector{3, -1});
}

TEST_CASE("aggregate validates weights and lengths") {
  const std::vector<ParamVector> two{{4}, {8}};
  const std::vector<double> bad_sum{0.5, 0.6};
  try {
    aggregate(two, bad_sum);
    FAIL("expected invalid weights");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidWeights);
  }
  const std::vector<double> negative{1.5, -0.5};
  CHECK_THROWS_AS(aggregate(two, negative), Error);
  const std::vector<ParamVector> ragged{{4}, {8, 1}};
  const std::vector<double> halves{0.5, 0.5};
  try {
    aggregate(ragged, halves);
    FAIL("expected dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dimension);
  }
}

TEST_CASE("aggregate is permutation invariant") {
  std::mt19937_64 rng(4);
  std::vector<ParamVector> models;
  for (int c = 0; c < 5; ++c) models.push_back(random_vector(rng, 16));
  const std::vector<std::size_t> sizes{3, 9, 1, 7, 4};
  const auto weights = data_size_weights(sizes);
  const ParamVector reference = aggregate(models, weights);
  std::vector<std::size_t> order{0, 1, 2, 3, 4};
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<ParamVector> m;
    std::vector<double> w;
    for (auto i : order) {
      m.push_back(models[i]);
      w.push_back(weights[i]);
    }
    CHECK(max_relative_error(aggregate(m, w), reference, 1e-12) < 1e-13);
  }
}

TEST_CASE("data size weights") {
  const std::vector<std::size_t> sizes{10, 30};
  const auto w = data_size_weights(sizes);
  CHECK(w[0] == 0.25);
  CHECK(w[1] == 0.75);
  const std::vector<std::size_t> empty{0, 0};
  CHECK_THROWS_AS(data_size_weights(empty), Error);
}

TEST_CASE("beta from window") {
  CHECK(beta_from_window(5) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(beta_from_window(3) == 0.5);
  CHECK(beta_from_window(1999) == doctest::Approx(0.001).epsilon(1e-15));
  for (long long n : {1LL, 0LL, -4LL}) {
    try {
      beta_from_window(n);
      FAIL("expected invalid config");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidConfig);
    }
  }
  for (long long n = 2; n < 200; ++n) {
    const double b = beta_from_window(n);
    CHECK(b > 0.0);
    CHECK(b < 1.0);
  }
}

TEST_CASE("ema update examples") {
  const ParamVector prev{0, 0}, agg{3, 6};
  CHECK(ema_update(prev, agg, 0.0) == agg);
  const ParamVector fused = ema_update(prev, agg, 1.0 / 3.0);
  CHECK(fused[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(fused[1] == doctest::Approx(4.0).epsilon(1e-15));
  const ParamVector same{1.25, -7.5};
  for (double beta : {0.0, 0.2, 0.5, 0.99}) CHECK(ema_update(same, same, beta) == same);
  CHECK_THROWS_AS(ema_update(prev, agg, 1.0), Error);
  CHECK_THROWS_AS(ema_update(prev, ParamVector{1}, 0.5), Error);
}

TEST_CASE("ema output lies between its inputs") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> beta_dist(0.0, 0.999);
  for (int trial = 0; trial < 100; ++trial) {
    const ParamVector a = random_vector(rng, 32), b = random_vector(rng, 32);
    const ParamVector e = ema_update(a, b, beta_dist(rng));
    for (std::size_t i = 0; i < 32; ++i) {
      CHECK(e[i] >= std::min(a[i], b[i]) - 1e-15);
      CHECK(e[i] <= std::max(a[i], b[i]) + 1e-15);
    }
  }
}

TEST_CASE("momentum residual examples") {
  const ParamVector p{1.5, -2};
  CHECK(momentum_residual(p, p, 0.4) == ParamVector{0, 0});
  const ParamVector r = momentum_residual(ParamVector{0}, ParamVector{3}, 1.0 / 3.0);
  CHECK(r[0] == doctest::Approx(2.0).epsilon(1e-15));
  const ParamVector agg{4, 1};
  CHECK(momentum_residual(p, agg, 0.0) == axpy_combine(1.0, agg, -1.0, p));
}

TEST_CASE("momentum residual equals (1 - beta)(aggregated - prev)") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> beta_dist(0.0, 0.95);
  for (int trial = 0; trial < 200; ++trial) {
    const ParamVector prev = random_vector(rng, 64), agg = random_vector(rng, 64);
    const double beta = beta_dist(rng);
    const ParamVector lhs = momentum_residual(prev, agg, beta);
    const ParamVector rhs = axpy_combine(1.0 - beta, agg, -(1.0 - beta), prev);
    // Relative to the operand scale: one rounding of the EMA sum plus one of the difference.
    double scale = 0.0;
    for (std::size_t i = 0; i < 64; ++i) scale = std::max({scale, std::abs(prev[i]), std::abs(agg[i])});
    for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(lhs[i] - rhs[i]) <= 4 * 1.2e-16 * scale);
  }
}

TEST_CASE("recursive EMA equals its closed-form unrolling") {
  std::mt19937_64 rng(10);
  for (double beta : {0.0, 1.0 / 3.0, 0.5, 0.8}) {
    const ParamVector start = random_vector(rng, 100);
    std::vector<ParamVector> aggregates;
    ParamVector ema = start;
    for (int r = 1; r <= 10; ++r) {
      aggregates.push_back(random_vector(rng, 100));
      ema = ema_update(ema, aggregates.back(), beta);
      ParamVector closed(100);
      for (std::size_t i = 0; i < 100; ++i) {
        double v = std::pow(beta, r) * start[i];
        for (int k = 1; k <= r; ++k) v += (1.0 - beta) * std::pow(beta, r - k) * aggregates[k - 1][i];
        closed[i] = v;
      }
      for (std::size_t i = 0; i < 100; ++i) CHECK(std::abs(ema[i] - closed[i]) <= 1e-10);
    }
  }
}

TEST_CASE("server state starts from the initial model and advances rounds") {
  ServerState s = ServerState::initial(ParamVector{0, 0}, 1.0 / 3.0);
  CHECK(s.round == 0);
  const std::vector<ParamVector> models{{3, 6}, {3, 6}};
  const ParamVector agg = s.fuse(models, {0.5, 0.5});
  CHECK(agg == ParamVector{3, 6});
  CHECK(s.round == 1);
  CHECK(s.ema[0] == doctest::Approx(2.0));
  CHECK_THROWS_AS(ServerState::initial(ParamVector{0}, 1.0), Error);
}
