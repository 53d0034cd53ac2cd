#include <doctest.h>

#include <cmath>
#include <random>

#include "fedema/orchestrator.hpp"
#include "fedema/seeding.hpp"

using namespace fedema;

namespace {

ExperimentConfig small_config(Algorithm alg = Algorithm::FedEMA) {
  ExperimentConfig c;
  c.algorithm = alg;
  c.clients = 3;
  c.rounds = 6;
  c.local_steps = 3;
  c.batch_images = 4;
  c.hidden_dim = 8;
  c.images_per_client = 6;
  c.eval_images = 4;
  c.seed = 13;
  c.optimizer.learning_rate = 1e-2;
  if (alg == Algorithm::FedEMA) c.lambda = 0.002;
  return c;
}

}  // namespace

TEST_CASE("algorithm names round trip") {
  for (auto a : {Algorithm::FedEMA, Algorithm::FedAvg, Algorithm::FedProx}) CHECK(parse_algorithm(to_string(a)) == a);
  CHECK_THROWS_AS(parse_algorithm("fedsgd"), Error);
}

TEST_CASE("config validation") {
  CHECK_NOTHROW(small_config().validate());
  auto c = small_config(Algorithm::FedAvg);
  c.lambda = 0.1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.mu = 0.1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.window = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c.beta = 0.5;
  CHECK_NOTHROW(c.validate());
  c.beta = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.rounds = 2;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(small_config(Algorithm::FedAvg).effective_beta() == 0.0);
  CHECK(small_config().effective_beta() == doctest::Approx(1.0 / 3.0));
  const auto prox = as_algorithm(small_config(), Algorithm::FedProx);
  CHECK(prox.lambda == 0.0);
  CHECK_NOTHROW(prox.validate());
}

TEST_CASE("kendall tau examples") {
  const std::vector<double> up{1, 2, 3, 4}, down{4, 3, 2, 1}, flat{2, 2, 2};
  CHECK(kendall_tau(up) == 1.0);
  CHECK(kendall_tau(down) == -1.0);
  CHECK(kendall_tau(flat) == 0.0);
  const std::vector<double> mixed{1, 3, 2};
  CHECK(kendall_tau(mixed) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("convergence summary") {
  std::vector<double> decreasing;
  for (int i = 0; i < 20; ++i) decreasing.push_back(20.0 - i);
  const auto s = convergence_summary(decreasing);
  CHECK(s.quarter_round == 5);
  CHECK(s.running_mean_at_quarter == doctest::Approx(18.0));
  CHECK(s.running_mean_at_end == doctest::Approx(10.5));
  CHECK(s.improved);
  CHECK(s.kendall_tau == -1.0);
  const std::vector<double> constant(12, 3.0);
  CHECK_FALSE(convergence_summary(constant).improved);
  const std::vector<double> short_series(9, 1.0);
  CHECK_THROWS_AS(convergence_summary(short_series), Error);
}

TEST_CASE("rounds to threshold") {
  std::vector<RoundRecord> recs(4);
  const double objs[] = {2.0, 1.5, 0.9, 1.2};
  for (std::size_t i = 0; i < 4; ++i) {
    recs[i].round = i + 1;
    recs[i].mean_objective = objs[i];
  }
  CHECK(rounds_to_threshold(recs, 1.0) == 3);
  CHECK(rounds_to_threshold(recs, 2.0) == 1);
  CHECK(rounds_to_threshold(recs, 0.5) == 5);
}

TEST_CASE("grad norm estimate matches a direct weighted sum") {
  const SegNet net(ModelConfig{3, 5, 4, 2});
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  std::uniform_int_distribution<std::uint32_t> lab(0, 3);
  std::vector<Batch> batches(3);
  for (auto& b : batches) {
    b.feature_dim = 3;
    for (int i = 0; i < 7; ++i) {
      for (int f = 0; f < 3; ++f) b.features.push_back(n(rng));
      b.labels.push_back(lab(rng));
    }
  }
  ParamVector w(net.param_count());
  for (double& x : w.view()) x = 0.5 * n(rng);
  const std::vector<double> weights{0.2, 0.5, 0.3};
  std::vector<double> direct(w.size(), 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto g = net.backward(w, batches[c], Regularizer{});
    for (std::size_t i = 0; i < g.size(); ++i) direct[i] += weights[c] * g[i];
  }
  double expect = 0.0;
  for (double d : direct) expect += d * d;
  const double got = grad_norm_estimate(net, w, batches, weights);
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));

  const std::vector<Batch> permuted{batches[2], batches[0], batches[1]};
  const std::vector<double> pw{0.3, 0.2, 0.5};
  CHECK(grad_norm_estimate(net, w, permuted, pw) == doctest::Approx(got).epsilon(1e-12));
}

TEST_CASE("single-client rounds compose local training, aggregation and EMA") {
  auto cfg = small_config();
  cfg.clients = 1;
  const Experiment exp(cfg);
  const double beta = cfg.effective_beta();
  ServerState state = exp.initial_state();
  ParamVector ema = state.ema;
  for (std::size_t r = 1; r <= 4; ++r) {
    const auto shards = exp.client_shards(r);
    REQUIRE(shards.size() == 1);
    std::vector<Batch> images;
    for (const auto& s : shards[0].scenes) images.push_back(s.to_batch());
    const auto local = local_train(exp.model(), ema, images, cfg.local_spec(),
                                   derive_seed(cfg.seed, {kTagShuffle, r, 0}));
    ParamVector expected(ema.size());
    for (std::size_t i = 0; i < ema.size(); ++i) expected[i] = beta * ema[i] + (1 - beta) * local.final_params[i];
    auto out = exp.run_round(state, r, false);
    CHECK(out.aggregated == local.final_params);
    CHECK(max_relative_error(out.state.ema, expected, 1e-12) <= 1e-15);
    state = out.state;
    ema = state.ema;
  }
}

TEST_CASE("clients start each round from the previous EMA model") {
  const auto cfg = small_config();
  const Experiment exp(cfg);
  ServerState state = exp.initial_state();
  state = exp.run_round(state, 1, false).state;
  const auto shards = exp.client_shards(2);
  const auto out = exp.run_round(state, 2, false);
  for (std::size_t c = 0; c < cfg.clients; ++c) {
    std::vector<Batch> images;
    for (const auto& s : shards[c].scenes) images.push_back(s.to_batch());
    const auto local = local_train(exp.model(), state.ema, images, cfg.local_spec(),
                                   derive_seed(cfg.seed, {kTagShuffle, 2, c}));
    CHECK(local == out.client_reports[c]);
  }
  CHECK_THROWS_AS(exp.run_round(state, 4, false), Error);
}

TEST_CASE("fedema with beta 0 and lambda 0 reproduces fedavg") {
  auto ema = small_config();
  ema.beta = 0.0;
  ema.lambda = 0.0;
  const auto avg = as_algorithm(ema, Algorithm::FedAvg);
  const auto a = run_experiment(ema), b = run_experiment(avg);
  REQUIRE_FALSE(a.error);
  REQUIRE_FALSE(b.error);
  CHECK(a.ema_models == b.ema_models);
  CHECK(a.aggregated_models == b.aggregated_models);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].mean_objective == b.records[i].mean_objective);
    CHECK(a.records[i].ema_current().miou == b.records[i].ema_current().miou);
  }
}

TEST_CASE("experiment runs are deterministic and thread-count independent") {
  auto cfg = small_config();
  cfg.parallel_clients = true;
  const auto a = run_experiment(cfg), b = run_experiment(cfg);
  cfg.parallel_clients = false;
  const auto c = run_experiment(cfg);
  REQUIRE_FALSE(a.error);
  CHECK(a.ema_models == b.ema_models);
  CHECK(a.ema_models == c.ema_models);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].grad_norm_sq == c.records[i].grad_norm_sq);
    CHECK(a.records[i].mean_objective == c.records[i].mean_objective);
  }
  cfg.seed = 14;
  CHECK(run_experiment(cfg).ema_models != a.ema_models);
}

TEST_CASE("EMA trajectory equals its unrolled form over the aggregated models") {
  const auto cfg = small_config();
  const auto rep = run_experiment(cfg);
  REQUIRE_FALSE(rep.error);
  const double beta = cfg.effective_beta();
  for (std::size_t r = 1; r <= rep.ema_models.size(); ++r) {
    for (std::size_t i = 0; i < rep.initial_model.size(); ++i) {
      double v = std::pow(beta, static_cast<double>(r)) * rep.initial_model[i];
      for (std::size_t k = 1; k <= r; ++k)
        v += (1 - beta) * std::pow(beta, static_cast<double>(r - k)) * rep.aggregated_models[k - 1][i];
      CHECK(std::abs(v - rep.ema_models[r - 1][i]) <= 1e-8);
    }
  }
}

TEST_CASE("report records") {
  auto cfg = small_config();
  cfg.rounds = 12;
  cfg.eval_every = 4;
  const auto rep = run_experiment(cfg);
  REQUIRE_FALSE(rep.error);
  REQUIRE(rep.records.size() == 12);
  // Phases start at rounds 1, 5 and 9; those and multiples of eval_every are evaluated.
  for (const auto& r : rep.records) {
    const bool expect = r.round == 1 || r.round % 4 == 0 || r.round == 5 || r.round == 9 || r.round == 12;
    CHECK(r.evaluated == expect);
    CHECK(r.ema_phase_metrics.size() == r.phase + 1);
    CHECK(std::isfinite(r.mean_objective));
    CHECK(r.grad_norm_sq >= 0.0);
    double total = 0.0;
    for (double w : r.weights) total += w;
    CHECK(total == doctest::Approx(1.0));
  }
  CHECK(rep.records[4].phase == 1);
  CHECK(rep.records[0].historical_miou_mean() == rep.records[0].ema_current().miou);
  CHECK(rep.records[11].historical_miou_mean() ==
        doctest::Approx((rep.records[11].ema_phase_metrics[0].miou + rep.records[11].ema_phase_metrics[1].miou) / 2));
  REQUIRE(rep.forgetting);
  CHECK(*rep.forgetting >= 0.0);
  REQUIRE(rep.convergence);
  CHECK(rep.convergence->running_mean.size() == 12);
}

TEST_CASE("a failing run reports the error instead of throwing") {
  auto cfg = small_config();
  cfg.optimizer.learning_rate = -1.0;
  const auto rep = run_experiment(cfg);
  CHECK(rep.error);
  CHECK(rep.records.empty());
}
