#include "fedema/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "fedema/seeding.hpp"

namespace fedema {

void SceneConfig::validate() const {
  if (width < 3 || height < 3) throw Error(ErrorKind::InvalidConfig, "scenes must be at least 3x3");
  if (feature_dim < 1 || class_count < 2) throw Error(ErrorKind::InvalidConfig, "scene feature/class dims invalid");
  if (!(noise_sigma >= 0.0) || !(mean_radius > 0.0) || !(min_separation >= 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "scene noise/radius/separation invalid");
  }
  if (phase_count < 1) throw Error(ErrorKind::InvalidConfig, "need at least one drift phase");
  if (!(prior_concentration > 0.0)) throw Error(ErrorKind::InvalidConfig, "prior concentration must be > 0");
}

void PhaseParams::validate(double separation) const {
  const std::size_t K = class_count();
  if (K < 2 || class_means.size() != K * feature_dim) {
    throw Error(ErrorKind::InvalidConfig, "phase means do not match class count");
  }
  const double total = std::accumulate(class_priors.begin(), class_priors.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorKind::InvalidConfig, "phase priors do not sum to 1");
  for (std::size_t a = 0; a < K; ++a) {
    for (std::size_t b = a + 1; b < K; ++b) {
      double d2 = 0.0;
      for (std::size_t f = 0; f < feature_dim; ++f) {
        const double diff = mean(a)[f] - mean(b)[f];
        d2 += diff * diff;
      }
      if (std::sqrt(d2) < separation) {
        throw Error(ErrorKind::InvalidConfig, "class means " + std::to_string(a) + " and " +
                                                  std::to_string(b) + " closer than separation");
      }
    }
  }
}

void DriftSchedule::validate() const {
  if (phases.empty() || phases.front().start_round != 1) {
    throw Error(ErrorKind::InvalidConfig, "drift schedule must start at round 1");
  }
  for (std::size_t i = 1; i < phases.size(); ++i) {
    if (phases[i].start_round <= phases[i - 1].start_round) {
      throw Error(ErrorKind::InvalidConfig, "drift phase starts must be strictly increasing");
    }
  }
  if (phases.back().start_round > total_rounds) {
    throw Error(ErrorKind::InvalidConfig, "drift phase starts after the last round");
  }
}

namespace {

std::vector<double> base_means(const SceneConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, {kTagPhase, 0xba5eULL}));
  std::uniform_real_distribution<double> u(-c.mean_radius, c.mean_radius);
  const std::size_t K = c.class_count, F = c.feature_dim;
  std::vector<double> means(K * F);
  for (std::size_t k = 0; k < K; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      for (std::size_t f = 0; f < F; ++f) means[k * F + f] = u(rng);
      placed = true;
      for (std::size_t j = 0; j < k && placed; ++j) {
        double d2 = 0.0;
        for (std::size_t f = 0; f < F; ++f) {
          const double diff = means[k * F + f] - means[j * F + f];
          d2 += diff * diff;
        }
        placed = std::sqrt(d2) >= c.min_separation;
      }
    }
    if (!placed) throw Error(ErrorKind::InvalidConfig, "cannot place class means with the requested separation");
  }
  return means;
}

std::vector<double> dirichlet(std::mt19937_64& rng, std::size_t n, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> out(n);
  double total = 0.0;
  for (double& v : out) {
    v = gamma(rng);
    total += v;
  }
  if (total <= 0.0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(n));
    return out;
  }
  for (double& v : out) v /= total;
  return out;
}

}  // namespace

PhaseParams make_phase(const SceneConfig& c, std::size_t index, std::uint64_t seed) {
  c.validate();
  const std::size_t K = c.class_count, F = c.feature_dim;
  PhaseParams phase;
  phase.phase_id = index;
  phase.feature_dim = F;
  phase.class_means = base_means(c, seed);

  const double angle = static_cast<double>(index) * c.drift_rotation_deg * std::numbers::pi / 180.0;
  const double shift = static_cast<double>(index) * c.drift_offset / std::sqrt(static_cast<double>(F));
  for (std::size_t k = 0; k < K; ++k) {
    double* m = &phase.class_means[k * F];
    if (F >= 2) {
      const double x = m[0], y = m[1];
      m[0] = std::cos(angle) * x - std::sin(angle) * y;
      m[1] = std::sin(angle) * x + std::cos(angle) * y;
    }
    for (std::size_t f = 0; f < F; ++f) m[f] += shift;
  }

  std::mt19937_64 rng(derive_seed(seed, {kTagPhase, index}));
  phase.class_priors = dirichlet(rng, K, c.prior_concentration);
  phase.geometry_seed = derive_seed(seed, {kTagScene, index});
  phase.validate(c.min_separation * (1.0 - 1e-12));
  return phase;
}

DriftSchedule make_schedule(const SceneConfig& c, std::size_t total_rounds, std::uint64_t seed) {
  if (total_rounds < c.phase_count) {
    throw Error(ErrorKind::InvalidConfig, "fewer rounds than drift phases");
  }
  DriftSchedule schedule;
  schedule.total_rounds = total_rounds;
  for (std::size_t p = 0; p < c.phase_count; ++p) {
    schedule.phases.push_back({1 + p * total_rounds / c.phase_count, make_phase(c, p, seed)});
  }
  schedule.validate();
  return schedule;
}

std::size_t phase_index_at(const DriftSchedule& schedule, std::size_t round) {
  if (round < 1 || round > schedule.total_rounds) {
    throw Error(ErrorKind::Range, "round " + std::to_string(round) + " outside 1.." +
                                      std::to_string(schedule.total_rounds));
  }
  std::size_t index = 0;
  for (std::size_t i = 0; i < schedule.phases.size(); ++i) {
    if (schedule.phases[i].start_round <= round) index = i;
  }
  return index;
}

const PhaseParams& phase_at(const DriftSchedule& schedule, std::size_t round) {
  return schedule.phases[phase_index_at(schedule, round)].phase;
}

Batch LabeledScene::to_batch() const {
  Batch b;
  b.feature_dim = feature_dim;
  b.features = features;
  b.labels = labels;
  b.image_ids.assign(labels.size(), image_id);
  return b;
}

std::uint32_t LabeledScene::dominant_class(std::size_t class_count) const {
  std::vector<std::size_t> counts(class_count, 0);
  for (auto y : labels) ++counts.at(y);
  return static_cast<std::uint32_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

LabeledScene generate_scene(const SceneConfig& c, const PhaseParams& phase, std::uint64_t image_id,
                            std::uint64_t seed) {
  const std::size_t W = c.width, H = c.height, F = c.feature_dim, K = c.class_count;
  if (phase.class_count() != K || phase.feature_dim != F) {
    throw Error(ErrorKind::InvalidConfig, "phase does not match scene config");
  }
  std::mt19937_64 rng(derive_seed(seed, {kTagScene, phase.geometry_seed, image_id}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  LabeledScene scene{W, H, F, std::vector<double>(W * H * F), std::vector<std::uint32_t>(W * H),
                     phase.phase_id, image_id};

  // Horizontal bands (sky, buildings, road...) with heights following the phase priors.
  const std::size_t bands = std::min<std::size_t>(3, K);
  const std::size_t min_rows = H >= 2 * bands ? 2 : 1;
  std::vector<double> share(bands);
  for (std::size_t b = 0; b < bands; ++b) share[b] = (phase.class_priors[b] + 0.05) * (0.75 + 0.5 * unit(rng));
  const double share_total = std::accumulate(share.begin(), share.end(), 0.0);
  std::vector<std::size_t> rows(bands, min_rows);
  std::size_t spare = H - bands * min_rows;
  std::size_t given = 0;
  for (std::size_t b = 0; b + 1 < bands; ++b) {
    const auto extra = static_cast<std::size_t>(std::floor(share[b] / share_total * static_cast<double>(spare)));
    rows[b] += extra;
    given += extra;
  }
  rows[bands - 1] += spare - given;

  std::size_t y = 0;
  for (std::size_t b = 0; b < bands; ++b) {
    for (std::size_t r = 0; r < rows[b]; ++r, ++y) {
      for (std::size_t x = 0; x < W; ++x) scene.labels[y * W + x] = static_cast<std::uint32_t>(b);
    }
  }

  // Rectangular objects drawn from the remaining classes' priors.
  const std::size_t first_object = K > bands ? bands : 0;
  std::vector<double> object_priors(phase.class_priors.begin() + static_cast<std::ptrdiff_t>(first_object),
                                    phase.class_priors.end());
  std::discrete_distribution<std::size_t> pick(object_priors.begin(), object_priors.end());
  std::uniform_int_distribution<std::size_t> blob_count(0, c.max_blobs);
  const std::size_t max_w = std::max<std::size_t>(2, W / 3), max_h = std::max<std::size_t>(2, H / 3);
  std::uniform_int_distribution<std::size_t> blob_w(2, max_w), blob_h(2, max_h);
  const std::size_t blobs = blob_count(rng);
  for (std::size_t i = 0; i < blobs; ++i) {
    const auto cls = static_cast<std::uint32_t>(first_object + pick(rng));
    const std::size_t bw = blob_w(rng), bh = blob_h(rng);
    const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, W - bw)(rng);
    const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, H - bh)(rng);
    for (std::size_t yy = y0; yy < y0 + bh; ++yy) {
      for (std::size_t xx = x0; xx < x0 + bw; ++xx) scene.labels[yy * W + xx] = cls;
    }
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t p = 0; p < W * H; ++p) {
    const auto m = phase.mean(scene.labels[p]);
    for (std::size_t f = 0; f < F; ++f) {
      scene.features[p * F + f] = c.noise_sigma == 0.0 ? m[f] : m[f] + c.noise_sigma * noise(rng);
    }
  }
  return scene;
}

std::vector<LabeledScene> generate_scenes(const SceneConfig& c, const PhaseParams& phase, std::size_t count,
                                          std::uint64_t first_image_id, std::uint64_t seed) {
  std::vector<LabeledScene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(c, phase, first_image_id + i, seed));
  return out;
}

std::vector<ClientShard> partition(std::span<const LabeledScene> scenes, std::size_t client_count,
                                   double alpha, std::size_t class_count, std::uint64_t seed) {
  if (client_count < 1) throw Error(ErrorKind::InvalidConfig, "partition: need at least one client");
  if (!(alpha > 0.0)) throw Error(ErrorKind::InvalidConfig, "partition: alpha must be > 0");
  if (scenes.size() < client_count) {
    throw Error(ErrorKind::InvalidConfig, "partition: " + std::to_string(scenes.size()) +
                                              " images cannot fill " + std::to_string(client_count) + " clients");
  }
  std::mt19937_64 rng(seed);
  std::map<std::uint32_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < scenes.size(); ++i) groups[scenes[i].dominant_class(class_count)].push_back(i);

  std::vector<std::vector<std::size_t>> assigned(client_count);
  for (auto& [key, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    const std::vector<double> q = dirichlet(rng, client_count, alpha);
    // Largest-remainder rounding of members.size() * q.
    const double n = static_cast<double>(members.size());
    std::vector<std::size_t> counts(client_count);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t used = 0;
    for (std::size_t c = 0; c < client_count; ++c) {
      const double exact = n * q[c];
      counts[c] = static_cast<std::size_t>(std::floor(exact));
      used += counts[c];
      remainders.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; used < members.size(); ++i, ++used) ++counts[remainders[i % client_count].second];
    std::size_t at = 0;
    for (std::size_t c = 0; c < client_count; ++c) {
      for (std::size_t j = 0; j < counts[c]; ++j) assigned[c].push_back(members[at++]);
    }
  }

  for (std::size_t c = 0; c < client_count; ++c) {
    if (!assigned[c].empty()) continue;
    auto donor = std::max_element(assigned.begin(), assigned.end(),
                                  [](const auto& a, const auto& b) { return a.size() < b.size(); });
    assigned[c].push_back(donor->back());
    donor->pop_back();
  }

  std::vector<ClientShard> shards(client_count);
  for (std::size_t c = 0; c < client_count; ++c) {
    shards[c].client = c;
    std::sort(assigned[c].begin(), assigned[c].end());
    for (std::size_t i : assigned[c]) shards[c].scenes.push_back(scenes[i]);
  }
  return shards;
}

Batch concat_batches(std::span<const LabeledScene> scenes) {
  Batch out;
  for (const auto& s : scenes) out.append(s.to_batch());
  return out;
}

}  // namespace fedema
