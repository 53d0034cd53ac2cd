#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedema/segnet.hpp"

namespace fedema {

/// Geometry, noise and drift knobs for the synthetic street scenes.
struct SceneConfig {
  std::size_t width = 16;
  std::size_t height = 16;
  std::size_t feature_dim = 3;
  std::size_t class_count = 6;
  double noise_sigma = 1.0;
  double mean_radius = 6.0;      // base class means are drawn inside [-r, r]^F
  double min_separation = 3.0;   // minimum pairwise distance between class means
  std::size_t max_blobs = 3;

  std::size_t phase_count = 3;
  double drift_rotation_deg = 60.0;  // per-phase rotation of the means in the first feature plane
  double drift_offset = 0.0;         // per-phase shift along the all-ones direction
  double prior_concentration = 4.0;  // Dirichlet concentration of per-phase class priors

  void validate() const;
  friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

/// Stationary data distribution of one drift phase.
struct PhaseParams {
  std::size_t phase_id = 0;
  std::size_t feature_dim = 0;
  std::vector<double> class_means;  // [class][feature]
  std::vector<double> class_priors;
  std::uint64_t geometry_seed = 0;

  std::size_t class_count() const noexcept { return class_priors.size(); }
  std::span<const double> mean(std::size_t k) const {
    return std::span<const double>(class_means).subspan(k * feature_dim, feature_dim);
  }
  /// Throws unless priors sum to 1 and the means are pairwise at least `separation` apart.
  void validate(double separation) const;
};

struct DriftSchedule {
  struct Entry {
    std::size_t start_round;
    PhaseParams phase;
  };
  std::vector<Entry> phases;
  std::size_t total_rounds = 0;

  void validate() const;
};

struct LabeledScene {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t feature_dim = 0;
  std::vector<double> features;        // [pixel][feature], row-major pixels
  std::vector<std::uint32_t> labels;   // [pixel]
  std::size_t phase_id = 0;
  std::uint64_t image_id = 0;

  std::size_t pixel_count() const noexcept { return labels.size(); }
  Batch to_batch() const;
  /// Most frequent label (smallest label on ties).
  std::uint32_t dominant_class(std::size_t class_count) const;
};

struct ClientShard {
  std::size_t client = 0;
  std::vector<LabeledScene> scenes;
};

/// Phase `index` of the drift: base means rotated/shifted `index` times, priors re-drawn.
PhaseParams make_phase(const SceneConfig& config, std::size_t index, std::uint64_t seed);

/// Equal-length phases covering rounds 1..total_rounds.
DriftSchedule make_schedule(const SceneConfig& config, std::size_t total_rounds, std::uint64_t seed);

LabeledScene generate_scene(const SceneConfig& config, const PhaseParams& phase,
                            std::uint64_t image_id, std::uint64_t seed);

std::vector<LabeledScene> generate_scenes(const SceneConfig& config, const PhaseParams& phase,
                                          std::size_t count, std::uint64_t first_image_id,
                                          std::uint64_t seed);

/// Index into schedule.phases of the phase active at round r (1-based).
std::size_t phase_index_at(const DriftSchedule& schedule, std::size_t round);
const PhaseParams& phase_at(const DriftSchedule& schedule, std::size_t round);

/// Image-level non-IID split: per dominant-class group, client proportions are drawn from
/// a symmetric Dirichlet(alpha). Shards are disjoint, cover the input and are nonempty.
std::vector<ClientShard> partition(std::span<const LabeledScene> scenes, std::size_t client_count,
                                   double alpha, std::size_t class_count, std::uint64_t seed);

Batch concat_batches(std::span<const LabeledScene> scenes);

}  // namespace fedema
