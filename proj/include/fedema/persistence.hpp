#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedema/orchestrator.hpp"

namespace fedema {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kSceneFileVersion = 1;

// ---- run configuration ----------------------------------------------------

/// Serializes every field, including the schema version.
nlohmann::json config_to_json(const ExperimentConfig& config);

/// Strict parse: unknown keys and a wrong schema version are rejected. Missing keys
/// keep their defaults. Throws Error(InvalidConfig).
ExperimentConfig config_from_json(const nlohmann::json& doc);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

/// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

// ---- checkpoints ----------------------------------------------------------
//
// "FEMA" | u32 version | u64 count | count x f64 | u64 trailer length | JSON trailer
// All integers and reals little-endian.

struct CheckpointMeta {
  std::size_t round = 0;
  std::string algorithm;
  std::string config_hash;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  ParamVector params;
  CheckpointMeta meta;
};

void write_checkpoint(std::ostream& out, const ParamVector& params, const CheckpointMeta& meta);
void save_checkpoint(const std::filesystem::path& path, const ParamVector& params, const CheckpointMeta& meta);

/// Throws Error(Format) with distinct messages for bad magic, unsupported version and truncation.
Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- per-round series -----------------------------------------------------

/// Fixed column order of metrics.csv.
const std::vector<std::string>& metrics_csv_columns();

/// Window column value: N when the decay comes from a window, else 0.
long long window_column(const ExperimentConfig& config);

std::string format_number(double value);
void write_metrics_csv(std::ostream& out, const ExperimentReport& report);
std::vector<std::string> metrics_csv_row(const ExperimentConfig& config, const RoundRecord& record);

nlohmann::json report_to_json(const ExperimentReport& report);

// ---- scene export ---------------------------------------------------------
//
// scenes.bin: "FSCN" | u32 version | u64 count | u32 width | u32 height | u32 features |
//             u32 classes | features (count*h*w*F f64) | labels (count*h*w u32)
// scenes.json: manifest with dims, per-image ids and phases.

void export_scenes(const std::filesystem::path& dir, std::span<const LabeledScene> scenes,
                   std::size_t class_count);
/// Reads scenes.bin; ids and phases come from a scenes.json next to it, if present.
std::vector<LabeledScene> import_scenes(const std::filesystem::path& bin_path);

}  // namespace fedema
