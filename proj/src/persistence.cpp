#include "fedema/persistence.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace fedema {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); }

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) config_error(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) config_error("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_if(const json& obj, const char* key, T& into) {
  if (obj.contains(key)) into = obj.at(key).get<T>();
}

void read_size(const json& obj, const char* key, std::size_t& into) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) config_error(std::string(key) + " must be a nonnegative integer");
  into = v.get<std::size_t>();
}

json optimizer_json(const OptimizerConfig& o) {
  return {{"learning_rate", o.learning_rate}, {"beta1", o.beta1}, {"beta2", o.beta2},
          {"epsilon", o.epsilon}, {"weight_decay", o.weight_decay}};
}

json scenes_json(const SceneConfig& s) {
  return {{"width", s.width},
          {"height", s.height},
          {"feature_dim", s.feature_dim},
          {"class_count", s.class_count},
          {"noise_sigma", s.noise_sigma},
          {"mean_radius", s.mean_radius},
          {"min_separation", s.min_separation},
          {"max_blobs", s.max_blobs},
          {"phase_count", s.phase_count},
          {"drift_rotation_deg", s.drift_rotation_deg},
          {"drift_offset", s.drift_offset},
          {"prior_concentration", s.prior_concentration}};
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 8);
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

bool get_bytes(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount()) == n;
}

std::uint64_t get_uint(std::istream& in, int bytes, const char* what) {
  unsigned char b[8];
  if (!get_bytes(in, reinterpret_cast<char*>(b), static_cast<std::size_t>(bytes))) {
    throw Error(ErrorKind::Format, std::string("truncated file: missing ") + what);
  }
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

json config_to_json(const ExperimentConfig& c) {
  return {{"schema_version", kConfigSchemaVersion},
          {"algorithm", std::string(to_string(c.algorithm))},
          {"seed", c.seed},
          {"clients", c.clients},
          {"rounds", c.rounds},
          {"local_steps", c.local_steps},
          {"batch_images", c.batch_images},
          {"optimizer", optimizer_json(c.optimizer)},
          {"lambda", c.lambda},
          {"entropy_sign", static_cast<int>(c.sign)},
          {"window", c.window ? json(*c.window) : json(nullptr)},
          {"beta", c.beta ? json(*c.beta) : json(nullptr)},
          {"mu", c.mu},
          {"hidden_dim", c.hidden_dim},
          {"scenes", scenes_json(c.scenes)},
          {"images_per_client", c.images_per_client},
          {"eval_images", c.eval_images},
          {"partition_alpha", c.partition_alpha},
          {"eval_every", c.eval_every},
          {"parallel_clients", c.parallel_clients},
          {"objective_threshold", c.objective_threshold}};
}

ExperimentConfig config_from_json(const json& doc) {
  static const std::set<std::string> top = {
      "schema_version", "algorithm", "seed", "clients", "rounds", "local_steps", "batch_images",
      "optimizer", "lambda", "entropy_sign", "window", "beta", "mu", "hidden_dim", "scenes",
      "images_per_client", "eval_images", "partition_alpha", "eval_every", "parallel_clients",
      "objective_threshold"};
  static const std::set<std::string> optimizer_keys = {"learning_rate", "beta1", "beta2", "epsilon", "weight_decay"};
  static const std::set<std::string> scene_keys = {
      "width", "height", "feature_dim", "class_count", "noise_sigma", "mean_radius", "min_separation",
      "max_blobs", "phase_count", "drift_rotation_deg", "drift_offset", "prior_concentration"};

  reject_unknown(doc, top, "config");
  if (!doc.contains("schema_version")) config_error("config is missing schema_version");
  if (!doc.at("schema_version").is_number_integer() || doc.at("schema_version").get<int>() != kConfigSchemaVersion) {
    config_error("unsupported schema_version " + doc.at("schema_version").dump() + " (expected " +
                 std::to_string(kConfigSchemaVersion) + ")");
  }

  ExperimentConfig c;
  try {
    if (doc.contains("algorithm")) c.algorithm = parse_algorithm(doc.at("algorithm").get<std::string>());
    read_if(doc, "seed", c.seed);
    read_size(doc, "clients", c.clients);
    read_size(doc, "rounds", c.rounds);
    read_size(doc, "local_steps", c.local_steps);
    read_size(doc, "batch_images", c.batch_images);
    if (doc.contains("optimizer")) {
      const auto& o = doc.at("optimizer");
      reject_unknown(o, optimizer_keys, "optimizer");
      read_if(o, "learning_rate", c.optimizer.learning_rate);
      read_if(o, "beta1", c.optimizer.beta1);
      read_if(o, "beta2", c.optimizer.beta2);
      read_if(o, "epsilon", c.optimizer.epsilon);
      read_if(o, "weight_decay", c.optimizer.weight_decay);
    }
    read_if(doc, "lambda", c.lambda);
    if (doc.contains("entropy_sign")) {
      const int s = doc.at("entropy_sign").get<int>();
      if (s != 1 && s != -1) config_error("entropy_sign must be 1 or -1");
      c.sign = static_cast<EntropySign>(s);
    }
    if (doc.contains("window")) {
      c.window = doc.at("window").is_null() ? std::nullopt : std::optional<long long>(doc.at("window").get<long long>());
    }
    if (doc.contains("beta")) {
      c.beta = doc.at("beta").is_null() ? std::nullopt : std::optional<double>(doc.at("beta").get<double>());
    }
    read_if(doc, "mu", c.mu);
    read_size(doc, "hidden_dim", c.hidden_dim);
    if (doc.contains("scenes")) {
      const auto& s = doc.at("scenes");
      reject_unknown(s, scene_keys, "scenes");
      read_size(s, "width", c.scenes.width);
      read_size(s, "height", c.scenes.height);
      read_size(s, "feature_dim", c.scenes.feature_dim);
      read_size(s, "class_count", c.scenes.class_count);
      read_if(s, "noise_sigma", c.scenes.noise_sigma);
      read_if(s, "mean_radius", c.scenes.mean_radius);
      read_if(s, "min_separation", c.scenes.min_separation);
      read_size(s, "max_blobs", c.scenes.max_blobs);
      read_size(s, "phase_count", c.scenes.phase_count);
      read_if(s, "drift_rotation_deg", c.scenes.drift_rotation_deg);
      read_if(s, "drift_offset", c.scenes.drift_offset);
      read_if(s, "prior_concentration", c.scenes.prior_concentration);
    }
    read_size(doc, "images_per_client", c.images_per_client);
    read_size(doc, "eval_images", c.eval_images);
    read_if(doc, "partition_alpha", c.partition_alpha);
    read_size(doc, "eval_every", c.eval_every);
    read_if(doc, "parallel_clients", c.parallel_clients);
    read_if(doc, "objective_threshold", c.objective_threshold);
  } catch (const json::exception& e) {
    config_error(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    config_error("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::ofstream out(path);
  out << config_to_json(config).dump(2) << '\n';
  if (!out) throw Error(ErrorKind::Format, "cannot write " + path.string());
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string canonical = config_to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_checkpoint(std::ostream& out, const ParamVector& params, const CheckpointMeta& meta) {
  out.write("FEMA", 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, params.size());
  for (double v : params.view()) put_f64(out, v);
  const std::string trailer =
      json{{"round", meta.round}, {"algorithm", meta.algorithm}, {"config_hash", meta.config_hash}}.dump();
  put_u64(out, trailer.size());
  out.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
}

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params, const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  write_checkpoint(out, params, meta);
  if (!out) throw Error(ErrorKind::Format, "cannot write checkpoint " + path.string());
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[4];
  if (!get_bytes(in, magic, 4)) throw Error(ErrorKind::Format, "truncated checkpoint: missing magic bytes");
  if (std::string(magic, 4) != "FEMA") throw Error(ErrorKind::Format, "not a checkpoint: bad magic bytes");
  const auto version = get_uint(in, 4, "format version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get_uint(in, 8, "parameter count");
  Checkpoint cp;
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 24)));
  for (std::uint64_t i = 0; i < count; ++i) {
    values.push_back(std::bit_cast<double>(get_uint(in, 8, "parameter array")));
  }
  cp.params = ParamVector(std::move(values));
  const auto trailer_size = get_uint(in, 8, "metadata length");
  std::string trailer(static_cast<std::size_t>(trailer_size), '\0');
  if (!get_bytes(in, trailer.data(), trailer.size())) {
    throw Error(ErrorKind::Format, "truncated file: missing metadata trailer");
  }
  try {
    const json meta = json::parse(trailer);
    cp.meta = {meta.at("round").get<std::size_t>(), meta.at("algorithm").get<std::string>(),
               meta.at("config_hash").get<std::string>()};
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("corrupt checkpoint metadata: ") + e.what());
  }
  return cp;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Format, "cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

const std::vector<std::string>& metrics_csv_columns() {
  static const std::vector<std::string> columns = {"round", "algo", "lambda", "window", "miou_cur", "miou_hist_mean",
                                                   "mf1", "mpre", "mrec", "mean_obj", "grad_norm_sq"};
  return columns;
}

long long window_column(const ExperimentConfig& config) {
  if (config.algorithm != Algorithm::FedEMA || config.beta) return 0;
  return config.window.value_or(0);
}

std::string format_number(double value) {
  if (!std::isfinite(value)) throw Error(ErrorKind::Format, "refusing to write a non-finite number");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", value);
  return buf;
}

std::vector<std::string> metrics_csv_row(const ExperimentConfig& config, const RoundRecord& r) {
  const MetricBundle& cur = r.ema_current();
  return {std::to_string(r.round),
          std::string(to_string(config.algorithm)),
          format_number(config.lambda),
          std::to_string(window_column(config)),
          format_number(cur.miou),
          format_number(r.historical_miou_mean()),
          format_number(cur.mf1),
          format_number(cur.mprecision),
          format_number(cur.mrecall),
          format_number(r.mean_objective),
          format_number(r.grad_norm_sq)};
}

namespace {

void write_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
  out << '\n';
}

json bundle_json(const MetricBundle& b) {
  return {{"miou", b.miou}, {"mf1", b.mf1}, {"mpre", b.mprecision}, {"mrec", b.mrecall}};
}

}  // namespace

void write_metrics_csv(std::ostream& out, const ExperimentReport& report) {
  write_row(out, metrics_csv_columns());
  for (const auto& r : report.records) write_row(out, metrics_csv_row(report.config, r));
}

json report_to_json(const ExperimentReport& report) {
  json records = json::array();
  for (const auto& r : report.records) {
    json ema = json::array(), agg = json::array();
    for (const auto& b : r.ema_phase_metrics) ema.push_back(bundle_json(b));
    for (const auto& b : r.aggregated_phase_metrics) agg.push_back(bundle_json(b));
    records.push_back({{"round", r.round},
                       {"phase", r.phase},
                       {"mean_objective", r.mean_objective},
                       {"grad_norm_sq", r.grad_norm_sq},
                       {"weights", r.weights},
                       {"evaluated", r.evaluated},
                       {"ema_phase_metrics", ema},
                       {"aggregated_phase_metrics", agg},
                       {"wall_seconds", r.wall_seconds}});
  }
  json doc = {{"config", config_to_json(report.config)},
              {"config_hash", config_hash(report.config)},
              {"effective_beta", report.config.effective_beta()},
              {"records", records},
              {"forgetting_score", report.forgetting ? json(*report.forgetting) : json(nullptr)},
              {"rounds_to_threshold", rounds_to_threshold(report.records, report.config.objective_threshold)}};
  if (report.convergence) {
    const auto& c = *report.convergence;
    doc["convergence"] = {{"running_mean_grad_norm_sq", c.running_mean},
                          {"kendall_tau", c.kendall_tau},
                          {"quarter_round", c.quarter_round},
                          {"running_mean_at_quarter", c.running_mean_at_quarter},
                          {"running_mean_at_end", c.running_mean_at_end},
                          {"improved", c.improved}};
  } else {
    doc["convergence"] = nullptr;
  }
  doc["error"] = report.error ? json(*report.error) : json(nullptr);
  return doc;
}

void export_scenes(const std::filesystem::path& dir, std::span<const LabeledScene> scenes, std::size_t class_count) {
  if (scenes.empty()) throw Error(ErrorKind::InvalidInput, "export_scenes: nothing to export");
  std::filesystem::create_directories(dir);
  const auto& first = scenes.front();
  std::ofstream out(dir / "scenes.bin", std::ios::binary);
  out.write("FSCN", 4);
  put_u32(out, kSceneFileVersion);
  put_u64(out, scenes.size());
  put_u32(out, static_cast<std::uint32_t>(first.width));
  put_u32(out, static_cast<std::uint32_t>(first.height));
  put_u32(out, static_cast<std::uint32_t>(first.feature_dim));
  put_u32(out, static_cast<std::uint32_t>(class_count));
  for (const auto& s : scenes) {
    if (s.width != first.width || s.height != first.height || s.feature_dim != first.feature_dim) {
      throw Error(ErrorKind::Dimension, "export_scenes: scenes have different dimensions");
    }
    for (double v : s.features) put_f64(out, v);
  }
  for (const auto& s : scenes) {
    for (auto y : s.labels) put_u32(out, y);
  }
  if (!out) throw Error(ErrorKind::Format, "cannot write scenes.bin");

  json images = json::array();
  for (const auto& s : scenes) images.push_back({{"image_id", s.image_id}, {"phase_id", s.phase_id}});
  const std::size_t header_bytes = 4 + 4 + 8 + 4 * 4;
  const std::size_t feature_bytes = scenes.size() * first.width * first.height * first.feature_dim * 8;
  json manifest = {{"format", "FSCN"},
                   {"version", kSceneFileVersion},
                   {"byte_order", "little-endian"},
                   {"data_file", "scenes.bin"},
                   {"count", scenes.size()},
                   {"width", first.width},
                   {"height", first.height},
                   {"feature_dim", first.feature_dim},
                   {"class_count", class_count},
                   {"feature_offset", header_bytes},
                   {"feature_type", "float64"},
                   {"label_offset", header_bytes + feature_bytes},
                   {"label_type", "uint32"},
                   {"images", images}};
  std::ofstream(dir / "scenes.json") << manifest.dump(2) << '\n';
}

std::vector<LabeledScene> import_scenes(const std::filesystem::path& bin_path) {
  std::ifstream in(bin_path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Format, "cannot open " + bin_path.string());
  char magic[4];
  if (!get_bytes(in, magic, 4) || std::string(magic, 4) != "FSCN") {
    throw Error(ErrorKind::Format, "not a scene file: bad magic bytes");
  }
  if (get_uint(in, 4, "format version") != kSceneFileVersion) throw Error(ErrorKind::Format, "unsupported scene file version");
  const auto count = get_uint(in, 8, "image count");
  const auto w = get_uint(in, 4, "width"), h = get_uint(in, 4, "height");
  const auto f = get_uint(in, 4, "feature dim");
  get_uint(in, 4, "class count");
  std::vector<LabeledScene> scenes(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    auto& s = scenes[i];
    s.width = w;
    s.height = h;
    s.feature_dim = f;
    s.features.resize(w * h * f);
    for (double& v : s.features) v = std::bit_cast<double>(get_uint(in, 8, "feature array"));
  }
  for (auto& s : scenes) {
    s.labels.resize(w * h);
    for (auto& y : s.labels) y = static_cast<std::uint32_t>(get_uint(in, 4, "label array"));
  }
  // Ids and phases live in the manifest, when it sits next to the data file.
  const auto manifest_path = bin_path.parent_path() / "scenes.json";
  if (std::filesystem::exists(manifest_path)) {
    try {
      const json manifest = json::parse(std::ifstream(manifest_path));
      const json& images = manifest.at("images");
      if (images.size() == scenes.size()) {
        for (std::size_t i = 0; i < scenes.size(); ++i) {
          scenes[i].image_id = images[i].at("image_id").get<std::uint64_t>();
          scenes[i].phase_id = images[i].at("phase_id").get<std::size_t>();
        }
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Format, std::string("corrupt scene manifest: ") + e.what());
    }
  }
  return scenes;
}

}  // namespace fedema
