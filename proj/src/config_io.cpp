#include "mlp3d/config_io.hpp"

#include <fstream>
#include <set>

#include "mlp3d/errors.hpp"

namespace mlp3d {

namespace {

template <class T>
void read(const Json& j, const char* key, T& out, const char* what) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(what) + ": key '" + key + "' has the wrong type");
  }
}

void read_size(const Json& j, const char* key, std::size_t& out, const char* what) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<long long>() >= 0))
    throw ConfigError(std::string(what) + ": key '" + key + "' must be a non-negative integer");
  out = it->get<std::size_t>();
}

template <std::size_t N>
void read_array(const Json& j, const char* key, std::array<std::size_t, N>& out, const char* what) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_array() || it->size() != N)
    throw ConfigError(std::string(what) + ": key '" + key + "' must be an array of " + std::to_string(N) + " integers");
  for (std::size_t i = 0; i < N; ++i) {
    if (!(*it)[i].is_number_unsigned())
      throw ConfigError(std::string(what) + ": key '" + key + "' must hold non-negative integers");
    out[i] = (*it)[i].get<std::size_t>();
  }
}

}  // namespace

void require_keys(const Json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  std::string bad;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) bad += (bad.empty() ? "" : ", ") + it.key();
  if (!bad.empty()) throw ConfigError(std::string(what) + ": unknown keys: " + bad);
}

Json gtm_to_json(const GtmConfig& cfg) {
  return {{"kind", std::string(to_string(cfg.kind))}, {"S", cfg.group}, {"shared", cfg.shared}};
}

GtmConfig gtm_from_json(const Json& j) {
  require_keys(j, {"kind", "S", "shared"}, "gtm config");
  GtmConfig cfg;
  std::string kind(to_string(cfg.kind));
  read(j, "kind", kind, "gtm config");
  cfg.kind = parse_gtm_kind(kind);
  read_size(j, "S", cfg.group, "gtm config");
  read(j, "shared", cfg.shared, "gtm config");
  return cfg;
}

Json spec_to_json(const NetworkSpec& spec) {
  Json blocks = Json::array();
  for (const auto& g : spec.gtm_per_block) blocks.push_back(gtm_to_json(g));
  return {{"name", spec.name},
          {"channels", spec.channels},
          {"depths", spec.depths},
          {"gtm_per_block", blocks},
          {"height", spec.height},
          {"width", spec.width},
          {"time", spec.time},
          {"num_classes", spec.num_classes},
          {"embed_window", spec.embed_window},
          {"embed_stride", spec.embed_stride},
          {"mlp_ratio", spec.mlp_ratio},
          {"spatial_window", spec.spatial_window},
          {"drop_path_rate", spec.drop_path_rate},
          {"head_dropout", spec.head_dropout}};
}

NetworkSpec spec_from_json(const Json& j) {
  const char* what = "network spec";
  require_keys(j,
               {"variant", "name", "channels", "depths", "gtm", "gtm_per_block", "height", "width",
                "time", "num_classes", "embed_window", "embed_stride", "mlp_ratio", "spatial_window",
                "drop_path_rate", "head_dropout"},
               what);
  NetworkSpec spec;
  std::size_t h = spec.height, w = spec.width, t = spec.time, k = spec.num_classes;
  read_size(j, "height", h, what);
  read_size(j, "width", w, what);
  read_size(j, "time", t, what);
  read_size(j, "num_classes", k, what);
  if (j.contains("variant")) {
    std::string v;
    read(j, "variant", v, what);
    spec = make_variant(v, h, w, t, k);
  }
  spec.height = h;
  spec.width = w;
  spec.time = t;
  spec.num_classes = k;
  read(j, "name", spec.name, what);
  read_array(j, "channels", spec.channels, what);
  read_array(j, "depths", spec.depths, what);
  read_array(j, "embed_window", spec.embed_window, what);
  read_array(j, "embed_stride", spec.embed_stride, what);
  read_size(j, "mlp_ratio", spec.mlp_ratio, what);
  read_size(j, "spatial_window", spec.spatial_window, what);
  read(j, "drop_path_rate", spec.drop_path_rate, what);
  read(j, "head_dropout", spec.head_dropout, what);
  if (j.contains("gtm") && j.contains("gtm_per_block"))
    throw ConfigError("network spec: give either 'gtm' or 'gtm_per_block', not both");
  if (j.contains("gtm")) {
    set_all_gtm(spec, gtm_from_json(j["gtm"]));
  } else if (j.contains("gtm_per_block")) {
    if (!j["gtm_per_block"].is_array()) throw ConfigError("network spec: 'gtm_per_block' must be an array");
    spec.gtm_per_block.clear();
    for (const auto& g : j["gtm_per_block"]) spec.gtm_per_block.push_back(gtm_from_json(g));
  } else if (spec.gtm_per_block.size() != spec.block_count()) {
    // Depths changed relative to the variant: keep its first choice everywhere.
    const GtmConfig first = spec.gtm_per_block.empty() ? GtmConfig{} : spec.gtm_per_block[0];
    set_all_gtm(spec, first);
  }
  validate_spec(spec);
  return spec;
}

Json train_to_json(const TrainConfig& c) {
  return {{"base_lr", c.base_lr},       {"weight_decay", c.weight_decay},
          {"warmup_epochs", c.warmup_epochs}, {"total_epochs", c.total_epochs},
          {"batch_size", c.batch_size}, {"seed", c.seed},
          {"label_smoothing", c.label_smoothing}, {"precision", std::string(precision_name(c.precision))},
          {"grad_clip", c.grad_clip}};
}

TrainConfig train_from_json(const Json& j) {
  const char* what = "train config";
  require_keys(j,
               {"base_lr", "weight_decay", "warmup_epochs", "total_epochs", "batch_size", "seed",
                "label_smoothing", "precision", "grad_clip"},
               what);
  TrainConfig c;
  read(j, "base_lr", c.base_lr, what);
  read(j, "weight_decay", c.weight_decay, what);
  read(j, "warmup_epochs", c.warmup_epochs, what);
  read_size(j, "total_epochs", c.total_epochs, what);
  read_size(j, "batch_size", c.batch_size, what);
  read(j, "seed", c.seed, what);
  read(j, "label_smoothing", c.label_smoothing, what);
  read(j, "grad_clip", c.grad_clip, what);
  if (j.contains("precision")) {
    std::string p;
    read(j, "precision", p, what);
    c.precision = parse_precision(p);
  }
  validate_train(c);
  return c;
}

Json space_to_json(const SearchSpace& s) {
  Json kinds = Json::array();
  for (auto k : s.kinds) kinds.push_back(std::string(to_string(k)));
  return {{"kinds", kinds}, {"sizes", s.sizes}, {"alpha", s.alpha}, {"eval_draws", s.eval_draws},
          {"repeats", s.repeats}};
}

SearchSpace space_from_json(const Json& j) {
  const char* what = "search space";
  require_keys(j, {"kinds", "sizes", "alpha", "eval_draws", "repeats"}, what);
  SearchSpace s;
  if (j.contains("kinds")) {
    std::vector<std::string> names;
    read(j, "kinds", names, what);
    s.kinds.clear();
    for (const auto& n : names) s.kinds.push_back(parse_gtm_kind(n));
  }
  read(j, "sizes", s.sizes, what);
  read(j, "alpha", s.alpha, what);
  read_size(j, "eval_draws", s.eval_draws, what);
  read_size(j, "repeats", s.repeats, what);
  validate_space(s);
  return s;
}

Json synth_to_json(const SynthConfig& c) {
  return {{"task", std::string(to_string(c.task))},
          {"height", c.height},
          {"width", c.width},
          {"time", c.time},
          {"sprite", c.sprite},
          {"speed", c.speed},
          {"long_range_code", std::string(to_string(c.long_range_code))},
          {"long_range_step", c.long_range_step},
          {"pulse", c.pulse},
          {"sprites", c.sprites},
          {"noise", c.noise},
          {"background", c.background},
          {"foreground", c.foreground},
          {"train_size", c.train_size},
          {"val_size", c.val_size},
          {"seed", c.seed}};
}

SynthConfig synth_from_json(const Json& j) {
  const char* what = "synthetic data config";
  require_keys(j,
               {"task", "height", "width", "time", "sprite", "speed", "long_range_code", "long_range_step", "pulse", "sprites", "noise",
                "background", "foreground", "train_size", "val_size", "seed"},
               what);
  SynthConfig c;
  if (j.contains("task")) {
    std::string t;
    read(j, "task", t, what);
    c.task = parse_synth_task(t);
  }
  read_size(j, "height", c.height, what);
  read_size(j, "width", c.width, what);
  read_size(j, "time", c.time, what);
  read_size(j, "sprite", c.sprite, what);
  read_size(j, "speed", c.speed, what);
  if (j.contains("long_range_code")) {
    std::string code;
    read(j, "long_range_code", code, what);
    c.long_range_code = parse_long_range_code(code);
  }
  read_size(j, "long_range_step", c.long_range_step, what);
  read_size(j, "pulse", c.pulse, what);
  read_size(j, "sprites", c.sprites, what);
  read(j, "noise", c.noise, what);
  read(j, "background", c.background, what);
  read(j, "foreground", c.foreground, what);
  read_size(j, "train_size", c.train_size, what);
  read_size(j, "val_size", c.val_size, what);
  read(j, "seed", c.seed, what);
  validate_synth(c);
  return c;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace mlp3d
