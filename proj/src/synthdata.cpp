#include "mlp3d/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "mlp3d/config_io.hpp"
#include "mlp3d/errors.hpp"

namespace mlp3d {

namespace {

constexpr char kCacheMagic[8] = {'M', 'L', 'P', '3', 'D', 'S', 'Y', '1'};

std::pair<long, long> step_of(Direction d) {
  switch (d) {
    case Direction::left: return {0, -1};
    case Direction::right: return {0, 1};
    case Direction::up: return {-1, 0};
    case Direction::down: return {1, 0};
  }
  return {0, 0};
}

std::size_t wrap(long v, std::size_t n) {
  const long m = static_cast<long>(n);
  return static_cast<std::size_t>(((v % m) + m) % m);
}

void stamp(std::vector<float>& clip, const SynthConfig& cfg, std::size_t t, long h0, long w0,
           const float colour[3]) {
  for (std::size_t dh = 0; dh < cfg.sprite; ++dh)
    for (std::size_t dw = 0; dw < cfg.sprite; ++dw) {
      const std::size_t h = wrap(h0 + static_cast<long>(dh), cfg.height);
      const std::size_t w = wrap(w0 + static_cast<long>(dw), cfg.width);
      float* px = &clip[((h * cfg.width + w) * cfg.time + t) * 3];
      std::copy(colour, colour + 3, px);
    }
}

std::uint64_t clip_seed(const SynthConfig& cfg, std::uint64_t split, std::size_t index) {
  std::uint64_t state = cfg.seed ^ (0xD1B54A32D192ED03ULL * (split + 1));
  state += 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(index);
  return splitmix64(state);
}

Dataset make_split(const SynthConfig& cfg, std::uint64_t split, std::size_t count,
                   std::vector<ClipPlacement>& placements) {
  Dataset d;
  d.height = cfg.height;
  d.width = cfg.width;
  d.time = cfg.time;
  d.num_classes = kSynthClasses;
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) d.labels[i] = i % kSynthClasses;
  std::uint64_t order_state = cfg.seed ^ (0xA0761D6478BD642FULL * (split + 1));
  std::mt19937_64 order(splitmix64(order_state));
  std::shuffle(d.labels.begin(), d.labels.end(), order);

  d.clips.resize(count * d.clip_numel());
  placements.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(clip_seed(cfg, split, i));
    ClipPlacement p;
    p.direction = static_cast<Direction>(d.labels[i]);
    p.start_h = std::uniform_int_distribution<std::size_t>(0, cfg.height - 1)(rng);
    p.start_w = std::uniform_int_distribution<std::size_t>(0, cfg.width - 1)(rng);
    if (cfg.task == SynthTask::long_range) {
      p.start_t = cfg.pulse * std::uniform_int_distribution<std::size_t>(0, cfg.time / 2 / cfg.pulse - 1)(rng);
      for (std::size_t k = 1; k < cfg.sprites; ++k)
        p.extra_starts.push_back({std::uniform_int_distribution<std::size_t>(0, cfg.height - 1)(rng),
                                  std::uniform_int_distribution<std::size_t>(0, cfg.width - 1)(rng)});
    }
    const auto clip = render_clip(cfg, p, rng());
    std::copy(clip.begin(), clip.end(), d.mutable_clip(i).begin());
    placements[i] = p;
  }
  return d;
}

template <class T>
void write_raw(std::ofstream& out, const T* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
}

template <class T>
void read_raw(std::ifstream& in, T* data, std::size_t count, const std::filesystem::path& path) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
  if (!in) throw FormatError(path.string() + ": truncated dataset cache");
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string_view to_string(SynthTask task) {
  return task == SynthTask::direction ? "direction" : "long_range";
}

std::string_view to_string(LongRangeCode code) {
  return code == LongRangeCode::colour_order ? "colour_order" : "displacement";
}

LongRangeCode parse_long_range_code(std::string_view name) {
  if (name == "colour_order") return LongRangeCode::colour_order;
  if (name == "displacement") return LongRangeCode::displacement;
  throw ConfigError("unknown long-range code '" + std::string(name) +
                    "' (valid: colour_order, displacement)");
}

SynthTask parse_synth_task(std::string_view name) {
  if (name == "direction") return SynthTask::direction;
  if (name == "long_range") return SynthTask::long_range;
  throw ConfigError("unknown synthetic task '" + std::string(name) +
                    "' (valid: direction, long_range)");
}

void validate_synth(const SynthConfig& cfg) {
  if (cfg.height == 0 || cfg.width == 0 || cfg.time == 0)
    throw ConfigError("synthetic clip geometry must be positive");
  if (cfg.sprite == 0 || cfg.sprite > std::min(cfg.height, cfg.width))
    throw ConfigError("sprite size must lie in [1, min(H, W)]");
  if (cfg.task == SynthTask::direction) {
    if (cfg.speed == 0) throw ConfigError("sprite speed must be positive");
    const std::size_t travel = cfg.speed * cfg.time;
    if (travel % cfg.height != 0 || travel % cfg.width != 0)
      throw ConfigError("trajectory does not close: speed*T = " + std::to_string(travel) +
                        " is not a multiple of H = " + std::to_string(cfg.height) + " and W = " +
                        std::to_string(cfg.width));
  } else {
    if (cfg.time < 2 || cfg.time % 2 != 0) throw ConfigError("long_range task needs an even T >= 2");
    if (cfg.long_range_step == 0) throw ConfigError("long_range_step must be positive");
    if (cfg.pulse == 0 || (cfg.time / 2) % cfg.pulse != 0)
      throw ConfigError("pulse must be positive and divide T/2");
    if (cfg.sprites == 0) throw ConfigError("sprites must be positive");
  }
  if (cfg.noise < 0.0) throw ConfigError("noise must be non-negative");
  for (double v : {cfg.background, cfg.foreground})
    if (v < 0.0 || v > 1.0) throw ConfigError("intensities must lie in [0, 1]");
  if (cfg.train_size == 0 || cfg.val_size == 0) throw ConfigError("splits must be nonempty");
  if (cfg.train_size % kSynthClasses != 0 || cfg.val_size % kSynthClasses != 0)
    throw ConfigError("split sizes must be multiples of 4 for exact label balance");
}

std::vector<float> render_clip(const SynthConfig& cfg, const ClipPlacement& p,
                               std::uint64_t noise_seed) {
  const float bg = static_cast<float>(cfg.background), fg = static_cast<float>(cfg.foreground);
  std::vector<float> clip(cfg.height * cfg.width * cfg.time * 3, bg);
  const auto [dh, dw] = step_of(p.direction);
  const long h0 = static_cast<long>(p.start_h), w0 = static_cast<long>(p.start_w);
  if (cfg.task == SynthTask::direction) {
    const float white[3] = {fg, fg, fg};
    const long v = static_cast<long>(cfg.speed);
    for (std::size_t t = 0; t < cfg.time; ++t) {
      const long k = static_cast<long>(t) * v;
      stamp(clip, cfg, t, h0 + dh * k, w0 + dw * k, white);
    }
  } else {
    const float red[3] = {fg, bg, bg}, green[3] = {bg, fg, bg};
    const float* first = red;
    const float* second = green;
    long step = static_cast<long>(cfg.long_range_step);
    if (cfg.long_range_code == LongRangeCode::colour_order) {
      const auto label = static_cast<unsigned>(p.direction);
      first = (label & 2u) ? green : red;
      second = (label & 1u) ? green : red;
      step = 0;
    }
    std::vector<std::pair<long, long>> starts{{h0, w0}};
    for (const auto& e : p.extra_starts) starts.emplace_back(static_cast<long>(e[0]), static_cast<long>(e[1]));
    for (const auto& [h, w] : starts)
      for (std::size_t k = 0; k < cfg.pulse; ++k) {
        stamp(clip, cfg, p.start_t + k, h, w, first);
        stamp(clip, cfg, p.start_t + k + cfg.time / 2, h + dh * step, w + dw * step, second);
      }
  }
  if (cfg.noise > 0.0) {
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> n(0.0, cfg.noise);
    for (auto& x : clip) x = static_cast<float>(std::clamp(x + n(rng), 0.0, 1.0));
  }
  return clip;
}

SynthSplits generate(const SynthConfig& cfg) {
  validate_synth(cfg);
  SynthSplits s;
  s.train = make_split(cfg, 0, cfg.train_size, s.train_placements);
  s.val = make_split(cfg, 1, cfg.val_size, s.val_placements);
  return s;
}

std::uint64_t frame_multiset_fingerprint(std::span<const float> clip, std::size_t height,
                                         std::size_t width, std::size_t time,
                                         std::size_t channels) {
  const std::size_t hw = height * width;
  if (clip.size() != hw * time * channels)
    throw DimensionError("fingerprint: clip holds " + std::to_string(clip.size()) + " values");
  std::vector<std::vector<std::uint8_t>> frames(time, std::vector<std::uint8_t>(hw * channels));
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t t = 0; t < time; ++t)
      for (std::size_t c = 0; c < channels; ++c) {
        const double v = std::clamp(static_cast<double>(clip[(p * time + t) * channels + c]), 0.0, 1.0);
        frames[t][p * channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  std::sort(frames.begin(), frames.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (const auto& f : frames)
    for (auto b : f) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  return h;
}

void save_split(const std::filesystem::path& path, const SynthConfig& cfg, const Dataset& split) {
  split.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::string header = synth_to_json(cfg).dump();
  const std::uint64_t len = header.size(), count = split.size();
  out.write(kCacheMagic, sizeof kCacheMagic);
  write_raw(out, &len, 1);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_raw(out, &count, 1);
  write_raw(out, split.clips.data(), split.clips.size());
  std::vector<std::uint64_t> labels(split.labels.begin(), split.labels.end());
  write_raw(out, labels.data(), labels.size());
  if (!out) throw FormatError("failed writing " + path.string());
}

Dataset load_split(const std::filesystem::path& path, SynthConfig* cfg_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char magic[sizeof kCacheMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCacheMagic, sizeof magic) != 0)
    throw FormatError(path.string() + ": not a dataset cache");
  std::uint64_t len = 0, count = 0;
  read_raw(in, &len, 1, path);
  if (len > (1u << 20)) throw FormatError(path.string() + ": implausible header length");
  std::string header(len, '\0');
  read_raw(in, header.data(), len, path);
  const SynthConfig cfg = synth_from_json(nlohmann::json::parse(header));
  read_raw(in, &count, 1, path);
  Dataset d;
  d.height = cfg.height;
  d.width = cfg.width;
  d.time = cfg.time;
  d.num_classes = kSynthClasses;
  d.clips.resize(count * d.clip_numel());
  read_raw(in, d.clips.data(), d.clips.size(), path);
  std::vector<std::uint64_t> labels(count);
  read_raw(in, labels.data(), count, path);
  d.labels.assign(labels.begin(), labels.end());
  d.validate();
  if (cfg_out) *cfg_out = cfg;
  return d;
}

SynthSplits generate_cached(const SynthConfig& cfg, const std::filesystem::path& dir) {
  const auto train_path = dir / "train.bin", val_path = dir / "val.bin";
  if (std::filesystem::exists(train_path) && std::filesystem::exists(val_path)) {
    SynthConfig a, b;
    SynthSplits s;
    s.train = load_split(train_path, &a);
    s.val = load_split(val_path, &b);
    if (a == cfg && b == cfg) return s;
  }
  SynthSplits s = generate(cfg);
  std::filesystem::create_directories(dir);
  save_split(train_path, cfg, s.train);
  save_split(val_path, cfg, s.val);
  return s;
}

}  // namespace mlp3d
