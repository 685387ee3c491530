#pragma once

// Synthetic toroidal-motion clips.
//
// direction:  a square sprite moves left, right, up or down at a fixed speed
//             with wraparound and closes its loop after exactly T frames.
//             Left and right clips from the same start hold the same frames
//             in reverse order, so only temporal order separates them.
// long_range: a static sprite shows up in frames [t0, t0 + pulse) and again
//             T/2 later; t0 is a multiple of `pulse`, so every first frame
//             sits exactly T/2 before its partner. Two class codes:
//               colour_order  class k paints the first appearance red or
//                             green by bit 1 of k and the second by bit 0,
//                             at the same position. Red-then-green and
//                             green-then-red hold identical frame sets.
//               displacement  red first, green second, moved by
//                             `long_range_step` pixels in the class
//                             direction.
//             Either way the label lives in the relation between two frames
//             half a clip apart.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlp3d/dataset.hpp"

namespace mlp3d {

enum class SynthTask { direction, long_range };
enum class Direction { left = 0, right = 1, up = 2, down = 3 };
enum class LongRangeCode { colour_order, displacement };

inline constexpr std::size_t kSynthClasses = 4;

std::string_view to_string(SynthTask task);
SynthTask parse_synth_task(std::string_view name);
std::string_view to_string(LongRangeCode code);
LongRangeCode parse_long_range_code(std::string_view name);

struct SynthConfig {
  SynthTask task = SynthTask::direction;
  std::size_t height = 32, width = 32, time = 16;
  std::size_t sprite = 4;  // side length in pixels
  std::size_t speed = 2;   // pixels per frame
  LongRangeCode long_range_code = LongRangeCode::colour_order;
  std::size_t long_range_step = 4;  // displacement code only
  std::size_t pulse = 1;    // long_range: frames per appearance
  std::size_t sprites = 1;  // long_range: independent sprites per clip
  double noise = 0.05;
  double background = 0.1;
  double foreground = 0.9;
  std::size_t train_size = 2000;
  std::size_t val_size = 500;
  std::uint64_t seed = 0;

  bool operator==(const SynthConfig&) const = default;
};

// Throws ConfigError when trajectories would not close on the torus, splits
// cannot be label-balanced, or intensities leave [0, 1].
void validate_synth(const SynthConfig& cfg);

struct ClipPlacement {
  Direction direction = Direction::left;
  std::size_t start_h = 0, start_w = 0;
  std::size_t start_t = 0;  // long_range only
  // long_range: positions of the sprites after the first
  std::vector<std::array<std::size_t, 2>> extra_starts;
};

// One clip [H, W, T, 3] rendered with the given noise stream.
std::vector<float> render_clip(const SynthConfig& cfg, const ClipPlacement& placement,
                               std::uint64_t noise_seed);

struct SynthSplits {
  Dataset train, val;
  // Placements in clip order, for inspection and tests.
  std::vector<ClipPlacement> train_placements, val_placements;
};

// Deterministic in cfg; every clip draws from its own SplitMix-derived seed.
SynthSplits generate(const SynthConfig& cfg);

// Hash of the sorted, byte-quantized frames: invariant to any reordering of
// time, sensitive to anything else.
std::uint64_t frame_multiset_fingerprint(std::span<const float> clip, std::size_t height,
                                         std::size_t width, std::size_t time,
                                         std::size_t channels = 3);

// Cache file: magic, u64 header length, config JSON, f32 clips, u64 labels.
void save_split(const std::filesystem::path& path, const SynthConfig& cfg, const Dataset& split);
Dataset load_split(const std::filesystem::path& path, SynthConfig* cfg_out = nullptr);

// Loads both splits from `dir` when cached with an identical config,
// otherwise generates and writes them.
SynthSplits generate_cached(const SynthConfig& cfg, const std::filesystem::path& dir);

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace mlp3d
