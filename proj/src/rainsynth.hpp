#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "config.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace derain {

// The seven rendering parameters plus the seed that fully determines output.
struct RainConfig {
  double scale = 1.0;            // streak length/width multiplier
  double direction_deg = 0.0;    // degrees from vertical, [-75, +75]
  double density = 10.0;         // expected streaks per 10^4 px, [0, 50]
  int scene_depth = 1;           // depth layers, >= 1
  double opacity = 0.6;          // peak streak intensity, [0, 1]
  double falling_speed = 600.0;  // px/s, [100, 1200]
  double wind_variation_deg = 0.0;  // per-frame direction jitter amplitude
  std::uint64_t seed = 0;

  void validate() const;
};

// renderer constants
constexpr double kFrameRate = 24.0;   // speed <-> per-frame pixel conversion
constexpr double kExposure = 1.0 / 48.0;  // 180-degree shutter
constexpr double kBaseWidth = 1.5;    // streak core width in px at scale 1
constexpr double kDepthAttenuation = 0.7;

// per-frame, per-streak geometry record for round-trip verification
struct StreakSample {
  int frame = 0;
  int streak_id = 0;
  int layer = 0;
  double head_x = 0, head_y = 0;   // leading tip, px
  double angle_deg = 0;            // actual per-frame direction incl. wind
  double speed_px_s = 0;
  double length = 0, width = 0;
};

struct RenderResult {
  Tensor streaks;                  // (T,1,H,W), values in [0, opacity]
  std::vector<StreakSample> log;   // streaks whose capsule intersects the frame
};

RenderResult render_streaks(int frames, int height, int width, const RainConfig& cfg);

// X = clip(C + S_raw, 0, 1) with the raw map broadcast over channels;
// the stored streak target is X - C so the decomposition is bit-exact.
struct RainTriplet {
  Tensor x, s, c;  // (T,C,H,W)
};
RainTriplet composite(const Tensor& clean, const Tensor& s_raw);

// Renders <root>/<split>/<video>_r<k>/{clean,rain,streak}/ triplets: three
// parameter draws per training video, one per val/test video, plus a
// manifest listing every rendered video's RainConfig.
struct DatasetEntry {
  std::string split, video_id;
  RainConfig config;
};
std::vector<DatasetEntry> build_dataset(const std::string& clean_root,
                                        const std::string& out_root, const Config& cfg,
                                        std::uint64_t seed);

RainConfig sample_rain_config(const Config& ranges, Rng& rng);

}  // namespace derain
