#pragma once

#include <string>

namespace derain {

// All documented configuration keys with their defaults. Config files are
// plain "key = value" text; '#' starts a comment; unknown keys are rejected.
struct Config {
  // model.*
  int segment_length = 9;   // model.segment_length
  double theta = 0.5;       // model.theta
  int channels = 3;         // model.channels

  // trainer.*
  double learning_rate = 1e-4;
  int batch_size = 16;
  int phase1_steps = 400;
  int phase2_steps = 1200;
  int plateau_window = 0;       // 0 = fixed step schedule
  double grad_clip_norm = 0.0;  // 0 = off
  int checkpoint_interval = 200;
  double alpha_phase1 = 1.0;
  double beta_phase1 = 0.01;
  double alpha_phase2 = 0.01;
  double beta_phase2 = 1.0;
  int crop_size = 64;
  int crop_stride = 64;

  // rainsynth.* sampling ranges used by the dataset builder
  double scale_min = 0.8, scale_max = 1.6;
  double direction_min = -60.0, direction_max = 60.0;  // degrees from vertical
  double density_min = 4.0, density_max = 28.0;        // streaks per 10^4 px
  int depth_min = 1, depth_max = 4;
  double opacity_min = 0.25, opacity_max = 0.9;
  double speed_min = 150.0, speed_max = 900.0;  // px/s
  double wind_min = 0.0, wind_max = 4.0;        // degrees of per-frame jitter

  void validate() const;
};

Config parse_config_text(const std::string& text);
Config load_config(const std::string& path);
std::string config_to_text(const Config& c);  // all keys, current values

}  // namespace derain
