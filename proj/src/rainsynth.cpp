#include "rainsynth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "storage.hpp"

namespace derain {

namespace fs = std::filesystem;

void RainConfig::validate() const {
  DERAIN_CHECK(scale > 0, ErrorCode::InvalidArgument, "rain: scale ", scale, " must be > 0");
  DERAIN_CHECK(direction_deg >= -75 && direction_deg <= 75, ErrorCode::InvalidArgument,
               "rain: direction ", direction_deg, " outside [-75,75] degrees");
  DERAIN_CHECK(density >= 0 && density <= 50, ErrorCode::InvalidArgument, "rain: density ",
               density, " outside [0,50]");
  DERAIN_CHECK(scene_depth >= 1, ErrorCode::InvalidArgument, "rain: scene_depth must be >= 1");
  DERAIN_CHECK(opacity >= 0 && opacity <= 1, ErrorCode::InvalidArgument, "rain: opacity ",
               opacity, " outside [0,1]");
  DERAIN_CHECK(falling_speed >= 100 && falling_speed <= 1200, ErrorCode::InvalidArgument,
               "rain: falling_speed ", falling_speed, " outside [100,1200] px/s");
  DERAIN_CHECK(wind_variation_deg >= 0, ErrorCode::InvalidArgument,
               "rain: wind_variation must be >= 0");
}

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Trajectory {
  int id = 0, layer = 0;
  int birth_frame = 0;
  double x = 0, y = 0;  // head position at birth
  double speed_frame = 0, speed_px_s = 0;
  double length = 0, width = 0, peak = 0;
};

// draws one anti-aliased capsule (segment tail->head, gaussian cross profile)
void draw_capsule(float* frame, int h, int w, double hx, double hy, double tx, double ty,
                  double width, double peak, double cap) {
  const double sigma = width * 0.5;
  const double reach = 3.0 * sigma + 0.5;
  int x0 = int(std::floor(std::min(hx, tx) - reach));
  int x1 = int(std::ceil(std::max(hx, tx) + reach));
  int y0 = int(std::floor(std::min(hy, ty) - reach));
  int y1 = int(std::ceil(std::max(hy, ty) + reach));
  if (x1 < 0 || y1 < 0 || x0 >= w || y0 >= h) return;
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, w - 1);
  y1 = std::min(y1, h - 1);
  const double dx = hx - tx, dy = hy - ty;
  const double len2 = dx * dx + dy * dy;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (int y = y0; y <= y1; ++y) {
    float* row = frame.data() + std::int64_t(y) * w;
    for (int x = x0; x <= x1; ++x) {
      const double px = x - tx, py = y - ty;
      double t = len2 > 0 ? (px * dx + py * dy) / len2 : 0.0;
      t = t < 0 ? 0 : (t > 1 ? 1 : t);
      const double ex = px - t * dx, ey = py - t * dy;
      const double d2 = ex * ex + ey * ey;
      const double v = peak * std::exp(-d2 * inv2s2);
      double acc = double(row[x]) + v;
      row[x] = float(acc > cap ? cap : acc);
    }
  }
}

}  // namespace

RenderResult render_streaks(int frames, int height, int width, const RainConfig& cfg) {
  DERAIN_CHECK(frames >= 1 && height >= 1 && width >= 1, ErrorCode::InvalidArgument,
               "render_streaks: shape (", frames, ",", height, ",", width, ") invalid");
  cfg.validate();
  RenderResult out;
  out.streaks = Tensor::zeros(Shape{frames, 1, height, width});
  if (cfg.density <= 0 || cfg.opacity <= 0) return out;

  Rng root(cfg.seed);
  const double theta = cfg.direction_deg * kPi / 180.0;
  const double lambda_total = cfg.density * double(height) * double(width) / 1e4;

  // wind jitter: one global direction offset per frame, uniform in +-amplitude
  const int warmup = 4 * frames + 512;  // covers the longest transit below
  Rng wind_rng = root.fork(0x71d);
  std::vector<double> wind(std::size_t(warmup + frames), 0.0);
  for (auto& d : wind)
    d = cfg.wind_variation_deg > 0
            ? (wind_rng.next_double() * 2.0 - 1.0) * cfg.wind_variation_deg * kPi / 180.0
            : 0.0;
  auto wind_at = [&](int frame) { return wind[std::size_t(frame + warmup)]; };

  // per-layer trajectory generation, serial from the seed
  std::vector<Trajectory> trajectories;
  int next_id = 0;
  for (int layer = 0; layer < cfg.scene_depth; ++layer) {
    const double atten = std::pow(kDepthAttenuation, double(layer));
    const double speed = cfg.falling_speed * atten;
    const double speed_frame = speed / kFrameRate;
    const double length = speed * kExposure * cfg.scale;
    const double w_px = kBaseWidth * cfg.scale * atten;
    const double peak = cfg.opacity * atten;
    const double vy = speed_frame * std::cos(theta);
    const double vx = speed_frame * std::sin(theta);
    const double ly = length * std::abs(std::cos(theta));
    const double lx = length * std::abs(std::sin(theta));
    const double pad = lx + 4.0 * w_px + 1.0;
    const double transit = (height + ly + 4.0 * w_px) / vy;  // frames on screen
    const double drift = vx * transit;
    const double x_lo = (drift > 0 ? -drift : 0.0) - pad;
    const double x_hi = width + (drift < 0 ? -drift : 0.0) + pad;
    const double lambda_layer = lambda_total / cfg.scene_depth;
    const double rate =
        lambda_layer / transit * (x_hi - x_lo) / (double(width) + 2.0 * pad);
    const int t_min = -int(std::ceil(transit)) - 2;
    const double expected = rate * double(frames - t_min);
    DERAIN_CHECK(t_min + warmup >= 0, ErrorCode::Internal, "render: wind table too small");

    Rng layer_rng = root.fork(0x100 + std::uint64_t(layer));
    std::uint64_t count = layer_rng.next_poisson(expected);
    for (std::uint64_t k = 0; k < count; ++k) {
      Trajectory tr;
      tr.id = next_id++;
      tr.layer = layer;
      tr.birth_frame = t_min + int(layer_rng.next_below(std::uint64_t(frames - t_min)));
      tr.x = layer_rng.uniform(float(x_lo), float(x_hi));
      tr.y = -ly - 2.0 * w_px - layer_rng.next_double() * vy;  // fractional phase
      tr.speed_frame = speed_frame;
      tr.speed_px_s = speed;
      tr.length = length;
      tr.width = w_px;
      tr.peak = peak;
      trajectories.push_back(tr);
    }
  }

  // advance every trajectory through time and rasterize the visible frames
  for (const Trajectory& tr : trajectories) {
    double hx = tr.x, hy = tr.y;
    for (int t = tr.birth_frame; t < frames; ++t) {
      const double ang = theta + wind_at(t);
      if (t >= 0) {
        const double tx = hx - tr.length * std::sin(ang);
        const double ty = hy - tr.length * std::cos(ang);
        const double reach = 3.0 * tr.width * 0.5 + 0.5;
        const bool visible = std::max(hx, tx) >= -reach && std::min(hx, tx) < width + reach &&
                             std::max(hy, ty) >= -reach && std::min(hy, ty) < height + reach;
        if (visible) {
          Tensor plane(Shape{height, width},
                       std::vector<float>(
                           out.streaks.data() + std::int64_t(t) * height * width,
                           out.streaks.data() + std::int64_t(t + 1) * height * width));
          draw_capsule(plane, hx, hy, tx, ty, tr.width, tr.peak, cfg.opacity);
          float* dst = out.streaks.data() + std::int64_t(t) * height * width;
          for (std::int64_t i = 0; i < std::int64_t(height) * width; ++i) dst[i] = plane[i];
          StreakSample s;
          s.frame = t;
          s.streak_id = tr.id;
          s.layer = tr.layer;
          s.head_x = hx;
          s.head_y = hy;
          s.angle_deg = ang * 180.0 / kPi;
          s.speed_px_s = tr.speed_px_s;
          s.length = tr.length;
          s.width = tr.width;
          out.log.push_back(s);
        }
        if (hy - tr.length * std::cos(ang) > height + 4.0 * tr.width) break;  // exited
      }
      hx += tr.speed_frame * std::sin(ang);
      hy += tr.speed_frame * std::cos(ang);
    }
  }
  return out;
}

RainTriplet composite(const Tensor& clean, const Tensor& s_raw) {
  DERAIN_CHECK(clean.rank() == 4, ErrorCode::ShapeMismatch,
               "composite: clean must be (T,C,H,W), got ", shape_str(clean.shape()));
  DERAIN_CHECK(s_raw.rank() == 4 && s_raw.dim(1) == 1, ErrorCode::ShapeMismatch,
               "composite: raw streaks must be (T,1,H,W), got ", shape_str(s_raw.shape()));
  DERAIN_CHECK(clean.dim(0) == s_raw.dim(0) && clean.dim(2) == s_raw.dim(2) &&
                   clean.dim(3) == s_raw.dim(3),
               ErrorCode::ShapeMismatch, "composite: clean ", shape_str(clean.shape()),
               " vs streaks ", shape_str(s_raw.shape()));
  const int t = clean.dim(0), c = clean.dim(1), h = clean.dim(2), w = clean.dim(3);
  const std::int64_t hw = std::int64_t(h) * w;
  RainTriplet out;
  out.c = clean;
  out.x = Tensor(clean.shape());
  out.s = Tensor(clean.shape());
  for (int ti = 0; ti < t; ++ti) {
    const float* sp = s_raw.data() + std::int64_t(ti) * hw;
    for (int ch = 0; ch < c; ++ch) {
      const float* cp = clean.data() + (std::int64_t(ti) * c + ch) * hw;
      float* xp = out.x.data() + (std::int64_t(ti) * c + ch) * hw;
      float* op = out.s.data() + (std::int64_t(ti) * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        float x = cp[i] + sp[i];
        x = x < 0.0f ? 0.0f : (x > 1.0f ? 1.0f : x);
        // settle to a float fixed point so X == C + S and S == X - C bit-exactly
        float s = x - cp[i];
        for (int it = 0; it < 4; ++it) {
          float x2 = cp[i] + s;
          if (x2 == x) break;
          x = x2;
          s = x - cp[i];
        }
        xp[i] = x;
        op[i] = s;
      }
    }
  }
  return out;
}

RainConfig sample_rain_config(const Config& r, Rng& rng) {
  RainConfig c;
  c.scale = rng.uniform(float(r.scale_min), float(r.scale_max));
  c.direction_deg = rng.uniform(float(r.direction_min), float(r.direction_max));
  c.density = rng.uniform(float(r.density_min), float(r.density_max));
  c.scene_depth = r.depth_min + int(rng.next_below(std::uint64_t(r.depth_max - r.depth_min + 1)));
  c.opacity = rng.uniform(float(r.opacity_min), float(r.opacity_max));
  c.falling_speed = rng.uniform(float(r.speed_min), float(r.speed_max));
  c.wind_variation_deg = rng.uniform(float(r.wind_min), float(r.wind_max));
  c.seed = rng.next_u64();
  return c;
}

static std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<DatasetEntry> build_dataset(const std::string& clean_root,
                                        const std::string& out_root, const Config& cfg,
                                        std::uint64_t seed) {
  cfg.validate();
  DERAIN_CHECK(fs::is_directory(clean_root), ErrorCode::Io, clean_root, " is not a directory");
  fs::create_directories(out_root);
  std::vector<DatasetEntry> entries;
  static const char* splits[3] = {"train", "val", "test"};
  Rng root(seed);
  for (int si = 0; si < 3; ++si) {
    fs::path split_dir = fs::path(clean_root) / splits[si];
    if (!fs::is_directory(split_dir)) continue;
    std::vector<std::string> videos;
    for (const auto& e : fs::directory_iterator(split_dir))
      if (e.is_directory()) videos.push_back(e.path().filename().string());
    std::sort(videos.begin(), videos.end());
    const int renders = si == 0 ? 3 : 1;  // three parameter draws per training video
    for (std::size_t vi = 0; vi < videos.size(); ++vi) {
      Tensor clean = read_video((split_dir / videos[vi]).string());
      for (int k = 0; k < renders; ++k) {
        Rng draw = root.fork((std::uint64_t(si) << 40) ^ (std::uint64_t(vi) << 8) ^ std::uint64_t(k));
        RainConfig rc = sample_rain_config(cfg, draw);
        RenderResult rr = render_streaks(clean.dim(0), clean.dim(2), clean.dim(3), rc);
        RainTriplet triplet = composite(clean, rr.streaks);
        std::string vid = videos[vi] + "_r" + std::to_string(k);
        fs::path base = fs::path(out_root) / splits[si] / vid;
        write_video((base / "clean").string(), triplet.c);
        write_video((base / "rain").string(), triplet.x);
        write_video((base / "streak").string(), clip01(rr.streaks));
        entries.push_back({splits[si], vid, rc});
      }
    }
  }
  std::ofstream manifest((fs::path(out_root) / "manifest.txt").string(), std::ios::binary);
  DERAIN_CHECK(manifest.is_open(), ErrorCode::Io, "cannot write manifest under ", out_root);
  for (const auto& e : entries) {
    manifest << "video=" << e.split << "/" << e.video_id << " scale=" << fmt_g(e.config.scale)
             << " direction=" << fmt_g(e.config.direction_deg)
             << " density=" << fmt_g(e.config.density)
             << " scene_depth=" << e.config.scene_depth
             << " opacity=" << fmt_g(e.config.opacity)
             << " falling_speed=" << fmt_g(e.config.falling_speed)
             << " wind_variation=" << fmt_g(e.config.wind_variation_deg)
             << " seed=" << e.config.seed << "\n";
  }
  DERAIN_CHECK(manifest.good(), ErrorCode::Io, "manifest write failed under ", out_root);
  return entries;
}

}  // namespace derain
