#include "trainer.hpp"

#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>

#include "rng.hpp"

namespace derain {

namespace fs = std::filesystem;

LossValue loss_eval(const Tensor& s_hat, const Tensor& s, const Tensor& c_hat, const Tensor& c,
                    const LossWeights& w) {
  DERAIN_CHECK(w.alpha >= 0 && w.beta >= 0 && w.alpha + w.beta > 0, ErrorCode::InvalidArgument,
               "loss weights alpha=", w.alpha, " beta=", w.beta, " invalid");
  LossValue out;
  out.detection = mse(s_hat, s);
  out.removal = mse(c_hat, c);
  out.total = w.alpha * out.detection + w.beta * out.removal;
  return out;
}

TapedLoss loss_taped(Tape& t, const ForwardVars& fw, const Tensor& s, const Tensor& c,
                     const LossWeights& w, bool detach_detection) {
  DERAIN_CHECK(w.alpha >= 0 && w.beta >= 0 && w.alpha + w.beta > 0, ErrorCode::InvalidArgument,
               "loss weights alpha=", w.alpha, " beta=", w.beta, " invalid");
  const int frames = int(fw.s_hat.size());
  DERAIN_CHECK(s.rank() == 4 && s.dim(0) == frames && c.dim(0) == frames, ErrorCode::ShapeMismatch,
               "loss: targets must be (T,C,H,W) with T=", frames);
  Var ld{}, lr{};
  for (int i = 0; i < frames; ++i) {
    Var st = t.input(slice_outer(s, i));
    Var ct = t.input(slice_outer(c, i));
    Var md = t.mse(fw.s_hat[std::size_t(i)], st);
    Var mr = t.mse(fw.c_hat[std::size_t(i)], ct);
    ld = ld.valid() ? t.add(ld, md) : md;
    lr = lr.valid() ? t.add(lr, mr) : mr;
  }
  ld = t.scale_shift(ld, 1.0f / float(frames), 0.0f);
  lr = t.scale_shift(lr, 1.0f / float(frames), 0.0f);
  TapedLoss out;
  out.detection = t.value(ld)[0];
  out.removal = t.value(lr)[0];
  if (detach_detection) {
    out.total = t.scale_shift(lr, float(w.beta), 0.0f);
  } else {
    Var wd = t.scale_shift(ld, float(w.alpha), 0.0f);
    Var wr = t.scale_shift(lr, float(w.beta), 0.0f);
    out.total = t.add(wd, wr);
  }
  return out;
}

// ------------------------------------------------------------------- adam --

Adam::Adam(ParamStore& store, AdamConfig cfg) : store_(&store), cfg_(cfg) {
  m_.reserve(std::size_t(store.size()));
  v_.reserve(std::size_t(store.size()));
  for (int i = 0; i < store.size(); ++i) {
    m_.push_back(Tensor::zeros(store.at(i).value.shape()));
    v_.push_back(Tensor::zeros(store.at(i).value.shape()));
  }
}

void Adam::reset_moments() {
  for (auto& t : m_) t.fill(0.0f);
  for (auto& t : v_) t.fill(0.0f);
  t_ = 0;
}

void Adam::restore(std::vector<Tensor> m, std::vector<Tensor> v, std::int64_t t) {
  DERAIN_CHECK(int(m.size()) == store_->size() && int(v.size()) == store_->size(),
               ErrorCode::InvalidArgument, "adam restore: state size mismatch");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (int i = 0; i < store_->size(); ++i) {
    auto& e = store_->at(i);
    DERAIN_CHECK(e.grad.all_finite(), ErrorCode::Numeric,
                 "non-finite gradient for parameter ", e.name);
    Tensor& m = m_[std::size_t(i)];
    Tensor& v = v_[std::size_t(i)];
    for (std::int64_t k = 0; k < e.value.numel(); ++k) {
      const double g = e.grad[k];
      const double mk = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
      const double vk = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
      m[k] = float(mk);
      v[k] = float(vk);
      const double mhat = mk / bc1;
      const double vhat = vk / bc2;
      e.value[k] = float(e.value[k] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

void clip_grad_norm(ParamStore& store, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (int i = 0; i < store.size(); ++i) {
    const Tensor& g = store.at(i).grad;
    for (std::int64_t k = 0; k < g.numel(); ++k) sq += double(g[k]) * g[k];
  }
  double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  float scale = float(max_norm / norm);
  for (int i = 0; i < store.size(); ++i) {
    Tensor& g = store.at(i).grad;
    for (std::int64_t k = 0; k < g.numel(); ++k) g[k] *= scale;
  }
}

// ------------------------------------------------------------------ crops --

static std::vector<int> tile_positions(int extent, int size, int stride) {
  std::vector<int> out;
  for (int p = 0; p + size <= extent; p += stride) out.push_back(p);
  if (out.empty() || out.back() + size < extent) out.push_back(extent - size);  // tail re-anchor
  return out;
}

static Tensor crop(const Tensor& v, int t0, int frames, int y0, int x0, int size) {
  int c = v.dim(1);
  Tensor out(Shape{frames, c, size, size});
  std::int64_t hw = std::int64_t(v.dim(2)) * v.dim(3);
  for (int t = 0; t < frames; ++t)
    for (int ch = 0; ch < c; ++ch) {
      const float* src = v.data() + ((std::int64_t(t0 + t) * c + ch) * hw);
      float* dst = out.data() + ((std::int64_t(t) * c + ch) * std::int64_t(size) * size);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          dst[std::int64_t(y) * size + x] = src[std::int64_t(y0 + y) * v.dim(3) + (x0 + x)];
    }
  return out;
}

std::vector<TripletCube> crop_cubes(const TripletCube& video, int frames, int size, int stride,
                                    std::uint64_t seed) {
  DERAIN_CHECK(video.x.rank() == 4, ErrorCode::InvalidArgument, "crop_cubes expects (T,C,H,W)");
  DERAIN_CHECK(video.x.same_shape(video.s) && video.x.same_shape(video.c),
               ErrorCode::ShapeMismatch, "crop_cubes: X/S/C shapes differ");
  const int vt = video.x.dim(0), vh = video.x.dim(2), vw = video.x.dim(3);
  DERAIN_CHECK(vt >= frames && vh >= size && vw >= size, ErrorCode::InvalidArgument,
               "crop_cubes: video ", shape_str(video.x.shape()), " smaller than cube (", frames,
               ",", size, ",", size, ")");
  auto ts = tile_positions(vt, frames, frames);  // temporal stride = cube length
  auto ys = tile_positions(vh, size, stride);
  auto xs = tile_positions(vw, size, stride);
  std::vector<TripletCube> cubes;
  cubes.reserve(ts.size() * ys.size() * xs.size());
  for (int t0 : ts)
    for (int y0 : ys)
      for (int x0 : xs)
        cubes.push_back({crop(video.x, t0, frames, y0, x0, size),
                         crop(video.s, t0, frames, y0, x0, size),
                         crop(video.c, t0, frames, y0, x0, size)});
  Rng rng(seed);
  rng.shuffle(cubes.data(), cubes.size());
  return cubes;
}

std::vector<TripletCube> load_training_cubes(const std::string& dataset_root, const Config& cfg,
                                             std::uint64_t seed) {
  fs::path train = fs::path(dataset_root) / "train";
  DERAIN_CHECK(fs::is_directory(train), ErrorCode::Io, "no train split under ", dataset_root);
  std::vector<std::string> videos;
  for (const auto& e : fs::directory_iterator(train))
    if (e.is_directory()) videos.push_back(e.path().string());
  std::sort(videos.begin(), videos.end());
  DERAIN_CHECK(!videos.empty(), ErrorCode::Io, "train split under ", dataset_root, " is empty");
  std::vector<TripletCube> cubes;
  std::uint64_t vid_index = 0;
  for (const auto& v : videos) {
    Tensor x = read_video((fs::path(v) / "rain").string());
    Tensor c = read_video((fs::path(v) / "clean").string());
    DERAIN_CHECK(x.same_shape(c), ErrorCode::ShapeMismatch, v, ": rain/clean shapes differ");
    TripletCube whole{x, sub(x, c), c};
    auto part = crop_cubes(whole, cfg.segment_length, cfg.crop_size, cfg.crop_stride,
                           seed + 0x51ed270 + vid_index);
    for (auto& cube : part) cubes.push_back(std::move(cube));
    ++vid_index;
  }
  Rng rng(Rng(seed).fork(0xda7a));
  rng.shuffle(cubes.data(), cubes.size());
  return cubes;
}

// ------------------------------------------------------------------ train --

TrainResult train(const std::vector<TripletCube>& cubes, TwoStreamNet& net, const Config& cfg,
                  const std::string& out_dir, std::uint64_t seed, const TrainHooks& hooks) {
  DERAIN_CHECK(!cubes.empty(), ErrorCode::InvalidArgument, "train: empty dataset");
  const Shape& cube_shape = cubes[0].x.shape();
  for (const auto& cube : cubes) {
    DERAIN_CHECK(cube.x.shape() == cube_shape && cube.s.shape() == cube_shape &&
                     cube.c.shape() == cube_shape,
                 ErrorCode::ShapeMismatch, "train: inconsistent cube shapes ",
                 shape_str(cube.x.shape()), " vs ", shape_str(cube_shape));
  }
  DERAIN_CHECK(cube_shape[0] == net.cfg.segment_length, ErrorCode::ShapeMismatch,
               "train: cubes have T=", cube_shape[0], " but the net expects T=",
               net.cfg.segment_length);

  fs::create_directories(out_dir);
  std::ofstream log((fs::path(out_dir) / "metrics.csv").string(), std::ios::binary);
  DERAIN_CHECK(log.is_open(), ErrorCode::Io, "cannot open metrics.csv under ", out_dir);
  log << "step,phase,alpha,beta,loss_D,loss_R,loss_total\n";

  Adam adam(net.params, AdamConfig{cfg.learning_rate});
  const bool detach_detection = net.cfg.variant == Variant::NoDetection;
  Rng batch_rng(Rng(seed).fork(0xba7c4));
  std::vector<std::size_t> order(cubes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // force shuffle on first use

  auto save_ckpt = [&](const char* name, int phase, const LossWeights& w, std::int64_t step) {
    CheckpointMeta meta;
    meta.step = step;
    meta.phase = phase;
    meta.seed = net.seed;
    meta.alpha = float(w.alpha);
    meta.beta = float(w.beta);
    std::string path = (fs::path(out_dir) / name).string();
    save_checkpoint(path, checkpoint_of(net, meta, &adam.m(), &adam.v()));
    return path;
  };

  TrainResult result;
  std::int64_t global_step = 0;
  std::deque<double> det_history;
  char line[256];

  for (int phase = 1; phase <= 2; ++phase) {
    LossWeights w = phase == 1 ? LossWeights{cfg.alpha_phase1, cfg.beta_phase1}
                               : LossWeights{cfg.alpha_phase2, cfg.beta_phase2};
    const int budget = phase == 1 ? cfg.phase1_steps : cfg.phase2_steps;
    adam.reset_moments();  // fresh optimizer statistics per phase
    det_history.clear();
    for (int step = 0; step < budget; ++step) {
      net.params.zero_grads();
      const int batch = int(std::min<std::size_t>(std::size_t(cfg.batch_size), cubes.size()));
      LossValue batch_loss;
      for (int b = 0; b < batch; ++b) {
        if (cursor >= order.size()) {
          batch_rng.shuffle(order.data(), order.size());
          cursor = 0;
        }
        const TripletCube& cube = cubes[order[cursor++]];
        Tape tape;
        ParamBinding bind(tape, net.params);
        Var video = tape.input(cube.x);
        ForwardVars fw = model_forward(tape, bind, net, video);
        TapedLoss tl = loss_taped(tape, fw, cube.s, cube.c, w, detach_detection);
        tape.backward(tl.total);
        bind.accumulate_grads(1.0f / float(batch));
        batch_loss.detection += tl.detection / batch;
        batch_loss.removal += tl.removal / batch;
      }
      batch_loss.total = w.alpha * batch_loss.detection + w.beta * batch_loss.removal;
      clip_grad_norm(net.params, cfg.grad_clip_norm);
      adam.step();
      for (int i = 0; i < net.params.size(); ++i)
        DERAIN_CHECK(net.params.at(i).value.all_finite(), ErrorCode::Numeric,
                     "parameter ", net.params.at(i).name, " became non-finite at step ",
                     global_step);
      ++global_step;
      std::snprintf(line, sizeof line, "%lld,%d,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                    (long long)global_step, phase, w.alpha, w.beta, batch_loss.detection,
                    batch_loss.removal, batch_loss.total);
      log << line;
      result.final_loss_d = batch_loss.detection;
      result.final_loss_r = batch_loss.removal;
      result.steps_run = int(global_step);

      if (cfg.checkpoint_interval > 0 && global_step % cfg.checkpoint_interval == 0) {
        std::snprintf(line, sizeof line, "ckpt_step%06lld.bin", (long long)global_step);
        save_ckpt(line, phase, w, global_step);
      }
      if (hooks.after_step && hooks.after_step(int(global_step), phase, batch_loss) && phase == 2)
        break;
      // optional plateau switch: leave phase 1 early once the detection loss
      // improves by less than 1% across the window
      if (phase == 1 && cfg.plateau_window > 0) {
        det_history.push_back(batch_loss.detection);
        if (int(det_history.size()) > 2 * cfg.plateau_window) det_history.pop_front();
        if (int(det_history.size()) == 2 * cfg.plateau_window) {
          double prev = 0, recent = 0;
          for (int i = 0; i < cfg.plateau_window; ++i) {
            prev += det_history[std::size_t(i)];
            recent += det_history[std::size_t(i + cfg.plateau_window)];
          }
          if (prev > 0 && (prev - recent) / prev < 0.01) break;
        }
      }
    }
  }
  log.flush();
  result.final_checkpoint = save_ckpt("ckpt_final.bin", 2,
                                      LossWeights{cfg.alpha_phase2, cfg.beta_phase2}, global_step);
  return result;
}

}  // namespace derain
