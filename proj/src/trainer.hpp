#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "config.hpp"
#include "model.hpp"
#include "storage.hpp"

namespace derain {

struct LossWeights {
  double alpha = 1.0;  // detection term
  double beta = 0.01;  // removal term
};

struct LossValue {
  double total = 0, detection = 0, removal = 0;
};

// total = alpha * mean_t MSE(S_hat_t, S_t) + beta * mean_t MSE(C_hat_t, C_t)
// Plain evaluation on tensors (no gradients).
LossValue loss_eval(const Tensor& s_hat, const Tensor& s, const Tensor& c_hat, const Tensor& c,
                    const LossWeights& w);

// Tape form: builds the weighted loss from per-frame outputs so backward()
// reaches every parameter. Returns the loss var plus the component values.
struct TapedLoss {
  Var total;
  double detection = 0, removal = 0;
};
TapedLoss loss_taped(Tape& t, const ForwardVars& fw, const Tensor& s, const Tensor& c,
                     const LossWeights& w, bool detach_detection);

// ---- Adam ----------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

class Adam {
 public:
  Adam(ParamStore& store, AdamConfig cfg);
  // applies one update from store grads; throws Numeric naming the parameter
  // if a gradient is not finite
  void step();
  void reset_moments();
  std::int64_t steps_taken() const { return t_; }
  const std::vector<Tensor>& m() const { return m_; }
  const std::vector<Tensor>& v() const { return v_; }
  void restore(std::vector<Tensor> m, std::vector<Tensor> v, std::int64_t t);

 private:
  ParamStore* store_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

// clips the global L2 norm of all gradients to max_norm (no-op if 0)
void clip_grad_norm(ParamStore& store, double max_norm);

// ---- training data --------------------------------------------------------

struct TripletCube {
  Tensor x, s, c;  // (T,C,H,W) each
};

// Aligned spatio-temporal crops. Tiles anchored at multiples of the stride;
// the final tile along each axis is re-anchored to the tail so the full
// extent is covered. Cube order is shuffled deterministically from the seed.
std::vector<TripletCube> crop_cubes(const TripletCube& video, int frames, int size, int stride,
                                    std::uint64_t seed);

// Loads every training triplet below root/train: X and C from the rain/clean
// frame dirs, with S reconstructed as X - C in float (exact on the loader's
// dyadic grid).
std::vector<TripletCube> load_training_cubes(const std::string& dataset_root, const Config& cfg,
                                             std::uint64_t seed);

// ---- the two-phase loop ----------------------------------------------------

struct TrainHooks {
  // called after each step; return true to stop early (phase 2 only)
  std::function<bool(int step, int phase, const LossValue&)> after_step;
};

struct TrainResult {
  std::string final_checkpoint;
  int steps_run = 0;
  double final_loss_d = 0, final_loss_r = 0;
};

TrainResult train(const std::vector<TripletCube>& cubes, TwoStreamNet& net, const Config& cfg,
                  const std::string& out_dir, std::uint64_t seed,
                  const TrainHooks& hooks = {});

}  // namespace derain
