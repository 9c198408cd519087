#pragma once

#include <array>
#include <string>
#include <vector>

#include "params.hpp"
#include "rng.hpp"
#include "tape.hpp"

namespace derain {

// Uniform init in +-sqrt(6/(fan_in+fan_out)); biases zero; PReLU slopes 0.25.
Tensor init_conv_kernel(int cout, int cin, int kh, int kw, Rng& rng);

// 4 convolutional layers, 3x3, growth 12; layer j consumes the concatenation
// of the input and all previous outputs (10 inter-layer connections), and the
// unit emits concat(input, y1..y4): c_in + 48 channels.
struct DenseUnitParams {
  int c_in = 0;
  int growth = 12;
  std::array<int, 4> w{}, b{}, s{};

  static DenseUnitParams create(ParamStore& store, const std::string& prefix, int c_in,
                                Rng& rng);
  int out_channels() const { return c_in + 4 * growth; }
};

Var dense_unit_forward(Tape& t, ParamBinding& bind, const DenseUnitParams& p, Var x);

// Ablation replacement: 4 plain 3x3 conv+PReLU layers (4 connections only),
// followed by a linear 1x1 width adapter so the recurrent layers always see
// a fixed channel count.
struct PlainChainParams {
  int c_in = 0;
  int width = 12;
  int adapter_out = 0;  // 0 = no adapter
  std::array<int, 4> w{}, b{}, s{};
  int aw = -1, ab = -1;

  static PlainChainParams create(ParamStore& store, const std::string& prefix, int c_in,
                                 int adapter_out, Rng& rng);
  int out_channels() const { return adapter_out > 0 ? adapter_out : width; }
};

Var plain_chain_forward(Tape& t, ParamBinding& bind, const PlainChainParams& p, Var x);

// One unidirectional ConvLSTM layer: eight 3x3 kernels (four from the input
// features, four from the hidden state) and four gate biases.
struct ConvLstmLayerParams {
  int in_ch = 0, hidden = 0;
  std::array<int, 4> wz{}, wh{}, b{};  // gate order: input, forget, output, modulation

  static ConvLstmLayerParams create(ParamStore& store, const std::string& prefix, int in_ch,
                                    int hidden, Rng& rng);
};

struct LstmStateVar {
  Var h, m;
};

LstmStateVar zero_state(Tape& t, int hidden, int h, int w);

// Single recurrence step: gates from conv(z) + conv(h_prev) + bias.
LstmStateVar convlstm_step(Tape& t, ParamBinding& bind, const ConvLstmLayerParams& p, Var z,
                           LstmStateVar prev);

// Two stacked bidirectional layers; per frame output is the channel
// concatenation of the forward and backward hidden states (2*hidden).
struct BidirStackParams {
  std::array<ConvLstmLayerParams, 2> fwd, bwd;

  static BidirStackParams create(ParamStore& store, const std::string& prefix, int in_ch,
                                 int hidden, Rng& rng);
};

// spec-facing form: a list of per-frame feature tensors
std::vector<Var> bidir_stack_forward(Tape& t, ParamBinding& bind, const BidirStackParams& p,
                                     const std::vector<Var>& seq);
// batched fast path: seq as one (T,C,H,W) value
std::vector<Var> bidir_stack_forward_video(Tape& t, ParamBinding& bind,
                                           const BidirStackParams& p, Var video);

// K=3 reconstruction head: 3x3 convs, PReLU after all but the last layer.
struct ReconstructionParams {
  int in_ch = 0, mid_ch = 0, out_ch = 0;
  std::array<int, 3> w{}, b{};
  std::array<int, 2> s{};

  static ReconstructionParams create(ParamStore& store, const std::string& prefix, int in_ch,
                                     int mid_ch, int out_ch, Rng& rng);
};

Var reconstruct(Tape& t, ParamBinding& bind, const ReconstructionParams& p, Var features);

}  // namespace derain
