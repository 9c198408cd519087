#include "layers.hpp"

#include <cmath>

namespace derain {

Tensor init_conv_kernel(int cout, int cin, int kh, int kw, Rng& rng) {
  Tensor k(Shape{cout, cin, kh, kw});
  float limit = std::sqrt(6.0f / float((cin + cout) * kh * kw));
  for (std::int64_t i = 0; i < k.numel(); ++i) k[i] = rng.uniform(-limit, limit);
  return k;
}

// ------------------------------------------------------------- dense unit --

DenseUnitParams DenseUnitParams::create(ParamStore& store, const std::string& prefix, int c_in,
                                        Rng& rng) {
  DenseUnitParams p;
  p.c_in = c_in;
  for (int j = 0; j < 4; ++j) {
    int in = c_in + j * p.growth;
    p.w[std::size_t(j)] =
        store.add(prefix + ".l" + std::to_string(j) + ".w", init_conv_kernel(p.growth, in, 3, 3, rng));
    p.b[std::size_t(j)] =
        store.add(prefix + ".l" + std::to_string(j) + ".b", Tensor::zeros(Shape{p.growth}));
    p.s[std::size_t(j)] = store.add(prefix + ".l" + std::to_string(j) + ".slope",
                                    Tensor::full(Shape{p.growth}, 0.25f));
  }
  return p;
}

Var dense_unit_forward(Tape& t, ParamBinding& bind, const DenseUnitParams& p, Var x) {
  const Tensor& xv = t.value(x);
  int cdim = xv.rank() == 3 ? 0 : 1;
  DERAIN_CHECK(xv.dim(cdim) == p.c_in, ErrorCode::ShapeMismatch,
               "dense_unit: input has ", xv.dim(cdim), " channels, unit configured for ", p.c_in);
  std::vector<Var> feats{x};
  for (int j = 0; j < 4; ++j) {
    Var in = feats.size() == 1 ? feats[0] : t.concat_channels(feats);
    Var y = t.conv2d(in, bind.var(p.w[std::size_t(j)]), bind.var(p.b[std::size_t(j)]));
    y = t.prelu(y, bind.var(p.s[std::size_t(j)]));
    feats.push_back(y);
  }
  return t.concat_channels(feats);
}

// ------------------------------------------------------------ plain chain --

PlainChainParams PlainChainParams::create(ParamStore& store, const std::string& prefix,
                                          int c_in, int adapter_out, Rng& rng) {
  PlainChainParams p;
  p.c_in = c_in;
  p.adapter_out = adapter_out;
  for (int j = 0; j < 4; ++j) {
    int in = j == 0 ? c_in : p.width;
    p.w[std::size_t(j)] =
        store.add(prefix + ".l" + std::to_string(j) + ".w", init_conv_kernel(p.width, in, 3, 3, rng));
    p.b[std::size_t(j)] =
        store.add(prefix + ".l" + std::to_string(j) + ".b", Tensor::zeros(Shape{p.width}));
    p.s[std::size_t(j)] = store.add(prefix + ".l" + std::to_string(j) + ".slope",
                                    Tensor::full(Shape{p.width}, 0.25f));
  }
  if (adapter_out > 0) {
    p.aw = store.add(prefix + ".adapter.w", init_conv_kernel(adapter_out, p.width, 1, 1, rng));
    p.ab = store.add(prefix + ".adapter.b", Tensor::zeros(Shape{adapter_out}));
  }
  return p;
}

Var plain_chain_forward(Tape& t, ParamBinding& bind, const PlainChainParams& p, Var x) {
  Var y = x;
  for (int j = 0; j < 4; ++j) {
    y = t.conv2d(y, bind.var(p.w[std::size_t(j)]), bind.var(p.b[std::size_t(j)]));
    y = t.prelu(y, bind.var(p.s[std::size_t(j)]));
  }
  if (p.adapter_out > 0) y = t.conv2d(y, bind.var(p.aw), bind.var(p.ab));
  return y;
}

// ---------------------------------------------------------------- convlstm --

ConvLstmLayerParams ConvLstmLayerParams::create(ParamStore& store, const std::string& prefix,
                                                int in_ch, int hidden, Rng& rng) {
  ConvLstmLayerParams p;
  p.in_ch = in_ch;
  p.hidden = hidden;
  static const char* gate[4] = {"i", "f", "o", "g"};
  for (int g = 0; g < 4; ++g) {
    p.wz[std::size_t(g)] = store.add(prefix + ".wz" + gate[g],
                                     init_conv_kernel(hidden, in_ch, 3, 3, rng));
    p.wh[std::size_t(g)] = store.add(prefix + ".wh" + gate[g],
                                     init_conv_kernel(hidden, hidden, 3, 3, rng));
    p.b[std::size_t(g)] = store.add(prefix + ".b" + gate[g], Tensor::zeros(Shape{hidden}));
  }
  return p;
}

LstmStateVar zero_state(Tape& t, int hidden, int h, int w) {
  return {t.input(Tensor::zeros(Shape{hidden, h, w})),
          t.input(Tensor::zeros(Shape{hidden, h, w}))};
}

static std::array<Var, 4> bind4(ParamBinding& bind, const std::array<int, 4>& ids) {
  return {bind.var(ids[0]), bind.var(ids[1]), bind.var(ids[2]), bind.var(ids[3])};
}

LstmStateVar convlstm_step(Tape& t, ParamBinding& bind, const ConvLstmLayerParams& p, Var z,
                           LstmStateVar prev) {
  const Tensor& zv = t.value(z);
  const Tensor& hv = t.value(prev.h);
  DERAIN_CHECK(zv.rank() == 3, ErrorCode::ShapeMismatch,
               "convlstm_step: input must be (C,H,W), got ", shape_str(zv.shape()));
  DERAIN_CHECK(zv.dim(1) == hv.dim(1) && zv.dim(2) == hv.dim(2), ErrorCode::ShapeMismatch,
               "convlstm_step: input ", shape_str(zv.shape()), " vs state ",
               shape_str(hv.shape()));
  Var zg = t.conv2d_multi(z, bind4(bind, p.wz));
  std::array<Var, 1> one{zg};
  Var zg4 = t.stack_outer(std::span<const Var>(one));
  Var hg = t.conv2d_multi(prev.h, bind4(bind, p.wh));
  auto out = t.lstm_cell(zg4, 0, hg, bind4(bind, p.b), prev.m);
  return {out.h, out.m};
}

// ------------------------------------------------------------ bidir stack --

BidirStackParams BidirStackParams::create(ParamStore& store, const std::string& prefix,
                                          int in_ch, int hidden, Rng& rng) {
  BidirStackParams p;
  for (int layer = 0; layer < 2; ++layer) {
    int in = layer == 0 ? in_ch : 2 * hidden;
    p.fwd[std::size_t(layer)] = ConvLstmLayerParams::create(
        store, prefix + ".l" + std::to_string(layer) + ".fwd", in, hidden, rng);
    p.bwd[std::size_t(layer)] = ConvLstmLayerParams::create(
        store, prefix + ".l" + std::to_string(layer) + ".bwd", in, hidden, rng);
  }
  return p;
}

// one direction of one layer over a batched (T,C,H,W) input
static std::vector<Var> run_direction(Tape& t, ParamBinding& bind,
                                      const ConvLstmLayerParams& p, Var video, bool backward) {
  const Tensor& vv = t.value(video);
  int frames = vv.dim(0), h = vv.dim(2), w = vv.dim(3);
  Var zg = t.conv2d_multi(video, bind4(bind, p.wz));
  auto biases = bind4(bind, p.b);
  LstmStateVar state = zero_state(t, p.hidden, h, w);
  std::vector<Var> hs(std::size_t(frames));
  for (int i = 0; i < frames; ++i) {
    int frame = backward ? frames - 1 - i : i;
    Var hg = t.conv2d_multi(state.h, bind4(bind, p.wh));
    auto out = t.lstm_cell(zg, frame, hg, biases, state.m);
    state = {out.h, out.m};
    hs[std::size_t(frame)] = out.h;
  }
  return hs;
}

std::vector<Var> bidir_stack_forward_video(Tape& t, ParamBinding& bind,
                                           const BidirStackParams& p, Var video) {
  const Tensor& vv = t.value(video);
  DERAIN_CHECK(vv.rank() == 4, ErrorCode::ShapeMismatch,
               "bidir_stack: expected (T,C,H,W), got ", shape_str(vv.shape()));
  DERAIN_CHECK(vv.dim(0) >= 1, ErrorCode::InvalidArgument, "bidir_stack: empty sequence");
  int frames = vv.dim(0);
  Var in = video;
  std::vector<Var> out;
  for (int layer = 0; layer < 2; ++layer) {
    auto f = run_direction(t, bind, p.fwd[std::size_t(layer)], in, false);
    auto b = run_direction(t, bind, p.bwd[std::size_t(layer)], in, true);
    out.assign(std::size_t(frames), Var{});
    for (int i = 0; i < frames; ++i) {
      std::array<Var, 2> parts{f[std::size_t(i)], b[std::size_t(i)]};
      out[std::size_t(i)] = t.concat_channels(std::span<const Var>(parts));
    }
    if (layer == 0) in = t.stack_outer(std::span<const Var>(out.data(), out.size()));
  }
  return out;
}

std::vector<Var> bidir_stack_forward(Tape& t, ParamBinding& bind, const BidirStackParams& p,
                                     const std::vector<Var>& seq) {
  DERAIN_CHECK(!seq.empty(), ErrorCode::InvalidArgument, "bidir_stack: empty sequence");
  Var video = t.stack_outer(std::span<const Var>(seq.data(), seq.size()));
  return bidir_stack_forward_video(t, bind, p, video);
}

// ---------------------------------------------------------- reconstruction --

ReconstructionParams ReconstructionParams::create(ParamStore& store, const std::string& prefix,
                                                  int in_ch, int mid_ch, int out_ch, Rng& rng) {
  ReconstructionParams p;
  p.in_ch = in_ch;
  p.mid_ch = mid_ch;
  p.out_ch = out_ch;
  int plan[4] = {in_ch, mid_ch, mid_ch, out_ch};
  for (int k = 0; k < 3; ++k) {
    p.w[std::size_t(k)] = store.add(prefix + ".l" + std::to_string(k) + ".w",
                                    init_conv_kernel(plan[k + 1], plan[k], 3, 3, rng));
    p.b[std::size_t(k)] = store.add(prefix + ".l" + std::to_string(k) + ".b",
                                    Tensor::zeros(Shape{plan[k + 1]}));
    if (k < 2)
      p.s[std::size_t(k)] = store.add(prefix + ".l" + std::to_string(k) + ".slope",
                                      Tensor::full(Shape{plan[k + 1]}, 0.25f));
  }
  return p;
}

Var reconstruct(Tape& t, ParamBinding& bind, const ReconstructionParams& p, Var features) {
  const Tensor& fv = t.value(features);
  int cdim = fv.rank() == 3 ? 0 : 1;
  DERAIN_CHECK(fv.dim(cdim) == p.in_ch, ErrorCode::ShapeMismatch,
               "reconstruct: input has ", fv.dim(cdim), " channels, head expects ", p.in_ch);
  Var y = features;
  for (int k = 0; k < 3; ++k) {
    y = t.conv2d(y, bind.var(p.w[std::size_t(k)]), bind.var(p.b[std::size_t(k)]));
    if (k < 2) y = t.prelu(y, bind.var(p.s[std::size_t(k)]));
  }
  return y;
}

}  // namespace derain
