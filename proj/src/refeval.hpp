#pragma once

#include <array>
#include <vector>

#include "kernels.hpp"
#include "model.hpp"
#include "tensor.hpp"

// Forward-only evaluator for the network, templated on the scalar type.
// Mirrors the tape ops operation-for-operation: with T=float its outputs are
// bit-identical to the tape forward (asserted in tests), which makes it the
// low-memory inference path; with T=double it provides the 64-bit evaluations
// behind the finite-difference gradient checks.
namespace derain::refeval {

template <typename T>
struct TensorT {
  Shape shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(Shape s) : shape(std::move(s)), data(std::size_t(shape_numel(shape)), T(0)) {}
  int dim(int i) const { return shape[std::size_t(i)]; }
  int rank() const { return int(shape.size()); }
  std::int64_t numel() const { return std::int64_t(data.size()); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
};

template <typename T>
TensorT<T> from_tensor(const Tensor& t) {
  TensorT<T> out(t.shape());
  for (std::int64_t i = 0; i < t.numel(); ++i) out.data[std::size_t(i)] = T(t[i]);
  return out;
}

template <typename T>
Tensor to_tensor(const TensorT<T>& t) {
  Tensor out(t.shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = float(t.data[std::size_t(i)]);
  return out;
}

template <typename T>
std::vector<TensorT<T>> params_of(const ParamStore& store) {
  std::vector<TensorT<T>> out;
  out.reserve(std::size_t(store.size()));
  for (int i = 0; i < store.size(); ++i) out.push_back(from_tensor<T>(store.at(i).value));
  return out;
}

template <typename T>
using Params = std::vector<TensorT<T>>;

template <typename T>
struct BatchView {
  int n, c, h, w;
};

template <typename T>
BatchView<T> view_of(const TensorT<T>& t) {
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2)};
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& k, const TensorT<T>* bias) {
  auto v = view_of(x);
  int cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  Shape out_shape = x.rank() == 3 ? Shape{cout, v.h, v.w} : Shape{v.n, cout, v.h, v.w};
  TensorT<T> out(out_shape);
  kernels::conv2d_batched(x.ptr(), v.n, v.c, v.h, v.w, k.ptr(), cout, kh, kw,
                          bias ? bias->ptr() : nullptr, out.ptr());
  return out;
}

template <typename T>
TensorT<T> conv2d_multi(const TensorT<T>& x, const TensorT<T>& k0, const TensorT<T>& k1,
                        const TensorT<T>& k2, const TensorT<T>& k3) {
  auto v = view_of(x);
  int cout = k0.dim(0), kh = k0.dim(2), kw = k0.dim(3);
  std::vector<T> stacked;
  stacked.reserve(std::size_t(4) * k0.numel());
  for (const TensorT<T>* k : {&k0, &k1, &k2, &k3})
    stacked.insert(stacked.end(), k->data.begin(), k->data.end());
  Shape out_shape = x.rank() == 3 ? Shape{4 * cout, v.h, v.w} : Shape{v.n, 4 * cout, v.h, v.w};
  TensorT<T> out(out_shape);
  kernels::conv2d_batched(x.ptr(), v.n, v.c, v.h, v.w, stacked.data(), 4 * cout, kh, kw,
                          nullptr, out.ptr());
  return out;
}

template <typename T>
TensorT<T> prelu(const TensorT<T>& x, const TensorT<T>& slope) {
  auto v = view_of(x);
  TensorT<T> out(x.shape);
  std::int64_t hw = std::int64_t(v.h) * v.w;
  for (int n = 0; n < v.n; ++n)
    for (int c = 0; c < v.c; ++c) {
      const T s = slope.data[std::size_t(c)];
      const T* src = x.ptr() + (std::int64_t(n) * v.c + c) * hw;
      T* dst = out.ptr() + (std::int64_t(n) * v.c + c) * hw;
      for (std::int64_t p = 0; p < hw; ++p) dst[p] = src[p] >= T(0) ? src[p] : s * src[p];
    }
  return out;
}

template <typename T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& parts) {
  auto v0 = view_of(*parts[0]);
  int total_c = 0;
  for (auto* p : parts) total_c += view_of(*p).c;
  Shape out_shape = parts[0]->rank() == 3 ? Shape{total_c, v0.h, v0.w}
                                          : Shape{v0.n, total_c, v0.h, v0.w};
  TensorT<T> out(out_shape);
  std::int64_t hw = std::int64_t(v0.h) * v0.w;
  for (int n = 0; n < v0.n; ++n) {
    std::int64_t coff = 0;
    for (auto* p : parts) {
      int pc = view_of(*p).c;
      const T* src = p->ptr() + std::int64_t(n) * pc * hw;
      T* dst = out.ptr() + (std::int64_t(n) * total_c + coff) * hw;
      for (std::int64_t i = 0; i < std::int64_t(pc) * hw; ++i) dst[i] = src[i];
      coff += pc;
    }
  }
  return out;
}

template <typename T>
TensorT<T> dense_unit(const Params<T>& ps, const DenseUnitParams& p, const TensorT<T>& x) {
  std::vector<TensorT<T>> feats;
  feats.push_back(x);  // copy; small fixtures only use this path
  for (int j = 0; j < 4; ++j) {
    TensorT<T> in;
    if (feats.size() == 1) {
      in = feats[0];
    } else {
      std::vector<const TensorT<T>*> parts;
      for (const auto& f : feats) parts.push_back(&f);
      in = concat_channels(parts);
    }
    TensorT<T> y = conv2d(in, ps[std::size_t(p.w[std::size_t(j)])],
                          &ps[std::size_t(p.b[std::size_t(j)])]);
    feats.push_back(prelu(y, ps[std::size_t(p.s[std::size_t(j)])]));
  }
  std::vector<const TensorT<T>*> parts;
  for (const auto& f : feats) parts.push_back(&f);
  return concat_channels(parts);
}

template <typename T>
TensorT<T> plain_chain(const Params<T>& ps, const PlainChainParams& p, const TensorT<T>& x) {
  TensorT<T> y = x;
  for (int j = 0; j < 4; ++j) {
    y = conv2d(y, ps[std::size_t(p.w[std::size_t(j)])], &ps[std::size_t(p.b[std::size_t(j)])]);
    y = prelu(y, ps[std::size_t(p.s[std::size_t(j)])]);
  }
  if (p.adapter_out > 0) y = conv2d(y, ps[std::size_t(p.aw)], &ps[std::size_t(p.ab)]);
  return y;
}

template <typename T>
struct CellState {
  TensorT<T> h, m;
};

// identical arithmetic to Tape::lstm_cell
template <typename T>
CellState<T> lstm_cell(const TensorT<T>& zgates, int t, const TensorT<T>& hgates,
                       const std::array<const TensorT<T>*, 4>& biases, const TensorT<T>& m_prev) {
  int c4 = zgates.dim(1), h = zgates.dim(2), w = zgates.dim(3);
  int c = c4 / 4;
  std::int64_t hw = std::int64_t(h) * w;
  const T* z = zgates.ptr() + std::int64_t(t) * c4 * hw;
  TensorT<T> gates[4] = {TensorT<T>(Shape{c, h, w}), TensorT<T>(Shape{c, h, w}),
                         TensorT<T>(Shape{c, h, w}), TensorT<T>(Shape{c, h, w})};
  for (int g = 0; g < 4; ++g) {
    const T* zrow = z + std::int64_t(g) * c * hw;
    const T* hrow = hgates.ptr() + std::int64_t(g) * c * hw;
    T* out = gates[g].ptr();
    for (int ch = 0; ch < c; ++ch) {
      const T b = biases[std::size_t(g)]->data[std::size_t(ch)];
      const T* zs = zrow + std::int64_t(ch) * hw;
      const T* hs = hrow + std::int64_t(ch) * hw;
      T* os = out + std::int64_t(ch) * hw;
      if (g == 3)
        for (std::int64_t p = 0; p < hw; ++p) os[p] = std::tanh(zs[p] + hs[p] + b);
      else
        for (std::int64_t p = 0; p < hw; ++p) os[p] = kernels::sigmoid(zs[p] + hs[p] + b);
    }
  }
  CellState<T> out{TensorT<T>(Shape{c, h, w}), TensorT<T>(Shape{c, h, w})};
  for (std::int64_t p = 0; p < std::int64_t(c) * hw; ++p) {
    T mv = gates[1].data[std::size_t(p)] * m_prev.data[std::size_t(p)] +
           gates[0].data[std::size_t(p)] * gates[3].data[std::size_t(p)];
    out.m.data[std::size_t(p)] = mv;
    out.h.data[std::size_t(p)] = gates[2].data[std::size_t(p)] * std::tanh(mv);
  }
  return out;
}

template <typename T>
std::vector<TensorT<T>> run_direction(const Params<T>& ps, const ConvLstmLayerParams& p,
                                      const TensorT<T>& video, bool backward) {
  int frames = video.dim(0), h = video.dim(2), w = video.dim(3);
  TensorT<T> zg = conv2d_multi(video, ps[std::size_t(p.wz[0])], ps[std::size_t(p.wz[1])],
                               ps[std::size_t(p.wz[2])], ps[std::size_t(p.wz[3])]);
  std::array<const TensorT<T>*, 4> biases{&ps[std::size_t(p.b[0])], &ps[std::size_t(p.b[1])],
                                          &ps[std::size_t(p.b[2])], &ps[std::size_t(p.b[3])]};
  CellState<T> state{TensorT<T>(Shape{p.hidden, h, w}), TensorT<T>(Shape{p.hidden, h, w})};
  std::vector<TensorT<T>> hs(std::size_t(frames));
  for (int i = 0; i < frames; ++i) {
    int frame = backward ? frames - 1 - i : i;
    TensorT<T> hg = conv2d_multi(state.h, ps[std::size_t(p.wh[0])], ps[std::size_t(p.wh[1])],
                                 ps[std::size_t(p.wh[2])], ps[std::size_t(p.wh[3])]);
    state = lstm_cell(zg, frame, hg, biases, state.m);
    hs[std::size_t(frame)] = state.h;
  }
  return hs;
}

template <typename T>
TensorT<T> stack_outer(const std::vector<TensorT<T>>& parts) {
  Shape out_shape;
  out_shape.push_back(int(parts.size()));
  for (int d : parts[0].shape) out_shape.push_back(d);
  TensorT<T> out(out_shape);
  std::int64_t n = parts[0].numel();
  for (std::size_t i = 0; i < parts.size(); ++i)
    for (std::int64_t k = 0; k < n; ++k)
      out.data[std::size_t(std::int64_t(i) * n + k)] = parts[i].data[std::size_t(k)];
  return out;
}

template <typename T>
std::vector<TensorT<T>> bidir_stack(const Params<T>& ps, const BidirStackParams& p,
                                    const TensorT<T>& video) {
  int frames = video.dim(0);
  TensorT<T> in = video;
  std::vector<TensorT<T>> out;
  for (int layer = 0; layer < 2; ++layer) {
    auto f = run_direction(ps, p.fwd[std::size_t(layer)], in, false);
    auto b = run_direction(ps, p.bwd[std::size_t(layer)], in, true);
    out.clear();
    for (int i = 0; i < frames; ++i)
      out.push_back(concat_channels<T>({&f[std::size_t(i)], &b[std::size_t(i)]}));
    if (layer == 0) in = stack_outer(out);
  }
  return out;
}

template <typename T>
TensorT<T> reconstruct(const Params<T>& ps, const ReconstructionParams& p, const TensorT<T>& x) {
  TensorT<T> y = x;
  for (int k = 0; k < 3; ++k) {
    y = conv2d(y, ps[std::size_t(p.w[std::size_t(k)])], &ps[std::size_t(p.b[std::size_t(k)])]);
    if (k < 2) y = prelu(y, ps[std::size_t(p.s[std::size_t(k)])]);
  }
  return y;
}

template <typename T>
TensorT<T> fuse(const TensorT<T>& r, const TensorT<T>& d, T theta) {
  TensorT<T> out(r.shape);
  for (std::int64_t i = 0; i < r.numel(); ++i) {
    T gate = (T(1) - theta) * d.data[std::size_t(i)] + theta;
    out.data[std::size_t(i)] = r.data[std::size_t(i)] * gate;
  }
  return out;
}

template <typename T>
struct ModelOut {
  std::vector<TensorT<T>> s_hat, c_hat;
};

template <typename T>
ModelOut<T> model_forward(const TwoStreamNet& net, const Params<T>& ps, const TensorT<T>& video) {
  const bool plain = net.cfg.variant == Variant::PlainCnn;
  TensorT<T> shared = plain ? plain_chain(ps, net.shared_plain, video)
                            : dense_unit(ps, net.shared_dense, video);
  TensorT<T> det_sp = plain ? plain_chain(ps, net.det_plain, shared)
                            : dense_unit(ps, net.det_dense, shared);
  TensorT<T> rem_sp = plain ? plain_chain(ps, net.rem_plain, shared)
                            : dense_unit(ps, net.rem_dense, shared);
  shared = TensorT<T>();
  std::vector<TensorT<T>> d_feat = bidir_stack(ps, net.det_stack, det_sp);
  det_sp = TensorT<T>();
  std::vector<TensorT<T>> r_feat = bidir_stack(ps, net.rem_stack, rem_sp);
  rem_sp = TensorT<T>();

  const T theta = net.cfg.variant == Variant::NoDetection ? T(1) : T(net.cfg.theta);
  ModelOut<T> out;
  for (int i = 0; i < net.cfg.segment_length; ++i) {
    TensorT<T> a = fuse(r_feat[std::size_t(i)], d_feat[std::size_t(i)], theta);
    out.s_hat.push_back(reconstruct(ps, net.det_recon, d_feat[std::size_t(i)]));
    out.c_hat.push_back(reconstruct(ps, net.rem_recon, a));
  }
  return out;
}

}  // namespace derain::refeval

namespace derain {

// Memory-lean forward pass for inference; bit-identical to the tape forward.
ModelOutput model_infer(const TwoStreamNet& net, const Tensor& video);

}  // namespace derain
