#include "tape.hpp"

#include <cmath>

#include "kernels.hpp"

namespace derain {

namespace {

// channel axis and conv batch view for rank-3 (C,H,W) / rank-4 (N,C,H,W)
struct ConvView {
  int n, c, h, w;
};

ConvView conv_view(const Tensor& t, const char* op) {
  DERAIN_CHECK(t.rank() == 3 || t.rank() == 4, ErrorCode::ShapeMismatch,
               op, ": expected rank-3 or rank-4 input, got ", shape_str(t.shape()));
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2)};
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

}  // namespace

Var Tape::new_value(Tensor v, bool needs_grad, int producer) {
  DERAIN_CHECK(v.all_finite(), ErrorCode::Numeric,
               "tape: non-finite values produced by op #", producer);
  int id = int(vals_.size());
  vals_.push_back(std::move(v));
  grads_.emplace_back();
  grad_alloc_.push_back(false);
  needs_grad_.push_back(needs_grad);
  producer_.push_back(producer);
  names_.emplace_back();
  return Var{id};
}

void Tape::check(Var v) const {
  DERAIN_CHECK(v.valid() && v.id < int(vals_.size()), ErrorCode::InvalidArgument,
               "tape: var id ", v.id, " not recorded on this tape");
}

Var Tape::input(Tensor v) { return new_value(std::move(v), false, -1); }

Var Tape::param(Tensor v, std::string name) {
  Var out = new_value(std::move(v), true, -1);
  names_[std::size_t(out.id)] = std::move(name);
  return out;
}

const Tensor& Tape::value(Var v) const {
  check(v);
  return vals_[std::size_t(v.id)];
}

const Tensor* Tape::grad_ptr(Var v) const {
  check(v);
  return grad_alloc_[std::size_t(v.id)] ? &grads_[std::size_t(v.id)] : nullptr;
}

const std::string& Tape::param_name(Var v) const {
  check(v);
  return names_[std::size_t(v.id)];
}

Tensor& Tape::grad_buf(int id) {
  if (!grad_alloc_[std::size_t(id)]) {
    grads_[std::size_t(id)] = Tensor::zeros(vals_[std::size_t(id)].shape());
    grad_alloc_[std::size_t(id)] = true;
  }
  return grads_[std::size_t(id)];
}

void Tape::release_grad(int id) {
  grads_[std::size_t(id)] = Tensor();
  grad_alloc_[std::size_t(id)] = false;
}

// ---------------------------------------------------------------- conv2d --

Var Tape::conv2d(Var x, Var kernel, Var bias) {
  check(x);
  check(kernel);
  const Tensor& xv = value(x);
  const Tensor& kv = value(kernel);
  ConvView v = conv_view(xv, "conv2d");
  DERAIN_CHECK(kv.rank() == 4, ErrorCode::ShapeMismatch,
               "conv2d: kernel must be rank-4 (out,in,kh,kw), got ", shape_str(kv.shape()));
  int cout = kv.dim(0), cin = kv.dim(1), kh = kv.dim(2), kw = kv.dim(3);
  DERAIN_CHECK(kh % 2 == 1 && kw % 2 == 1, ErrorCode::InvalidArgument,
               "conv2d: kernel size ", kh, "x", kw, " must be odd");
  DERAIN_CHECK(cin == v.c, ErrorCode::ShapeMismatch,
               "conv2d: input has ", v.c, " channels but kernel expects ", cin);
  const float* bias_data = nullptr;
  if (bias.valid()) {
    check(bias);
    const Tensor& bv = value(bias);
    DERAIN_CHECK(bv.rank() == 1 && bv.dim(0) == cout, ErrorCode::ShapeMismatch,
                 "conv2d: bias shape ", shape_str(bv.shape()), " vs out channels ", cout);
    bias_data = bv.data();
  }

  Shape out_shape = xv.rank() == 3 ? Shape{cout, v.h, v.w} : Shape{v.n, cout, v.h, v.w};
  Tensor out(out_shape);
  kernels::conv2d_batched(xv.data(), v.n, v.c, v.h, v.w, kv.data(), cout, kh, kw,
                          bias_data, out.data());

  Node node;
  node.op = Op::Conv2d;
  node.in = bias.valid() ? std::vector<int>{x.id, kernel.id, bias.id}
                         : std::vector<int>{x.id, kernel.id};
  bool ng = needs(x) || needs(kernel) || (bias.valid() && needs(bias));
  Var o = new_value(std::move(out), ng, int(nodes_.size()));
  node.out = o.id;
  nodes_.push_back(std::move(node));
  return o;
}

Var Tape::conv2d_multi(Var x, std::array<Var, 4> ks) {
  check(x);
  const Tensor& xv = value(x);
  ConvView v = conv_view(xv, "conv2d_multi");
  const Tensor& k0 = value(ks[0]);
  int cout = k0.dim(0), kh = k0.dim(2), kw = k0.dim(3);
  std::vector<float> stacked;
  stacked.reserve(std::size_t(4) * k0.numel());
  bool ng = needs(x);
  for (Var kvar : ks) {
    check(kvar);
    const Tensor& kv = value(kvar);
    DERAIN_CHECK(kv.same_shape(k0), ErrorCode::ShapeMismatch,
                 "conv2d_multi: kernel shapes differ: ", shape_str(kv.shape()), " vs ",
                 shape_str(k0.shape()));
    DERAIN_CHECK(kv.dim(1) == v.c, ErrorCode::ShapeMismatch,
                 "conv2d_multi: input has ", v.c, " channels but kernel expects ", kv.dim(1));
    stacked.insert(stacked.end(), kv.data(), kv.data() + kv.numel());
    ng = ng || needs(kvar);
  }
  Shape out_shape = xv.rank() == 3 ? Shape{4 * cout, v.h, v.w} : Shape{v.n, 4 * cout, v.h, v.w};
  Tensor out(out_shape);
  kernels::conv2d_batched(xv.data(), v.n, v.c, v.h, v.w, stacked.data(), 4 * cout, kh, kw,
                          nullptr, out.data());

  Node node;
  node.op = Op::ConvMulti;
  node.in = {x.id, ks[0].id, ks[1].id, ks[2].id, ks[3].id};
  Var o = new_value(std::move(out), ng, int(nodes_.size()));
  node.out = o.id;
  nodes_.push_back(std::move(node));
  return o;
}

// ----------------------------------------------------------- elementwise --

Var Tape::add(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  DERAIN_CHECK(av.same_shape(bv), ErrorCode::ShapeMismatch,
               "add: shapes ", shape_str(av.shape()), " vs ", shape_str(bv.shape()));
  Tensor out(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] + bv[i];
  Node node;
  node.op = Op::Add;
  node.in = {a.id, b.id};
  Var o = new_value(std::move(out), needs(a) || needs(b), int(nodes_.size()));
  node.out = o.id;
  nodes_.push_back(std::move(node));
  return o;
}

Var Tape::sub(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  DERAIN_CHECK(av.same_shape(bv), ErrorCode::ShapeMismatch,
               "sub: shapes ", shape_str(av.shape()), " vs ", shape_str(bv.shape()));
  Tensor out(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] - bv[i];
  Node node;
  node.op = Op::Sub;
  node.in = {a.id, b.id};
  Var o = new_value(std::move(out), needs(a) || needs(b), int(nodes_.size()));
  node.out = o.id;
  nodes_.push_back(std::move(node));
  return o;
}

Var Tape::mul(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  DERAIN_CHECK(av.same_shape(bv), ErrorCode::ShapeMismatch,
               "mul: shapes ", shape_str(av.shape()), " vs ", shape_str(bv.shape()));
  Tensor out(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] * bv[i];
  Node node;
  node.op = Op::Mul;
  node.in = {a.id, b.id};
  Var o = new_value(std::move(out), needs(a) || needs(b), int(nodes_.size()));
  node.out = o.id;
  nodes_.push_back(std::move(node));
  return o;
}

Var Tape::sigmoid(Var x) {
  check(x);
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i) out[i] = kernels::sigmoid(xv[i]);
  Node node;
  node.op = Op::Sigmoid;
  node.in = {x.id};
  Var o = new_value(std::move(out), needs(x), int(nodes_.size()));
  node.out = o.id;
  nodes_.push_back(std::move(node));
  return o;
}

Var Tape::tanh_(Var x) {
  check(x);
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i) out[i] = std::tanh(xv[i]);
  Node node;
  node.op = Op::Tanh;
  node.in = {x.id};
  Var o = new_value(std::move(out), needs(x), int(nodes_.size()));
  node.out = o.id;
  nodes_.push_back(std::move(node));
  return o;
}

Var Tape::prelu(Var x, Var slope) {
  check(x);
  check(slope);
  const Tensor& xv = value(x);
  const Tensor& sv = value(slope);
  ConvView v = conv_view(xv, "prelu");
  DERAIN_CHECK(sv.rank() == 1 && sv.dim(0) == v.c, ErrorCode::ShapeMismatch,
               "prelu: slope shape ", shape_str(sv.shape()), " vs ", v.c, " channels");
  Tensor out(xv.shape());
  std::int64_t hw = std::int64_t(v.h) * v.w;
  for (int n = 0; n < v.n; ++n)
    for (int c = 0; c < v.c; ++c) {
      const float s = sv[c];
      const float* src = xv.data() + (std::int64_t(n) * v.c + c) * hw;
      float* dst = out.data() + (std::int64_t(n) * v.c + c) * hw;
      for (std::int64_t p = 0; p < hw; ++p) dst[p] = src[p] >= 0.0f ? src[p] : s * src[p];
    }
  Node node;
  node.op = Op::Prelu;
  node.in = {x.id, slope.id};
  Var o = new_value(std::move(out), needs(x) || needs(slope), int(nodes_.size()));
  node.out = o.id;
  nodes_.push_back(std::move(node));
  return o;
}

Var Tape::scale_shift(Var x, float a, float b) {
  check(x);
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i) out[i] = a * xv[i] + b;
  Node node;
  node.op = Op::ScaleShift;
  node.in = {x.id};
  node.f0 = a;
  node.f1 = b;
  Var o = new_value(std::move(out), needs(x), int(nodes_.size()));
  node.out = o.id;
  nodes_.push_back(std::move(node));
  return o;
}

// ------------------------------------------------------ concat and slices --

Var Tape::concat_channels(std::span<const Var> parts) {
  DERAIN_CHECK(!parts.empty(), ErrorCode::InvalidArgument, "concat_channels: no inputs");
  for (Var p : parts) check(p);
  const Tensor& first = value(parts[0]);
  ConvView v0 = conv_view(first, "concat_channels");
  int total_c = 0;
  bool ng = false;
  for (Var p : parts) {
    ConvView v = conv_view(value(p), "concat_channels");
    DERAIN_CHECK(v.n == v0.n && v.h == v0.h && v.w == v0.w, ErrorCode::ShapeMismatch,
                 "concat_channels: spatial/batch mismatch ", shape_str(value(p).shape()),
                 " vs ", shape_str(first.shape()));
    total_c += v.c;
    ng = ng || needs(p);
  }
  Shape out_shape = first.rank() == 3 ? Shape{total_c, v0.h, v0.w}
                                      : Shape{v0.n, total_c, v0.h, v0.w};
  Tensor out(out_shape);
  std::int64_t hw = std::int64_t(v0.h) * v0.w;
  for (int n = 0; n < v0.n; ++n) {
    std::int64_t coff = 0;
    for (Var p : parts) {
      const Tensor& pv = value(p);
      int pc = conv_view(pv, "concat_channels").c;
      const float* src = pv.data() + std::int64_t(n) * pc * hw;
      float* dst = out.data() + (std::int64_t(n) * total_c + coff) * hw;
      for (std::int64_t i = 0; i < std::int64_t(pc) * hw; ++i) dst[i] = src[i];
      coff += pc;
    }
  }
  Node node;
  node.op = Op::Concat;
  node.in.reserve(parts.size());
  for (Var p : parts) node.in.push_back(p.id);
  Var o = new_value(std::move(out), ng, int(nodes_.size()));
  node.out = o.id;
  nodes_.push_back(std::move(node));
  return o;
}

std::vector<Var> Tape::split_channels(Var x, std::span<const int> sizes) {
  check(x);
  const Tensor& xv = value(x);
  ConvView v = conv_view(xv, "split_channels");
  int total = 0;
  for (int s : sizes) total += s;
  DERAIN_CHECK(total == v.c, ErrorCode::ShapeMismatch,
               "split_channels: sizes sum to ", total, " but input has ", v.c, " channels");
  std::vector<Var> out;
  std::int64_t hw = std::int64_t(v.h) * v.w;
  int coff = 0;
  for (int s : sizes) {
    Shape shape = xv.rank() == 3 ? Shape{s, v.h, v.w} : Shape{v.n, s, v.h, v.w};
    Tensor part(shape);
    for (int n = 0; n < v.n; ++n) {
      const float* src = xv.data() + (std::int64_t(n) * v.c + coff) * hw;
      float* dst = part.data() + std::int64_t(n) * s * hw;
      for (std::int64_t i = 0; i < std::int64_t(s) * hw; ++i) dst[i] = src[i];
    }
    Node node;
    node.op = Op::Slice;
    node.in = {x.id};
    node.i0 = coff;
    Var o = new_value(std::move(part), needs(x), int(nodes_.size()));
    node.out = o.id;
    nodes_.push_back(std::move(node));
    out.push_back(o);
    coff += s;
  }
  return out;
}

Var Tape::stack_outer(std::span<const Var> parts) {
  DERAIN_CHECK(!parts.empty(), ErrorCode::InvalidArgument, "stack_outer: no inputs");
  const Tensor& first = value(parts[0]);
  bool ng = false;
  for (Var p : parts) {
    check(p);
    DERAIN_CHECK(value(p).same_shape(first), ErrorCode::ShapeMismatch,
                 "stack_outer: element shapes differ: ", shape_str(value(p).shape()), " vs ",
                 shape_str(first.shape()));
    ng = ng || needs(p);
  }
  Shape out_shape;
  out_shape.push_back(int(parts.size()));
  for (int d : first.shape()) out_shape.push_back(d);
  Tensor out(out_shape);
  std::int64_t n = first.numel();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& pv = value(parts[i]);
    float* dst = out.data() + std::int64_t(i) * n;
    for (std::int64_t k = 0; k < n; ++k) dst[k] = pv[k];
  }
  Node node;
  node.op = Op::Stack;
  node.in.reserve(parts.size());
  for (Var p : parts) node.in.push_back(p.id);
  Var o = new_value(std::move(out), ng, int(nodes_.size()));
  node.out = o.id;
  nodes_.push_back(std::move(node));
  return o;
}

// ------------------------------------------------------------- reductions --

Var Tape::sum(Var x) {
  check(x);
  const Tensor& xv = value(x);
  double s = 0.0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) s += xv[i];
  Node node;
  node.op = Op::Sum;
  node.in = {x.id};
  Var o = new_value(Tensor::scalar(float(s)), needs(x), int(nodes_.size()));
  node.out = o.id;
  nodes_.push_back(std::move(node));
  return o;
}

Var Tape::mse(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  DERAIN_CHECK(av.same_shape(bv), ErrorCode::ShapeMismatch,
               "mse: shapes ", shape_str(av.shape()), " vs ", shape_str(bv.shape()));
  DERAIN_CHECK(av.numel() > 0, ErrorCode::InvalidArgument, "mse: empty tensors");
  double s = 0.0;
  for (std::int64_t i = 0; i < av.numel(); ++i) {
    double d = double(av[i]) - double(bv[i]);
    s += d * d;
  }
  Node node;
  node.op = Op::Mse;
  node.in = {a.id, b.id};
  Var o = new_value(Tensor::scalar(float(s / double(av.numel()))), needs(a) || needs(b),
                    int(nodes_.size()));
  node.out = o.id;
  nodes_.push_back(std::move(node));
  return o;
}

// -------------------------------------------------------------- lstm cell --

Tape::CellOut Tape::lstm_cell(Var zgates, int t, Var hgates, std::array<Var, 4> biases,
                              Var m_prev) {
  check(zgates);
  check(hgates);
  check(m_prev);
  const Tensor& zg = value(zgates);
  const Tensor& hg = value(hgates);
  const Tensor& mp = value(m_prev);
  DERAIN_CHECK(zg.rank() == 4, ErrorCode::ShapeMismatch,
               "lstm_cell: zgates must be (T,4C,H,W), got ", shape_str(zg.shape()));
  DERAIN_CHECK(t >= 0 && t < zg.dim(0), ErrorCode::InvalidArgument,
               "lstm_cell: frame ", t, " out of range ", zg.dim(0));
  int c4 = zg.dim(1), h = zg.dim(2), w = zg.dim(3);
  int c = c4 / 4;
  DERAIN_CHECK(c4 % 4 == 0, ErrorCode::ShapeMismatch, "lstm_cell: gate channels ", c4,
               " not divisible by 4");
  DERAIN_CHECK(hg.rank() == 3 && hg.dim(0) == c4 && hg.dim(1) == h && hg.dim(2) == w,
               ErrorCode::ShapeMismatch, "lstm_cell: hgates shape ", shape_str(hg.shape()),
               " vs expected (", c4, ",", h, ",", w, ")");
  DERAIN_CHECK(mp.rank() == 3 && mp.dim(0) == c && mp.dim(1) == h && mp.dim(2) == w,
               ErrorCode::ShapeMismatch, "lstm_cell: state shape ", shape_str(mp.shape()),
               " vs input spatial (", c, ",", h, ",", w, ")");
  const float* bias_data[4];
  bool ng = needs(zgates) || needs(hgates) || needs(m_prev);
  for (int g = 0; g < 4; ++g) {
    check(biases[g]);
    const Tensor& bv = value(biases[g]);
    DERAIN_CHECK(bv.rank() == 1 && bv.dim(0) == c, ErrorCode::ShapeMismatch,
                 "lstm_cell: bias ", g, " shape ", shape_str(bv.shape()), " vs ", c);
    bias_data[g] = bv.data();
    ng = ng || needs(biases[g]);
  }

  std::int64_t hw = std::int64_t(h) * w;
  const float* z = zg.data() + std::int64_t(t) * c4 * hw;
  Tensor gi(Shape{c, h, w}), gf(Shape{c, h, w}), go(Shape{c, h, w}), gg(Shape{c, h, w});
  Tensor m(Shape{c, h, w}), tm(Shape{c, h, w}), hh(Shape{c, h, w});
  Tensor* gates[4] = {&gi, &gf, &go, &gg};
  for (int g = 0; g < 4; ++g) {
    const float* zrow = z + std::int64_t(g) * c * hw;
    const float* hrow = hg.data() + std::int64_t(g) * c * hw;
    float* out = gates[g]->data();
    for (int ch = 0; ch < c; ++ch) {
      const float b = bias_data[g][ch];
      const float* zs = zrow + std::int64_t(ch) * hw;
      const float* hs = hrow + std::int64_t(ch) * hw;
      float* os = out + std::int64_t(ch) * hw;
      if (g == 3)
        for (std::int64_t p = 0; p < hw; ++p) os[p] = std::tanh(zs[p] + hs[p] + b);
      else
        for (std::int64_t p = 0; p < hw; ++p) os[p] = kernels::sigmoid(zs[p] + hs[p] + b);
    }
  }
  for (std::int64_t p = 0; p < std::int64_t(c) * hw; ++p) {
    float mv = gf[p] * mp[p] + gi[p] * gg[p];
    m[p] = mv;
    float tmv = std::tanh(mv);
    tm[p] = tmv;
    hh[p] = go[p] * tmv;
  }

  Node node;
  node.op = Op::LstmCell;
  node.in = {zgates.id, hgates.id, biases[0].id, biases[1].id, biases[2].id, biases[3].id,
             m_prev.id};
  node.i0 = t;
  node.saved.reserve(5);
  node.saved.push_back(std::move(gi));
  node.saved.push_back(std::move(gf));
  node.saved.push_back(std::move(go));
  node.saved.push_back(std::move(gg));
  node.saved.push_back(std::move(tm));
  Var hv = new_value(std::move(hh), ng, int(nodes_.size()));
  Var mv = new_value(std::move(m), ng, int(nodes_.size()));
  node.out = hv.id;
  node.out2 = mv.id;
  nodes_.push_back(std::move(node));
  return {hv, mv};
}

// --------------------------------------------------------------- backward --

void Tape::backward(Var loss) {
  check(loss);
  DERAIN_CHECK(value(loss).numel() == 1, ErrorCode::InvalidArgument,
               "backward: loss must be scalar, got shape ", shape_str(value(loss).shape()));
  grad_buf(loss.id)[0] = 1.0f;
  for (std::size_t ni = nodes_.size(); ni-- > 0;) {
    const Node& n = nodes_[ni];
    bool has = grad_alloc_[std::size_t(n.out)] ||
               (n.out2 >= 0 && grad_alloc_[std::size_t(n.out2)]);
    if (has) node_backward(n);
    release_grad(n.out);
    if (n.out2 >= 0) release_grad(n.out2);
  }
}

void Tape::node_backward(const Node& n) {
  auto want = [&](int vid) { return needs_grad_[std::size_t(vid)]; };
  const Tensor& dy = grad_alloc_[std::size_t(n.out)] ? grads_[std::size_t(n.out)]
                                                     : grad_buf(n.out);

  switch (n.op) {
    case Op::Conv2d: {
      const Tensor& xv = vals_[std::size_t(n.in[0])];
      const Tensor& kv = vals_[std::size_t(n.in[1])];
      ConvView v = conv_view(xv, "conv2d");
      int cout = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
      if (want(n.in[0]))
        kernels::conv2d_backward_input(dy.data(), v.n, cout, v.h, v.w, kv.data(), v.c, kh, kw,
                                       grad_buf(n.in[0]).data());
      if (want(n.in[1]))
        kernels::conv2d_backward_kernel(dy.data(), xv.data(), v.n, v.c, v.h, v.w, cout, kh, kw,
                                        grad_buf(n.in[1]).data());
      if (n.in.size() == 3 && want(n.in[2])) {
        Tensor& db = grad_buf(n.in[2]);
        std::int64_t hw = std::int64_t(v.h) * v.w;
        for (int img = 0; img < v.n; ++img)
          for (int o = 0; o < cout; ++o) {
            const float* src = dy.data() + (std::int64_t(img) * cout + o) * hw;
            double s = 0.0;
            for (std::int64_t p = 0; p < hw; ++p) s += src[p];
            db[o] += float(s);
          }
      }
      break;
    }
    case Op::ConvMulti: {
      const Tensor& xv = vals_[std::size_t(n.in[0])];
      const Tensor& k0 = vals_[std::size_t(n.in[1])];
      ConvView v = conv_view(xv, "conv2d_multi");
      int cout = k0.dim(0), kh = k0.dim(2), kw = k0.dim(3);
      std::int64_t ksz = k0.numel();
      if (want(n.in[0])) {
        std::vector<float> stacked;
        stacked.reserve(std::size_t(4) * ksz);
        for (int g = 0; g < 4; ++g) {
          const Tensor& kv = vals_[std::size_t(n.in[1 + g])];
          stacked.insert(stacked.end(), kv.data(), kv.data() + ksz);
        }
        kernels::conv2d_backward_input(dy.data(), v.n, 4 * cout, v.h, v.w, stacked.data(), v.c,
                                       kh, kw, grad_buf(n.in[0]).data());
      }
      std::vector<float> dk(std::size_t(4) * ksz, 0.0f);
      kernels::conv2d_backward_kernel(dy.data(), xv.data(), v.n, v.c, v.h, v.w, 4 * cout, kh, kw,
                                      dk.data());
      for (int g = 0; g < 4; ++g)
        if (want(n.in[1 + g])) {
          Tensor& gk = grad_buf(n.in[1 + g]);
          const float* src = dk.data() + std::int64_t(g) * ksz;
          for (std::int64_t i = 0; i < ksz; ++i) gk[i] += src[i];
        }
      break;
    }
    case Op::Add: {
      for (int k = 0; k < 2; ++k)
        if (want(n.in[std::size_t(k)])) {
          Tensor& g = grad_buf(n.in[std::size_t(k)]);
          for (std::int64_t i = 0; i < dy.numel(); ++i) g[i] += dy[i];
        }
      break;
    }
    case Op::Sub: {
      if (want(n.in[0])) {
        Tensor& g = grad_buf(n.in[0]);
        for (std::int64_t i = 0; i < dy.numel(); ++i) g[i] += dy[i];
      }
      if (want(n.in[1])) {
        Tensor& g = grad_buf(n.in[1]);
        for (std::int64_t i = 0; i < dy.numel(); ++i) g[i] -= dy[i];
      }
      break;
    }
    case Op::Mul: {
      const Tensor& av = vals_[std::size_t(n.in[0])];
      const Tensor& bv = vals_[std::size_t(n.in[1])];
      if (want(n.in[0])) {
        Tensor& g = grad_buf(n.in[0]);
        for (std::int64_t i = 0; i < dy.numel(); ++i) g[i] += dy[i] * bv[i];
      }
      if (want(n.in[1])) {
        Tensor& g = grad_buf(n.in[1]);
        for (std::int64_t i = 0; i < dy.numel(); ++i) g[i] += dy[i] * av[i];
      }
      break;
    }
    case Op::Sigmoid: {
      if (!want(n.in[0])) break;
      const Tensor& yv = vals_[std::size_t(n.out)];
      Tensor& g = grad_buf(n.in[0]);
      for (std::int64_t i = 0; i < dy.numel(); ++i) g[i] += dy[i] * yv[i] * (1.0f - yv[i]);
      break;
    }
    case Op::Tanh: {
      if (!want(n.in[0])) break;
      const Tensor& yv = vals_[std::size_t(n.out)];
      Tensor& g = grad_buf(n.in[0]);
      for (std::int64_t i = 0; i < dy.numel(); ++i) g[i] += dy[i] * (1.0f - yv[i] * yv[i]);
      break;
    }
    case Op::Prelu: {
      const Tensor& xv = vals_[std::size_t(n.in[0])];
      const Tensor& sv = vals_[std::size_t(n.in[1])];
      ConvView v = conv_view(xv, "prelu");
      std::int64_t hw = std::int64_t(v.h) * v.w;
      if (want(n.in[0])) {
        Tensor& g = grad_buf(n.in[0]);
        for (int img = 0; img < v.n; ++img)
          for (int c = 0; c < v.c; ++c) {
            const float s = sv[c];
            std::int64_t base = (std::int64_t(img) * v.c + c) * hw;
            for (std::int64_t p = 0; p < hw; ++p)
              g[base + p] += dy[base + p] * (xv[base + p] >= 0.0f ? 1.0f : s);
          }
      }
      if (want(n.in[1])) {
        Tensor& g = grad_buf(n.in[1]);
        for (int img = 0; img < v.n; ++img)
          for (int c = 0; c < v.c; ++c) {
            std::int64_t base = (std::int64_t(img) * v.c + c) * hw;
            double s = 0.0;
            for (std::int64_t p = 0; p < hw; ++p)
              if (xv[base + p] < 0.0f) s += double(dy[base + p]) * xv[base + p];
            g[c] += float(s);
          }
      }
      break;
    }
    case Op::ScaleShift: {
      if (!want(n.in[0])) break;
      Tensor& g = grad_buf(n.in[0]);
      for (std::int64_t i = 0; i < dy.numel(); ++i) g[i] += dy[i] * n.f0;
      break;
    }
    case Op::Concat: {
      const Tensor& out = vals_[std::size_t(n.out)];
      ConvView vo = conv_view(out, "concat_channels");
      std::int64_t hw = std::int64_t(vo.h) * vo.w;
      std::int64_t coff = 0;
      for (int vid : n.in) {
        const Tensor& pv = vals_[std::size_t(vid)];
        int pc = conv_view(pv, "concat_channels").c;
        if (want(vid)) {
          Tensor& g = grad_buf(vid);
          for (int img = 0; img < vo.n; ++img) {
            const float* src = dy.data() + (std::int64_t(img) * vo.c + coff) * hw;
            float* dst = g.data() + std::int64_t(img) * pc * hw;
            for (std::int64_t i = 0; i < std::int64_t(pc) * hw; ++i) dst[i] += src[i];
          }
        }
        coff += pc;
      }
      break;
    }
    case Op::Slice: {
      if (!want(n.in[0])) break;
      const Tensor& xv = vals_[std::size_t(n.in[0])];
      const Tensor& out = vals_[std::size_t(n.out)];
      ConvView v = conv_view(xv, "split_channels");
      int pc = conv_view(out, "split_channels").c;
      std::int64_t hw = std::int64_t(v.h) * v.w;
      Tensor& g = grad_buf(n.in[0]);
      for (int img = 0; img < v.n; ++img) {
        const float* src = dy.data() + std::int64_t(img) * pc * hw;
        float* dst = g.data() + (std::int64_t(img) * v.c + n.i0) * hw;
        for (std::int64_t i = 0; i < std::int64_t(pc) * hw; ++i) dst[i] += src[i];
      }
      break;
    }
    case Op::Stack: {
      std::int64_t nelem = vals_[std::size_t(n.in[0])].numel();
      for (std::size_t k = 0; k < n.in.size(); ++k) {
        if (!want(n.in[k])) continue;
        Tensor& g = grad_buf(n.in[k]);
        const float* src = dy.data() + std::int64_t(k) * nelem;
        for (std::int64_t i = 0; i < nelem; ++i) g[i] += src[i];
      }
      break;
    }
    case Op::Sum: {
      if (!want(n.in[0])) break;
      Tensor& g = grad_buf(n.in[0]);
      const float d = dy[0];
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += d;
      break;
    }
    case Op::Mse: {
      const Tensor& av = vals_[std::size_t(n.in[0])];
      const Tensor& bv = vals_[std::size_t(n.in[1])];
      const float scale = 2.0f * dy[0] / float(av.numel());
      if (want(n.in[0])) {
        Tensor& g = grad_buf(n.in[0]);
        for (std::int64_t i = 0; i < av.numel(); ++i) g[i] += scale * (av[i] - bv[i]);
      }
      if (want(n.in[1])) {
        Tensor& g = grad_buf(n.in[1]);
        for (std::int64_t i = 0; i < av.numel(); ++i) g[i] -= scale * (av[i] - bv[i]);
      }
      break;
    }
    case Op::LstmCell: {
      const Tensor& gi = n.saved[0];
      const Tensor& gf = n.saved[1];
      const Tensor& go = n.saved[2];
      const Tensor& gg = n.saved[3];
      const Tensor& tm = n.saved[4];
      const Tensor& mp = vals_[std::size_t(n.in[6])];
      std::int64_t cn = gi.numel();
      int c = gi.dim(0), h = gi.dim(1), w = gi.dim(2);
      std::int64_t hw = std::int64_t(h) * w;

      const bool has_h = grad_alloc_[std::size_t(n.out)];
      const bool has_m = grad_alloc_[std::size_t(n.out2)];
      const Tensor* dh = has_h ? &grads_[std::size_t(n.out)] : nullptr;
      const Tensor* dm_ext = has_m ? &grads_[std::size_t(n.out2)] : nullptr;

      Tensor dpre_i(gi.shape()), dpre_f(gi.shape()), dpre_o(gi.shape()), dpre_g(gi.shape());
      Tensor dm_prev_add(gi.shape());
      for (std::int64_t i = 0; i < cn; ++i) {
        float dhv = dh ? (*dh)[i] : 0.0f;
        float dmv = dm_ext ? (*dm_ext)[i] : 0.0f;
        float dov = dhv * tm[i];
        float dtm = dhv * go[i];
        float dmt = dmv + dtm * (1.0f - tm[i] * tm[i]);
        float dfv = dmt * mp[i];
        float div = dmt * gg[i];
        float dgv = dmt * gi[i];
        dm_prev_add[i] = dmt * gf[i];
        dpre_i[i] = div * gi[i] * (1.0f - gi[i]);
        dpre_f[i] = dfv * gf[i] * (1.0f - gf[i]);
        dpre_o[i] = dov * go[i] * (1.0f - go[i]);
        dpre_g[i] = dgv * (1.0f - gg[i] * gg[i]);
      }
      const Tensor* dpres[4] = {&dpre_i, &dpre_f, &dpre_o, &dpre_g};
      if (want(n.in[0])) {
        Tensor& g = grad_buf(n.in[0]);
        float* base = g.data() + std::int64_t(n.i0) * 4 * c * hw;
        for (int gg2 = 0; gg2 < 4; ++gg2) {
          const Tensor& dp = *dpres[gg2];
          float* dst = base + std::int64_t(gg2) * c * hw;
          for (std::int64_t i = 0; i < cn; ++i) dst[i] += dp[i];
        }
      }
      if (want(n.in[1])) {
        Tensor& g = grad_buf(n.in[1]);
        for (int gg2 = 0; gg2 < 4; ++gg2) {
          const Tensor& dp = *dpres[gg2];
          float* dst = g.data() + std::int64_t(gg2) * c * hw;
          for (std::int64_t i = 0; i < cn; ++i) dst[i] += dp[i];
        }
      }
      for (int gg2 = 0; gg2 < 4; ++gg2) {
        if (!want(n.in[2 + gg2])) continue;
        Tensor& g = grad_buf(n.in[2 + gg2]);
        const Tensor& dp = *dpres[gg2];
        for (int ch = 0; ch < c; ++ch) {
          double s = 0.0;
          const float* src = dp.data() + std::int64_t(ch) * hw;
          for (std::int64_t p = 0; p < hw; ++p) s += src[p];
          g[ch] += float(s);
        }
      }
      if (want(n.in[6])) {
        Tensor& g = grad_buf(n.in[6]);
        for (std::int64_t i = 0; i < cn; ++i) g[i] += dm_prev_add[i];
      }
      break;
    }
  }
}

}  // namespace derain
