#include "tensor.hpp"

#include <cmath>

namespace derain {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    DERAIN_CHECK(d >= 0, ErrorCode::InvalidArgument, "negative dimension in shape ", shape_str(s));
    n *= d;
  }
  return n;
}

float& Tensor::at(std::initializer_list<int> idx) {
  DERAIN_CHECK(int(idx.size()) == rank(), ErrorCode::InvalidArgument,
               "at(): ", idx.size(), " indices for rank-", rank(), " tensor");
  std::int64_t off = 0;
  int i = 0;
  for (int v : idx) {
    DERAIN_CHECK(v >= 0 && v < shape_[std::size_t(i)], ErrorCode::InvalidArgument,
                 "at(): index ", v, " out of range for dim ", i, " of ", shape_str(shape_));
    off = off * shape_[std::size_t(i)] + v;
    ++i;
  }
  return data_[std::size_t(off)];
}

float Tensor::at(std::initializer_list<int> idx) const {
  return const_cast<Tensor*>(this)->at(idx);
}

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

float Tensor::min() const {
  float m = data_.empty() ? 0.0f : data_[0];
  for (float v : data_) m = v < m ? v : m;
  return m;
}

float Tensor::max() const {
  float m = data_.empty() ? 0.0f : data_[0];
  for (float v : data_) m = v > m ? v : m;
  return m;
}

double Tensor::sum() const {
  double s = 0.0;
  for (float v : data_) s += v;
  return s;
}

double Tensor::mean() const { return data_.empty() ? 0.0 : sum() / double(data_.size()); }

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  DERAIN_CHECK(a.same_shape(b), ErrorCode::ShapeMismatch,
               op, ": shapes ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor clip01(const Tensor& a) {
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    float v = a[i];
    out[i] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  }
  return out;
}

double mse(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    double d = double(a[i]) - double(b[i]);
    s += d * d;
  }
  return a.numel() ? s / double(a.numel()) : 0.0;
}

Tensor slice_outer(const Tensor& t, int i) {
  DERAIN_CHECK(t.rank() >= 1, ErrorCode::InvalidArgument, "slice_outer on rank-0 tensor");
  DERAIN_CHECK(i >= 0 && i < t.dim(0), ErrorCode::InvalidArgument,
               "slice_outer: index ", i, " out of range ", t.dim(0));
  Shape inner(t.shape().begin() + 1, t.shape().end());
  std::int64_t n = shape_numel(inner);
  Tensor out(inner);
  const float* src = t.data() + std::int64_t(i) * n;
  for (std::int64_t k = 0; k < n; ++k) out[k] = src[k];
  return out;
}

void set_slice_outer(Tensor& t, int i, const Tensor& v) {
  Shape inner(t.shape().begin() + 1, t.shape().end());
  DERAIN_CHECK(inner == v.shape(), ErrorCode::ShapeMismatch,
               "set_slice_outer: slice shape ", shape_str(v.shape()), " vs ", shape_str(inner));
  std::int64_t n = v.numel();
  float* dst = t.data() + std::int64_t(i) * n;
  for (std::int64_t k = 0; k < n; ++k) dst[k] = v[k];
}

Tensor to_luma(const Tensor& frame) {
  DERAIN_CHECK(frame.rank() == 3 || frame.rank() == 2, ErrorCode::InvalidArgument,
               "to_luma expects (C,H,W) or (H,W), got ", shape_str(frame.shape()));
  if (frame.rank() == 2) return frame;
  int c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  if (c == 1) return Tensor(Shape{h, w}, std::vector<float>(frame.data(), frame.data() + std::int64_t(h) * w));
  Tensor out(Shape{h, w});
  std::int64_t hw = std::int64_t(h) * w;
  for (std::int64_t p = 0; p < hw; ++p) {
    double s = 0.0;
    for (int ch = 0; ch < c; ++ch) s += frame[ch * hw + p];
    out[p] = float(s / c);
  }
  return out;
}

}  // namespace derain
