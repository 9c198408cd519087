#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "error.hpp"

namespace derain {

// Dimension sizes, row-major, innermost dimension last (width).
using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Dense multi-dimensional float32 array. Frames and feature maps use
// (channel, height, width); videos (time, channel, height, width); cube sets
// add a leading segment dimension.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(std::size_t(shape_numel(shape_)), 0.0f) {}
  Tensor(Shape shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    DERAIN_CHECK(std::int64_t(data_.size()) == shape_numel(shape_), ErrorCode::ShapeMismatch,
                 "tensor: data length ", data_.size(), " does not match shape ", shape_str(shape_));
  }

  static Tensor full(Shape shape, float v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(float v) { return Tensor(Shape{}, {v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return int(shape_.size()); }
  int dim(int i) const { return shape_[std::size_t(i)]; }
  std::int64_t numel() const { return std::int64_t(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](std::int64_t i) { return data_[std::size_t(i)]; }
  float operator[](std::int64_t i) const { return data_[std::size_t(i)]; }

  // slow multi-index accessor, used by tests and fixtures
  float& at(std::initializer_list<int> idx);
  float at(std::initializer_list<int> idx) const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  void fill(float v) { for (auto& x : data_) x = v; }
  bool all_finite() const;
  float min() const;
  float max() const;
  double sum() const;      // accumulated in double
  double mean() const;

  std::vector<float>& raw() { return data_; }
  const std::vector<float>& raw() const { return data_; }

 private:
  Shape shape_;
  std::vector<float> data_;
};

// --- plain (non-differentiable) tensor math used by analysis/rainsynth ---

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor clip01(const Tensor& a);

// mean over all elements of (a-b)^2, accumulated in double
double mse(const Tensor& a, const Tensor& b);

// Views into the leading dimension: index i of a rank-n tensor as rank-(n-1).
// Copies; tensors are value types throughout.
Tensor slice_outer(const Tensor& t, int i);
void set_slice_outer(Tensor& t, int i, const Tensor& v);

// (T,C,H,W) or (C,H,W) color -> (H,W) luma (channel mean); 1-channel passes through
Tensor to_luma(const Tensor& frame);

}  // namespace derain
