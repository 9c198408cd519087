#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace derain {

// Handle to a value recorded on a tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode gradient tape. Operations execute eagerly and record enough
// to replay the graph backward in exact reverse order. Values are float32;
// a tape is confined to one thread of control.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // leaves
  Var input(Tensor v);                    // constant, no gradient tracked
  Var param(Tensor v, std::string name);  // gradient kept after backward()

  // primitive ops (pure; inputs are never modified)
  Var conv2d(Var x, Var kernel, Var bias);  // "same" zero padding, stride 1
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var sigmoid(Var x);
  Var tanh_(Var x);
  Var prelu(Var x, Var slope);              // slope: one value per channel
  Var scale_shift(Var x, float a, float b); // a*x + b
  Var concat_channels(std::span<const Var> parts);
  std::vector<Var> split_channels(Var x, std::span<const int> sizes);
  Var stack_outer(std::span<const Var> parts);  // T rank-k -> rank-(k+1)
  Var sum(Var x);          // scalar
  Var mse(Var a, Var b);   // scalar, mean of squared difference

  // fused recurrent ops (same math as the primitives, fewer intermediates)
  // x:(N,Cin,H,W) with four kernels (Cout,Cin,kh,kw) -> (N,4*Cout,H,W)
  Var conv2d_multi(Var x, std::array<Var, 4> kernels);
  struct CellOut {
    Var h, m;
  };
  // One ConvLSTM recurrence step given precomputed gate convolutions:
  // zgates:(T,4C,H,W) at frame t, hgates:(4C,H,W), biases 4x(C), m_prev:(C,H,W).
  CellOut lstm_cell(Var zgates, int t, Var hgates, std::array<Var, 4> biases, Var m_prev);

  void backward(Var loss);  // loss must be scalar

  const Tensor& value(Var v) const;
  // Gradient of the last backward() w.r.t. v; null if no gradient reached it.
  const Tensor* grad_ptr(Var v) const;
  const std::string& param_name(Var v) const;

  std::size_t num_values() const { return vals_.size(); }

 private:
  enum class Op {
    Conv2d, Add, Sub, Mul, Sigmoid, Tanh, Prelu, ScaleShift,
    Concat, Slice, Stack, Sum, Mse, ConvMulti, LstmCell,
  };

  struct Node {
    Op op;
    int out = -1, out2 = -1;
    std::vector<int> in;
    int i0 = 0;
    float f0 = 0.0f, f1 = 0.0f;
    std::vector<Tensor> saved;
  };

  Var new_value(Tensor v, bool needs_grad, int producer);
  Tensor& grad_buf(int id);  // allocates zeros on first touch
  void release_grad(int id);
  bool needs(Var v) const { return needs_grad_[std::size_t(v.id)]; }
  void check(Var v) const;
  void node_backward(const Node& n);

  std::vector<Tensor> vals_;
  std::vector<Tensor> grads_;          // empty shape == not allocated
  std::vector<bool> grad_alloc_;
  std::vector<bool> needs_grad_;
  std::vector<int> producer_;          // node index or -1 for leaves
  std::vector<std::string> names_;     // params only; empty otherwise
  std::vector<Node> nodes_;
};

}  // namespace derain
