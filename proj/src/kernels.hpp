#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <vector>

namespace derain::kernels {

// Row-major GEMM: C(m x n) = A(m x k) * B(k x n), optionally accumulating.
template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int n, int k, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> ma(a, m, k);
  Eigen::Map<const Mat> mb(b, k, n);
  Eigen::Map<Mat> mc(c, m, n);
  if (accumulate)
    mc.noalias() += ma * mb;
  else
    mc.noalias() = ma * mb;
}

// im2col with "same" zero padding, stride 1, odd kernel.
// src: (N, C, H, W); col: (C*kh*kw) x (N*H*W), columns ordered (n, y, x).
template <typename T>
void im2col(const T* src, int n, int c, int h, int w, int kh, int kw, T* col) {
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const std::int64_t hw = std::int64_t(h) * w;
  const std::int64_t cols = std::int64_t(n) * hw;
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = col + ((std::int64_t(ch) * kh + ky) * kw + kx) * cols;
        const int dy = ky - ph, dx = kx - pw;
        for (int img = 0; img < n; ++img) {
          const T* plane = src + (std::int64_t(img) * c + ch) * hw;
          T* out = row + std::int64_t(img) * hw;
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            T* orow = out + std::int64_t(y) * w;
            if (sy < 0 || sy >= h) {
              for (int x = 0; x < w; ++x) orow[x] = T(0);
              continue;
            }
            const T* srow = plane + std::int64_t(sy) * w;
            int x = 0;
            for (; x < -dx && x < w; ++x) orow[x] = T(0);
            int xend = w - dx < w ? w - dx : w;
            for (; x < xend; ++x) orow[x] = srow[x + dx];
            for (; x < w; ++x) orow[x] = T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds col back into (N, C, H, W).
template <typename T>
void col2im_add(const T* col, int n, int c, int h, int w, int kh, int kw, T* dst) {
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const std::int64_t hw = std::int64_t(h) * w;
  const std::int64_t cols = std::int64_t(n) * hw;
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = col + ((std::int64_t(ch) * kh + ky) * kw + kx) * cols;
        const int dy = ky - ph, dx = kx - pw;
        for (int img = 0; img < n; ++img) {
          T* plane = dst + (std::int64_t(img) * c + ch) * hw;
          const T* in = row + std::int64_t(img) * hw;
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            const T* irow = in + std::int64_t(y) * w;
            T* drow = plane + std::int64_t(sy) * w;
            int x0 = dx < 0 ? -dx : 0;
            int x1 = w - dx < w ? w - dx : w;
            for (int x = x0; x < x1; ++x) drow[x + dx] += irow[x];
          }
        }
      }
    }
  }
}

// scratch buffers reused across conv calls (single-threaded core)
template <typename T>
std::vector<T>& scratch(int which) {
  static thread_local std::vector<T> bufs[3];
  return bufs[which];
}

// Convolution with "same" zero padding over a batch.
// x: (N,Cin,H,W), k: (Cout,Cin,kh,kw), bias: (Cout) or null -> y: (N,Cout,H,W)
template <typename T>
void conv2d_batched(const T* x, int n, int cin, int h, int w,
                    const T* k, int cout, int kh, int kw,
                    const T* bias, T* y) {
  const std::int64_t hw = std::int64_t(h) * w;
  const std::int64_t cols = std::int64_t(n) * hw;
  const std::int64_t krows = std::int64_t(cin) * kh * kw;
  auto& col = scratch<T>(0);
  col.resize(std::size_t(krows * cols));
  im2col(x, n, cin, h, w, kh, kw, col.data());
  auto& prod = scratch<T>(1);
  prod.resize(std::size_t(std::int64_t(cout) * cols));
  gemm(k, col.data(), prod.data(), cout, int(cols), int(krows), false);
  // (Cout, n*hw) -> (n, Cout, hw)
  for (int img = 0; img < n; ++img) {
    for (int o = 0; o < cout; ++o) {
      const T* src = prod.data() + std::int64_t(o) * cols + std::int64_t(img) * hw;
      T* dst = y + (std::int64_t(img) * cout + o) * hw;
      const T b = bias ? bias[o] : T(0);
      for (std::int64_t p = 0; p < hw; ++p) dst[p] = src[p] + b;
    }
  }
}

// Gradient w.r.t. conv input: correlation of dy with the flipped kernel,
// computed as another same-padding convolution so it reuses the fast path.
// dy: (N,Cout,H,W), k: (Cout,Cin,kh,kw) -> accumulate into dx: (N,Cin,H,W)
template <typename T>
void conv2d_backward_input(const T* dy, int n, int cout, int h, int w,
                           const T* k, int cin, int kh, int kw, T* dx) {
  // build flipped, transposed kernel: kt[ci][co][ky][kx] = k[co][ci][kh-1-ky][kw-1-kx]
  auto& kt = scratch<T>(2);
  kt.resize(std::size_t(std::int64_t(cin) * cout * kh * kw));
  for (int o = 0; o < cout; ++o)
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx)
          kt[((std::int64_t(ci) * cout + o) * kh + (kh - 1 - ky)) * kw + (kw - 1 - kx)] =
              k[((std::int64_t(o) * cin + ci) * kh + ky) * kw + kx];
  const std::int64_t hw = std::int64_t(h) * w;
  const std::int64_t cols = std::int64_t(n) * hw;
  const std::int64_t krows = std::int64_t(cout) * kh * kw;
  auto& col = scratch<T>(0);
  col.resize(std::size_t(krows * cols));
  im2col(dy, n, cout, h, w, kh, kw, col.data());
  auto& prod = scratch<T>(1);
  prod.resize(std::size_t(std::int64_t(cin) * cols));
  gemm(kt.data(), col.data(), prod.data(), cin, int(cols), int(krows), false);
  for (int img = 0; img < n; ++img)
    for (int ci = 0; ci < cin; ++ci) {
      const T* src = prod.data() + std::int64_t(ci) * cols + std::int64_t(img) * hw;
      T* dst = dx + (std::int64_t(img) * cin + ci) * hw;
      for (std::int64_t p = 0; p < hw; ++p) dst[p] += src[p];
    }
}

// Gradient w.r.t. kernel: dk[o, (ci,ky,kx)] += sum_p dy[o,p] * col[(ci,ky,kx), p]
template <typename T>
void conv2d_backward_kernel(const T* dy, const T* x, int n, int cin, int h, int w,
                            int cout, int kh, int kw, T* dk) {
  const std::int64_t hw = std::int64_t(h) * w;
  const std::int64_t cols = std::int64_t(n) * hw;
  const std::int64_t krows = std::int64_t(cin) * kh * kw;
  auto& col = scratch<T>(0);
  col.resize(std::size_t(krows * cols));
  im2col(x, n, cin, h, w, kh, kw, col.data());
  // dy is laid out (n, cout, hw); gather into (cout, n*hw)
  auto& dyr = scratch<T>(1);
  dyr.resize(std::size_t(std::int64_t(cout) * cols));
  for (int img = 0; img < n; ++img)
    for (int o = 0; o < cout; ++o) {
      const T* src = dy + (std::int64_t(img) * cout + o) * hw;
      T* dst = dyr.data() + std::int64_t(o) * cols + std::int64_t(img) * hw;
      for (std::int64_t p = 0; p < hw; ++p) dst[p] = src[p];
    }
  // dk (cout x krows) += dyr (cout x cols) * col^T (cols x krows)
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> mdy(dyr.data(), cout, cols);
  Eigen::Map<const Mat> mcol(col.data(), krows, cols);
  Eigen::Map<Mat> mdk(dk, cout, krows);
  mdk.noalias() += mdy * mcol.transpose();
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
T tanh_(T x) {
  return std::tanh(x);
}

template <typename T>
T prelu(T x, T slope) {
  return x >= T(0) ? x : slope * x;
}

}  // namespace derain::kernels
