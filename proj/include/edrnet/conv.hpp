#pragma once

// Temporal (1-D), transposed temporal and spatial (2-D) convolutions over
// row-major feature maps, with their backward passes. Time (or spatial
// position) runs along rows, channels along columns.

#include <cmath>
#include <stdexcept>

#include "edrnet/tensor.hpp"

namespace edr {

/// Weight layout [out][in][k]. Output length is n + pad_left + pad_right - k + 1.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t pad_left = 0, std::size_t pad_right = 0) {
  const std::size_t n = x.rows(), cin = x.cols();
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin) throw std::invalid_argument("conv1d: input width mismatch");
  if (n + pad_left + pad_right < k) throw std::invalid_argument("conv1d: sequence shorter than kernel");
  const std::size_t m = n + pad_left + pad_right - k + 1;
  auto y = Tensor<T>::matrix(m, cout);
  for (std::size_t t = 0; t < m; ++t)
    for (std::size_t o = 0; o < cout; ++o) {
      T acc = b[o];
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad_left);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
        const T* xr = x.data() + static_cast<std::size_t>(src) * cin;
        const T* wr = w.data() + o * cin * k + j;
        for (std::size_t i = 0; i < cin; ++i) acc += wr[i * k] * xr[i];
      }
      y(t, o) = acc;
    }
  return y;
}

/// Accumulates dW, db and returns dx for `conv1d`.
template <typename T>
Tensor<T> conv1d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                          Tensor<T>& dw, Tensor<T>& db, std::size_t pad_left = 0) {
  const std::size_t n = x.rows(), cin = x.cols();
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const std::size_t m = dy.rows();
  auto dx = Tensor<T>::matrix(n, cin);
  for (std::size_t t = 0; t < m; ++t)
    for (std::size_t o = 0; o < cout; ++o) {
      const T g = dy(t, o);
      if (g == T{}) continue;
      db[o] += g;
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad_left);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
        const T* xr = x.data() + static_cast<std::size_t>(src) * cin;
        T* dxr = dx.data() + static_cast<std::size_t>(src) * cin;
        const T* wr = w.data() + o * cin * k + j;
        T* dwr = dw.data() + o * cin * k + j;
        for (std::size_t i = 0; i < cin; ++i) {
          dwr[i * k] += g * xr[i];
          dxr[i] += g * wr[i * k];
        }
      }
    }
  return dx;
}

/// Stride-1, unpadded transpose convolution. Weight layout [in][out][k];
/// output length is n + k - 1.
template <typename T>
Tensor<T> conv1d_transpose(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const std::size_t n = x.rows(), cin = x.cols();
  const std::size_t cout = w.dim(1), k = w.dim(2);
  if (w.dim(0) != cin) throw std::invalid_argument("conv1d_transpose: input width mismatch");
  const std::size_t m = n + k - 1;
  auto y = Tensor<T>::matrix(m, cout);
  for (std::size_t u = 0; u < m; ++u)
    for (std::size_t o = 0; o < cout; ++o) {
      T acc = b[o];
      for (std::size_t j = 0; j < k; ++j) {
        if (u < j || u - j >= n) continue;
        const T* xr = x.data() + (u - j) * cin;
        for (std::size_t i = 0; i < cin; ++i) acc += w(i, o, j) * xr[i];
      }
      y(u, o) = acc;
    }
  return y;
}

template <typename T>
Tensor<T> conv1d_transpose_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                                    Tensor<T>& dw, Tensor<T>& db) {
  const std::size_t n = x.rows(), cin = x.cols();
  const std::size_t cout = w.dim(1), k = w.dim(2);
  auto dx = Tensor<T>::matrix(n, cin);
  for (std::size_t u = 0; u < dy.rows(); ++u)
    for (std::size_t o = 0; o < cout; ++o) {
      const T g = dy(u, o);
      if (g == T{}) continue;
      db[o] += g;
      for (std::size_t j = 0; j < k; ++j) {
        if (u < j || u - j >= n) continue;
        const std::size_t t = u - j;
        for (std::size_t i = 0; i < cin; ++i) {
          dw(i, o, j) += g * x(t, i);
          dx(t, i) += g * w(i, o, j);
        }
      }
    }
  return dx;
}

/// Same-padded 2-D convolution over a side x side grid stored as S x cin rows
/// (position s = row * side + col). Weight layout [out][in][K][K].
template <typename T>
Tensor<T> conv2d_same(const Tensor<T>& x, std::size_t side, const Tensor<T>& w, const Tensor<T>& b) {
  const std::size_t cin = x.cols(), cout = w.dim(0), kk = w.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((kk - 1) / 2);
  const std::ptrdiff_t g = static_cast<std::ptrdiff_t>(side);
  auto y = Tensor<T>::matrix(side * side, cout);
  for (std::ptrdiff_t r = 0; r < g; ++r)
    for (std::ptrdiff_t c = 0; c < g; ++c)
      for (std::size_t o = 0; o < cout; ++o) {
        T acc = b[o];
        for (std::size_t u = 0; u < kk; ++u)
          for (std::size_t v = 0; v < kk; ++v) {
            const std::ptrdiff_t rr = r + static_cast<std::ptrdiff_t>(u) - pad;
            const std::ptrdiff_t cc = c + static_cast<std::ptrdiff_t>(v) - pad;
            if (rr < 0 || rr >= g || cc < 0 || cc >= g) continue;
            const T* xr = x.data() + static_cast<std::size_t>(rr * g + cc) * cin;
            for (std::size_t i = 0; i < cin; ++i) acc += w(o, i, u, v) * xr[i];
          }
        y(static_cast<std::size_t>(r * g + c), o) = acc;
      }
  return y;
}

/// Accumulates dW and db for `conv2d_same`; the input gradient is not needed
/// because the visual maps are network inputs.
template <typename T>
void conv2d_same_backward(const Tensor<T>& x, std::size_t side, const Tensor<T>& w,
                          const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>& db) {
  const std::size_t cin = x.cols(), cout = w.dim(0), kk = w.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((kk - 1) / 2);
  const std::ptrdiff_t g = static_cast<std::ptrdiff_t>(side);
  for (std::ptrdiff_t r = 0; r < g; ++r)
    for (std::ptrdiff_t c = 0; c < g; ++c)
      for (std::size_t o = 0; o < cout; ++o) {
        const T grad = dy(static_cast<std::size_t>(r * g + c), o);
        if (grad == T{}) continue;
        db[o] += grad;
        for (std::size_t u = 0; u < kk; ++u)
          for (std::size_t v = 0; v < kk; ++v) {
            const std::ptrdiff_t rr = r + static_cast<std::ptrdiff_t>(u) - pad;
            const std::ptrdiff_t cc = c + static_cast<std::ptrdiff_t>(v) - pad;
            if (rr < 0 || rr >= g || cc < 0 || cc >= g) continue;
            const T* xr = x.data() + static_cast<std::size_t>(rr * g + cc) * cin;
            for (std::size_t i = 0; i < cin; ++i) dw(o, i, u, v) += grad * xr[i];
          }
      }
}

template <typename T>
void relu_inplace(Tensor<T>& t) {
  // NaN passes through so corrupt inputs surface as a non-finite loss.
  for (auto& v : t.values()) v = v < T{} ? T{} : v;
}

/// Masks `dy` by the positive entries of the ReLU output `y`.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, Tensor<T> dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(y[i] > T{})) dy[i] = T{};
  return dy;
}

template <typename T>
T sigmoid(T z) {
  return z >= T{} ? T{1} / (T{1} + std::exp(-z)) : std::exp(z) / (T{1} + std::exp(z));
}

}  // namespace edr
