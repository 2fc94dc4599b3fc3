#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "d2s/errors.hpp"
#include "d2s/rng.hpp"

namespace d2s {

// Dense rank-4 shape, (batch, channel, height, width).
struct Shape4 {
  int64_t n = 0, c = 0, h = 0, w = 0;

  int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;

  int64_t index(int64_t in, int64_t ic, int64_t ih, int64_t iw) const {
    return ((in * c + ic) * h + ih) * w + iw;
  }
};

std::string to_string(const Shape4& s);

// Row-major dense tensor in (N,C,H,W) order. `grad`, when non-empty, has the
// same length as `data`. Parameters and activations use the float
// instantiation; the gradient-check oracle runs the double one.
template <typename T>
struct TensorT {
  Shape4 shape{0, 0, 0, 0};
  std::vector<T> data;
  std::vector<T> grad;

  TensorT() = default;
  explicit TensorT(Shape4 s) : shape(s), data(static_cast<size_t>(s.numel()), T(0)) {}

  int64_t numel() const { return shape.numel(); }

  T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data[static_cast<size_t>(shape.index(n, c, h, w))];
  }
  const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data[static_cast<size_t>(shape.index(n, c, h, w))];
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

using Tensor = TensorT<float>;

// Validates dims >= 1 and that the element count fits in memory arithmetic.
Shape4 checked_shape(const Shape4& s);

template <typename T>
TensorT<T> zeros(const Shape4& s);

template <typename T>
TensorT<T> full(const Shape4& s, T value);

// He-normal init: i.i.d. N(0, sqrt(2/fan_in)). fan_in must be >= 1.
template <typename T>
TensorT<T> kaiming_init(const Shape4& s, int64_t fan_in, Rng& rng);

// out[i] = a[i] + b[i]; shapes must match exactly (no broadcasting).
template <typename T>
TensorT<T> elementwise_add(const TensorT<T>& a, const TensorT<T>& b);

// Backward of elementwise_add: upstream flows unchanged into both inputs.
// Accumulates (does not overwrite) into the given grad tensors.
template <typename T>
void elementwise_add_backward(const TensorT<T>& upstream, TensorT<T>& grad_a,
                              TensorT<T>& grad_b);

template <typename T>
bool all_finite(const TensorT<T>& t);

// Central-difference gradient of a scalar function, one element at a time:
// g[i] = (f(x + eps*e_i) - f(x - eps*e_i)) / (2 eps). Double precision only;
// f must be deterministic and produce finite values.
TensorT<double> finite_diff_grad(const std::function<double(const TensorT<double>&)>& f,
                                 const TensorT<double>& x, double eps);

}  // namespace d2s
