#include "d2s/tensor.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace d2s {

std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

Shape4 checked_shape(const Shape4& s) {
  const int64_t dims[4] = {s.n, s.c, s.h, s.w};
  int64_t numel = 1;
  for (int64_t d : dims) {
    if (d < 1) throw ShapeError("tensor dims must be >= 1, got " + to_string(s));
    if (numel > std::numeric_limits<int64_t>::max() / d)
      throw ShapeError("tensor element count overflows: " + to_string(s));
    numel *= d;
  }
  return s;
}

template <typename T>
TensorT<T> zeros(const Shape4& s) {
  return TensorT<T>(checked_shape(s));
}

template <typename T>
TensorT<T> full(const Shape4& s, T value) {
  TensorT<T> t(checked_shape(s));
  for (auto& v : t.data) v = value;
  return t;
}

template <typename T>
TensorT<T> kaiming_init(const Shape4& s, int64_t fan_in, Rng& rng) {
  if (fan_in < 1) throw ValueError("kaiming_init: fan_in must be >= 1");
  TensorT<T> t(checked_shape(s));
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<T>(std_dev * rng.normal());
  return t;
}

template <typename T>
TensorT<T> elementwise_add(const TensorT<T>& a, const TensorT<T>& b) {
  if (!(a.shape == b.shape))
    throw ShapeError("elementwise_add: shape mismatch " + to_string(a.shape) +
                     " vs " + to_string(b.shape));
  TensorT<T> out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

template <typename T>
void elementwise_add_backward(const TensorT<T>& upstream, TensorT<T>& grad_a,
                              TensorT<T>& grad_b) {
  if (!(upstream.shape == grad_a.shape) || !(upstream.shape == grad_b.shape))
    throw ShapeError("elementwise_add_backward: shape mismatch");
  for (size_t i = 0; i < upstream.data.size(); ++i) {
    grad_a.data[i] += upstream.data[i];
    grad_b.data[i] += upstream.data[i];
  }
}

template <typename T>
bool all_finite(const TensorT<T>& t) {
  for (T v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

TensorT<double> finite_diff_grad(const std::function<double(const TensorT<double>&)>& f,
                                 const TensorT<double>& x, double eps) {
  if (!(eps > 0)) throw ValueError("finite_diff_grad: eps must be > 0");
  TensorT<double> g(x.shape);
  TensorT<double> probe = x;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double saved = probe.data[i];
    probe.data[i] = saved + eps;
    const double fp = f(probe);
    probe.data[i] = saved - eps;
    const double fm = f(probe);
    probe.data[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_grad: non-finite function value");
    g.data[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

template struct TensorT<float>;
template struct TensorT<double>;

template TensorT<float> zeros<float>(const Shape4&);
template TensorT<double> zeros<double>(const Shape4&);
template TensorT<float> full<float>(const Shape4&, float);
template TensorT<double> full<double>(const Shape4&, double);
template TensorT<float> kaiming_init<float>(const Shape4&, int64_t, Rng&);
template TensorT<double> kaiming_init<double>(const Shape4&, int64_t, Rng&);
template TensorT<float> elementwise_add<float>(const TensorT<float>&, const TensorT<float>&);
template TensorT<double> elementwise_add<double>(const TensorT<double>&, const TensorT<double>&);
template void elementwise_add_backward<float>(const TensorT<float>&, TensorT<float>&, TensorT<float>&);
template void elementwise_add_backward<double>(const TensorT<double>&, TensorT<double>&, TensorT<double>&);
template bool all_finite<float>(const TensorT<float>&);
template bool all_finite<double>(const TensorT<double>&);

}  // namespace d2s
