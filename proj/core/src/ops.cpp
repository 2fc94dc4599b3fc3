#include "d2s/ops.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>

namespace d2s {

namespace {

// Row-major C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta, float* c,
          int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
              beta, c, ldc);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
              beta, c, ldc);
}

// Expands one sample into a (Cin*K*K) x (Hout*Wout) column matrix.
template <typename T>
void im2col(const TensorT<T>& x, int64_t n, int k, int stride, int pad,
            int64_t hout, int64_t wout, T* col) {
  const int64_t cin = x.shape.c, h = x.shape.h, w = x.shape.w;
  const int64_t cols = hout * wout;
  for (int64_t ci = 0; ci < cin; ++ci) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + ((ci * k + ki) * k + kj) * cols;
        for (int64_t oh = 0; oh < hout; ++oh) {
          const int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) {
            std::memset(row + oh * wout, 0, sizeof(T) * static_cast<size_t>(wout));
            continue;
          }
          const T* src = &x.data[static_cast<size_t>(((n * cin + ci) * h + ih) * w)];
          for (int64_t ow = 0; ow < wout; ++ow) {
            const int64_t iw = ow * stride - pad + kj;
            row[oh * wout + ow] = (iw >= 0 && iw < w) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of a column matrix back into one sample of the input gradient.
template <typename T>
void col2im(const T* col, int64_t n, int k, int stride, int pad, int64_t hout,
            int64_t wout, TensorT<T>& gx) {
  const int64_t cin = gx.shape.c, h = gx.shape.h, w = gx.shape.w;
  const int64_t cols = hout * wout;
  for (int64_t ci = 0; ci < cin; ++ci) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + ((ci * k + ki) * k + kj) * cols;
        for (int64_t oh = 0; oh < hout; ++oh) {
          const int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          T* dst = &gx.data[static_cast<size_t>(((n * cin + ci) * h + ih) * w)];
          for (int64_t ow = 0; ow < wout; ++ow) {
            const int64_t iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < w) dst[iw] += row[oh * wout + ow];
          }
        }
      }
    }
  }
}

}  // namespace

Shape4 conv2d_output_shape(const Shape4& x, const Shape4& weight, int stride, int pad) {
  if (weight.h != weight.w) throw ShapeError("conv2d: kernel must be square");
  if (x.c != weight.c)
    throw ShapeError("conv2d: input channels " + std::to_string(x.c) +
                     " != kernel Cin " + std::to_string(weight.c));
  if (stride < 1 || pad < 0) throw ValueError("conv2d: bad stride/pad");
  const int64_t k = weight.h;
  if (x.h + 2 * pad < k || x.w + 2 * pad < k)
    throw ShapeError("conv2d: spatial dims + 2*pad smaller than kernel");
  if ((x.h + 2 * pad - k) % stride != 0 || (x.w + 2 * pad - k) % stride != 0)
    throw ShapeError("conv2d: non-integer output dim for input " + to_string(x));
  return Shape4{x.n, weight.n, (x.h + 2 * pad - k) / stride + 1,
                (x.w + 2 * pad - k) / stride + 1};
}

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& weight,
                          const TensorT<T>& bias, int stride, int pad) {
  const Shape4 out_shape = conv2d_output_shape(x.shape, weight.shape, stride, pad);
  if (bias.numel() != weight.shape.n)
    throw ShapeError("conv2d: bias length != Cout");
  TensorT<T> out(out_shape);
  const int k = static_cast<int>(weight.shape.h);
  const int64_t cout = out_shape.c, cols = out_shape.h * out_shape.w;
  const int64_t ckk = weight.shape.c * k * k;
  std::vector<T> col(static_cast<size_t>(ckk * cols));
  for (int64_t n = 0; n < x.shape.n; ++n) {
    im2col(x, n, k, stride, pad, out_shape.h, out_shape.w, col.data());
    T* out_n = &out.data[static_cast<size_t>(n * cout * cols)];
    gemm(false, false, static_cast<int>(cout), static_cast<int>(cols),
         static_cast<int>(ckk), T(1), weight.data.data(), static_cast<int>(ckk),
         col.data(), static_cast<int>(cols), T(0), out_n, static_cast<int>(cols));
    for (int64_t co = 0; co < cout; ++co) {
      const T b = bias.data[static_cast<size_t>(co)];
      T* dst = out_n + co * cols;
      for (int64_t i = 0; i < cols; ++i) dst[i] += b;
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& weight,
                             int stride, int pad, const TensorT<T>& upstream) {
  const Shape4 out_shape = conv2d_output_shape(x.shape, weight.shape, stride, pad);
  if (!(upstream.shape == out_shape))
    throw ShapeError("conv2d_backward: upstream shape " + to_string(upstream.shape) +
                     " != forward output " + to_string(out_shape));
  ConvGrads<T> g;
  g.x = TensorT<T>(x.shape);
  g.weight = TensorT<T>(weight.shape);
  g.bias = TensorT<T>(Shape4{weight.shape.n, 1, 1, 1});

  const int k = static_cast<int>(weight.shape.h);
  const int64_t cout = out_shape.c, cols = out_shape.h * out_shape.w;
  const int64_t ckk = weight.shape.c * k * k;
  std::vector<T> col(static_cast<size_t>(ckk * cols));
  std::vector<T> col_grad(static_cast<size_t>(ckk * cols));
  for (int64_t n = 0; n < x.shape.n; ++n) {
    const T* up_n = &upstream.data[static_cast<size_t>(n * cout * cols)];
    // bias: sum over positions per output channel
    for (int64_t co = 0; co < cout; ++co) {
      T s = 0;
      const T* src = up_n + co * cols;
      for (int64_t i = 0; i < cols; ++i) s += src[i];
      g.bias.data[static_cast<size_t>(co)] += s;
    }
    im2col(x, n, k, stride, pad, out_shape.h, out_shape.w, col.data());
    // dW += up_n (Cout x cols) * col^T (cols x CKK)
    gemm(false, true, static_cast<int>(cout), static_cast<int>(ckk),
         static_cast<int>(cols), T(1), up_n, static_cast<int>(cols), col.data(),
         static_cast<int>(cols), T(1), g.weight.data.data(), static_cast<int>(ckk));
    // dcol = W^T (CKK x Cout) * up_n (Cout x cols)
    gemm(true, false, static_cast<int>(ckk), static_cast<int>(cols),
         static_cast<int>(cout), T(1), weight.data.data(), static_cast<int>(ckk),
         up_n, static_cast<int>(cols), T(0), col_grad.data(),
         static_cast<int>(cols));
    col2im(col_grad.data(), n, k, stride, pad, out_shape.h, out_shape.w, g.x);
  }
  return g;
}

template <typename T>
TensorT<T> batchnorm_forward(const TensorT<T>& x, const TensorT<T>& gamma,
                             const TensorT<T>& beta, TensorT<T>& running_mean,
                             TensorT<T>& running_var, T eps, T momentum, Mode mode,
                             BNCache<T>& cache) {
  const int64_t c = x.shape.c;
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c)
    throw ShapeError("batchnorm: parameter length != channel count");
  const int64_t per_channel = x.shape.n * x.shape.h * x.shape.w;
  if (mode == Mode::train && per_channel < 2)
    throw ValueError("batchnorm: train mode needs N*H*W >= 2 per channel");

  cache.mode = mode;
  cache.mean.assign(static_cast<size_t>(c), T(0));
  cache.inv_std.assign(static_cast<size_t>(c), T(0));

  const int64_t plane = x.shape.h * x.shape.w;
  TensorT<T> out(x.shape);
  for (int64_t ci = 0; ci < c; ++ci) {
    T mean, var;
    if (mode == Mode::train) {
      double sum = 0;
      for (int64_t n = 0; n < x.shape.n; ++n) {
        const T* src = &x.data[static_cast<size_t>((n * c + ci) * plane)];
        for (int64_t i = 0; i < plane; ++i) sum += src[i];
      }
      mean = static_cast<T>(sum / static_cast<double>(per_channel));
      double sq = 0;
      for (int64_t n = 0; n < x.shape.n; ++n) {
        const T* src = &x.data[static_cast<size_t>((n * c + ci) * plane)];
        for (int64_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(src[i]) - static_cast<double>(mean);
          sq += d * d;
        }
      }
      var = static_cast<T>(sq / static_cast<double>(per_channel));
      running_mean.data[ci] = (T(1) - momentum) * running_mean.data[ci] + momentum * mean;
      running_var.data[ci] = (T(1) - momentum) * running_var.data[ci] + momentum * var;
    } else {
      mean = running_mean.data[ci];
      var = running_var.data[ci];
    }
    const T inv_std = T(1) / std::sqrt(var + eps);
    cache.mean[static_cast<size_t>(ci)] = mean;
    cache.inv_std[static_cast<size_t>(ci)] = inv_std;
    const T g = gamma.data[static_cast<size_t>(ci)];
    const T b = beta.data[static_cast<size_t>(ci)];
    for (int64_t n = 0; n < x.shape.n; ++n) {
      const T* src = &x.data[static_cast<size_t>((n * c + ci) * plane)];
      T* dst = &out.data[static_cast<size_t>((n * c + ci) * plane)];
      for (int64_t i = 0; i < plane; ++i) dst[i] = g * (src[i] - mean) * inv_std + b;
    }
  }
  return out;
}

template <typename T>
BNGrads<T> batchnorm_backward(const TensorT<T>& x, const TensorT<T>& gamma,
                              const BNCache<T>& cache, const TensorT<T>& upstream) {
  if (!(upstream.shape == x.shape)) throw ShapeError("batchnorm_backward: shape mismatch");
  const int64_t c = x.shape.c;
  const int64_t plane = x.shape.h * x.shape.w;
  const int64_t m = x.shape.n * plane;

  BNGrads<T> g;
  g.x = TensorT<T>(x.shape);
  g.gamma = TensorT<T>(Shape4{c, 1, 1, 1});
  g.beta = TensorT<T>(Shape4{c, 1, 1, 1});

  for (int64_t ci = 0; ci < c; ++ci) {
    const T mean = cache.mean[static_cast<size_t>(ci)];
    const T inv_std = cache.inv_std[static_cast<size_t>(ci)];
    const T gam = gamma.data[static_cast<size_t>(ci)];

    double sum_dy = 0, sum_dy_xhat = 0;
    for (int64_t n = 0; n < x.shape.n; ++n) {
      const size_t base = static_cast<size_t>((n * c + ci) * plane);
      for (int64_t i = 0; i < plane; ++i) {
        const double dy = upstream.data[base + static_cast<size_t>(i)];
        const double xhat = (x.data[base + static_cast<size_t>(i)] - mean) * inv_std;
        sum_dy += dy;
        sum_dy_xhat += dy * xhat;
      }
    }
    g.beta.data[static_cast<size_t>(ci)] = static_cast<T>(sum_dy);
    g.gamma.data[static_cast<size_t>(ci)] = static_cast<T>(sum_dy_xhat);

    if (cache.mode == Mode::train) {
      // dx = gamma*inv_std/m * (m*dy - sum(dy) - xhat * sum(dy*xhat))
      const double scale = static_cast<double>(gam) * inv_std / static_cast<double>(m);
      for (int64_t n = 0; n < x.shape.n; ++n) {
        const size_t base = static_cast<size_t>((n * c + ci) * plane);
        for (int64_t i = 0; i < plane; ++i) {
          const double dy = upstream.data[base + static_cast<size_t>(i)];
          const double xhat = (x.data[base + static_cast<size_t>(i)] - mean) * inv_std;
          g.x.data[base + static_cast<size_t>(i)] = static_cast<T>(
              scale * (static_cast<double>(m) * dy - sum_dy - xhat * sum_dy_xhat));
        }
      }
    } else {
      const T scale = gam * inv_std;
      for (int64_t n = 0; n < x.shape.n; ++n) {
        const size_t base = static_cast<size_t>((n * c + ci) * plane);
        for (int64_t i = 0; i < plane; ++i)
          g.x.data[base + static_cast<size_t>(i)] =
              scale * upstream.data[base + static_cast<size_t>(i)];
      }
    }
  }
  return g;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i)
    out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& upstream) {
  if (!(upstream.shape == x.shape)) throw ShapeError("relu_backward: shape mismatch");
  TensorT<T> g(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i)
    g.data[i] = x.data[i] > T(0) ? upstream.data[i] : T(0);
  return g;
}

template <typename T>
std::pair<TensorT<T>, PoolIndices> maxpool2d_forward(const TensorT<T>& x) {
  if (x.shape.h % 2 != 0 || x.shape.w % 2 != 0)
    throw ShapeError("maxpool2d: spatial dims must be even, got " + to_string(x.shape));
  const Shape4 out_shape{x.shape.n, x.shape.c, x.shape.h / 2, x.shape.w / 2};
  TensorT<T> out(out_shape);
  PoolIndices indices;
  indices.shape = out_shape;
  indices.input_shape = x.shape;
  indices.idx.resize(static_cast<size_t>(out_shape.numel()));

  size_t o = 0;
  for (int64_t n = 0; n < x.shape.n; ++n)
    for (int64_t c = 0; c < x.shape.c; ++c)
      for (int64_t oh = 0; oh < out_shape.h; ++oh)
        for (int64_t ow = 0; ow < out_shape.w; ++ow) {
          int64_t best = x.shape.index(n, c, oh * 2, ow * 2);
          T best_v = x.data[static_cast<size_t>(best)];
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj) {
              const int64_t cand = x.shape.index(n, c, oh * 2 + di, ow * 2 + dj);
              const T v = x.data[static_cast<size_t>(cand)];
              if (v > best_v) {  // strict: ties keep the lowest offset
                best_v = v;
                best = cand;
              }
            }
          out.data[o] = best_v;
          indices.idx[o] = best;
          ++o;
        }
  return {std::move(out), std::move(indices)};
}

namespace {

// Each stored offset must address the 2x2 window of its output position.
void check_pool_index(const PoolIndices& indices, size_t k, int64_t flat) {
  const Shape4& in = indices.input_shape;
  const Shape4& out = indices.shape;
  if (flat < 0 || flat >= in.numel())
    throw IntegrityError("pool index out of range");
  const int64_t iw = flat % in.w;
  const int64_t ih = (flat / in.w) % in.h;
  const int64_t ic = (flat / (in.w * in.h)) % in.c;
  const int64_t in_ = flat / (in.w * in.h * in.c);
  const int64_t ow = static_cast<int64_t>(k) % out.w;
  const int64_t oh = (static_cast<int64_t>(k) / out.w) % out.h;
  const int64_t oc = (static_cast<int64_t>(k) / (out.w * out.h)) % out.c;
  const int64_t on = static_cast<int64_t>(k) / (out.w * out.h * out.c);
  if (in_ != on || ic != oc || ih / 2 != oh || iw / 2 != ow)
    throw IntegrityError("pool index " + std::to_string(flat) + " outside its window");
}

}  // namespace

template <typename T>
TensorT<T> maxpool2d_backward(const PoolIndices& indices, const TensorT<T>& upstream) {
  if (!(upstream.shape == indices.shape))
    throw ShapeError("maxpool2d_backward: upstream shape mismatch");
  TensorT<T> g(indices.input_shape);
  for (size_t k = 0; k < indices.idx.size(); ++k)
    g.data[static_cast<size_t>(indices.idx[k])] += upstream.data[k];
  return g;
}

template <typename T>
TensorT<T> maxunpool2d(const TensorT<T>& y, const PoolIndices& indices,
                       const Shape4& out_shape) {
  if (!(y.shape == indices.shape))
    throw ShapeError("maxunpool2d: value/index shape mismatch");
  if (!(out_shape == indices.input_shape))
    throw ShapeError("maxunpool2d: out_shape inconsistent with recorded pool input");
  TensorT<T> out(out_shape);
  for (size_t k = 0; k < indices.idx.size(); ++k) {
    check_pool_index(indices, k, indices.idx[k]);
    out.data[static_cast<size_t>(indices.idx[k])] = y.data[k];
  }
  return out;
}

template <typename T>
TensorT<T> maxunpool2d_backward(const PoolIndices& indices, const TensorT<T>& upstream) {
  if (!(upstream.shape == indices.input_shape))
    throw ShapeError("maxunpool2d_backward: upstream shape mismatch");
  TensorT<T> g(indices.shape);
  for (size_t k = 0; k < indices.idx.size(); ++k)
    g.data[k] = upstream.data[static_cast<size_t>(indices.idx[k])];
  return g;
}

template <typename T>
TensorT<T> dropout2d_forward(const TensorT<T>& x, double p, Mode mode, Rng* rng,
                             std::vector<T>& mask) {
  if (p < 0.0 || p >= 1.0) throw ValueError("dropout2d: p must be in [0, 1)");
  const size_t planes = static_cast<size_t>(x.shape.n * x.shape.c);
  if (mode == Mode::eval || p == 0.0) {
    mask.assign(planes, T(1));
    return x;
  }
  if (rng == nullptr) throw ValueError("dropout2d: train mode requires an rng");
  mask.resize(planes);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  TensorT<T> out(x.shape);
  const int64_t plane = x.shape.h * x.shape.w;
  for (size_t pl = 0; pl < planes; ++pl) {
    const T scale = (rng->uniform() < p) ? T(0) : keep_scale;
    mask[pl] = scale;
    const size_t base = pl * static_cast<size_t>(plane);
    for (int64_t i = 0; i < plane; ++i)
      out.data[base + static_cast<size_t>(i)] =
          scale * x.data[base + static_cast<size_t>(i)];
  }
  return out;
}

template <typename T>
TensorT<T> dropout2d_backward(const std::vector<T>& mask, const TensorT<T>& upstream) {
  const size_t planes = static_cast<size_t>(upstream.shape.n * upstream.shape.c);
  if (mask.size() != planes) throw ShapeError("dropout2d_backward: mask size mismatch");
  TensorT<T> g(upstream.shape);
  const int64_t plane = upstream.shape.h * upstream.shape.w;
  for (size_t pl = 0; pl < planes; ++pl) {
    const size_t base = pl * static_cast<size_t>(plane);
    for (int64_t i = 0; i < plane; ++i)
      g.data[base + static_cast<size_t>(i)] =
          mask[pl] * upstream.data[base + static_cast<size_t>(i)];
  }
  return g;
}

template <typename T>
TensorT<T> depth_to_space(const TensorT<T>& x, int block) {
  if (block < 1) throw ValueError("depth_to_space: block must be >= 1");
  const int64_t r = block, r2 = static_cast<int64_t>(block) * block;
  if (x.shape.c % r2 != 0)
    throw ShapeError("depth_to_space: channels " + std::to_string(x.shape.c) +
                     " not divisible by r^2 = " + std::to_string(r2));
  const Shape4 out_shape{x.shape.n, x.shape.c / r2, x.shape.h * r, x.shape.w * r};
  TensorT<T> out(out_shape);
  for (int64_t n = 0; n < x.shape.n; ++n)
    for (int64_t c = 0; c < out_shape.c; ++c)
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < r; ++j) {
          const int64_t cin = c * r2 + i * r + j;
          for (int64_t h = 0; h < x.shape.h; ++h) {
            const T* src = &x.data[static_cast<size_t>(x.shape.index(n, cin, h, 0))];
            for (int64_t w = 0; w < x.shape.w; ++w)
              out.at(n, c, h * r + i, w * r + j) = src[w];
          }
        }
  return out;
}

template <typename T>
TensorT<T> space_to_depth(const TensorT<T>& x, int block) {
  if (block < 1) throw ValueError("space_to_depth: block must be >= 1");
  const int64_t r = block, r2 = static_cast<int64_t>(block) * block;
  if (x.shape.h % r != 0 || x.shape.w % r != 0)
    throw ShapeError("space_to_depth: spatial dims " + to_string(x.shape) +
                     " not divisible by r = " + std::to_string(r));
  const Shape4 out_shape{x.shape.n, x.shape.c * r2, x.shape.h / r, x.shape.w / r};
  TensorT<T> out(out_shape);
  for (int64_t n = 0; n < x.shape.n; ++n)
    for (int64_t c = 0; c < x.shape.c; ++c)
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < r; ++j) {
          const int64_t cout = c * r2 + i * r + j;
          for (int64_t h = 0; h < out_shape.h; ++h) {
            T* dst = &out.data[static_cast<size_t>(out_shape.index(n, cout, h, 0))];
            for (int64_t w = 0; w < out_shape.w; ++w)
              dst[w] = x.at(n, c, h * r + i, w * r + j);
          }
        }
  return out;
}

template <typename T>
LossResult<T> softmax_ce_loss(const TensorT<T>& logits, const TensorT<T>& target,
                              T weight_background, T weight_foreground) {
  if (logits.shape.c != 2) throw ShapeError("softmax_ce_loss: logits must have 2 channels");
  const Shape4 expect{logits.shape.n, 1, logits.shape.h, logits.shape.w};
  if (!(target.shape == expect))
    throw ShapeError("softmax_ce_loss: target shape " + to_string(target.shape) +
                     " != " + to_string(expect));
  if (!(weight_background > T(0)) || !(weight_foreground > T(0)))
    throw ValueError("softmax_ce_loss: class weights must be positive");

  LossResult<T> res;
  res.grad_logits = TensorT<T>(logits.shape);
  const int64_t plane = logits.shape.h * logits.shape.w;
  double loss_sum = 0, weight_sum = 0;
  for (int64_t n = 0; n < logits.shape.n; ++n) {
    const size_t base0 = static_cast<size_t>(logits.shape.index(n, 0, 0, 0));
    const size_t base1 = static_cast<size_t>(logits.shape.index(n, 1, 0, 0));
    const size_t baset = static_cast<size_t>(target.shape.index(n, 0, 0, 0));
    for (int64_t i = 0; i < plane; ++i) {
      const T tv = target.data[baset + static_cast<size_t>(i)];
      int t;
      if (tv == T(0))
        t = 0;
      else if (tv == T(1))
        t = 1;
      else
        throw ValueError("softmax_ce_loss: target values must be exactly 0 or 1");
      const double l0 = logits.data[base0 + static_cast<size_t>(i)];
      const double l1 = logits.data[base1 + static_cast<size_t>(i)];
      const double m = l0 > l1 ? l0 : l1;
      const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
      const double z = e0 + e1;
      const double p0 = e0 / z, p1 = e1 / z;
      const double w = (t == 1) ? weight_foreground : weight_background;
      loss_sum += w * -(std::log((t == 1 ? e1 : e0) / z));
      weight_sum += w;
      res.grad_logits.data[base0 + static_cast<size_t>(i)] =
          static_cast<T>(w * (p0 - (t == 0 ? 1.0 : 0.0)));
      res.grad_logits.data[base1 + static_cast<size_t>(i)] =
          static_cast<T>(w * (p1 - (t == 1 ? 1.0 : 0.0)));
    }
  }
  res.value = loss_sum / weight_sum;
  const T inv = static_cast<T>(1.0 / weight_sum);
  for (auto& v : res.grad_logits.data) v *= inv;
  return res;
}

#define D2S_INSTANTIATE_OPS(T)                                                        \
  template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&,        \
                                        const TensorT<T>&, int, int);                \
  template ConvGrads<T> conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&,     \
                                           int, int, const TensorT<T>&);             \
  template TensorT<T> batchnorm_forward<T>(const TensorT<T>&, const TensorT<T>&,     \
                                           const TensorT<T>&, TensorT<T>&,           \
                                           TensorT<T>&, T, T, Mode, BNCache<T>&);    \
  template BNGrads<T> batchnorm_backward<T>(const TensorT<T>&, const TensorT<T>&,    \
                                            const BNCache<T>&, const TensorT<T>&);   \
  template TensorT<T> relu<T>(const TensorT<T>&);                                    \
  template TensorT<T> relu_backward<T>(const TensorT<T>&, const TensorT<T>&);        \
  template std::pair<TensorT<T>, PoolIndices> maxpool2d_forward<T>(const TensorT<T>&); \
  template TensorT<T> maxpool2d_backward<T>(const PoolIndices&, const TensorT<T>&);  \
  template TensorT<T> maxunpool2d<T>(const TensorT<T>&, const PoolIndices&,          \
                                     const Shape4&);                                 \
  template TensorT<T> maxunpool2d_backward<T>(const PoolIndices&, const TensorT<T>&); \
  template TensorT<T> dropout2d_forward<T>(const TensorT<T>&, double, Mode, Rng*,    \
                                           std::vector<T>&);                         \
  template TensorT<T> dropout2d_backward<T>(const std::vector<T>&, const TensorT<T>&); \
  template TensorT<T> depth_to_space<T>(const TensorT<T>&, int);                     \
  template TensorT<T> space_to_depth<T>(const TensorT<T>&, int);                     \
  template LossResult<T> softmax_ce_loss<T>(const TensorT<T>&, const TensorT<T>&, T, T);

D2S_INSTANTIATE_OPS(float)
D2S_INSTANTIATE_OPS(double)

#undef D2S_INSTANTIATE_OPS

}  // namespace d2s
