#pragma once

#include <utility>
#include <vector>

#include "d2s/tensor.hpp"

namespace d2s {

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// Convolution. Cross-correlation convention (no kernel flip), zero padding.
// Weight layout (Cout, Cin, Kh, Kw); output dim (H + 2p - K)/s + 1 must be
// integral. Production path is im2col + GEMM; tests hold a naive nested-loop
// oracle against it.
// ---------------------------------------------------------------------------

template <typename T>
struct ConvParams {
  TensorT<T> weight;        // (Cout, Cin, K, K)
  TensorT<T> bias;          // (Cout, 1, 1, 1)
  int stride = 1;
  int pad = 0;
};

Shape4 conv2d_output_shape(const Shape4& x, const Shape4& weight, int stride, int pad);

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& weight,
                          const TensorT<T>& bias, int stride, int pad);

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const ConvParams<T>& p) {
  return conv2d_forward(x, p.weight, p.bias, p.stride, p.pad);
}

template <typename T>
struct ConvGrads {
  TensorT<T> x;
  TensorT<T> weight;
  TensorT<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& weight,
                             int stride, int pad, const TensorT<T>& upstream);

// ---------------------------------------------------------------------------
// Batch normalization, per channel. Train mode normalizes by biased batch
// statistics and folds them into the running estimates with `momentum`
// (running = (1-momentum)*running + momentum*batch); eval mode normalizes by
// the running estimates. Channel parameters are stored as (C,1,1,1) tensors.
// ---------------------------------------------------------------------------

template <typename T>
struct BNCache {
  std::vector<T> mean;     // per channel, train mode batch stats
  std::vector<T> inv_std;  // 1/sqrt(var + eps)
  Mode mode = Mode::train;
};

template <typename T>
TensorT<T> batchnorm_forward(const TensorT<T>& x, const TensorT<T>& gamma,
                             const TensorT<T>& beta, TensorT<T>& running_mean,
                             TensorT<T>& running_var, T eps, T momentum, Mode mode,
                             BNCache<T>& cache);

template <typename T>
struct BNGrads {
  TensorT<T> x;
  TensorT<T> gamma;
  TensorT<T> beta;
};

template <typename T>
BNGrads<T> batchnorm_backward(const TensorT<T>& x, const TensorT<T>& gamma,
                              const BNCache<T>& cache, const TensorT<T>& upstream);

// ---------------------------------------------------------------------------
// ReLU. Subgradient at exactly 0 is 0.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> relu(const TensorT<T>& x);

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& upstream);

// ---------------------------------------------------------------------------
// 2x2/2 max pooling with argmax indices. Indices are flat offsets into the
// input data array; ties break toward the lowest offset so unpooling is
// deterministic.
// ---------------------------------------------------------------------------

struct PoolIndices {
  Shape4 shape{0, 0, 0, 0};         // matches the pooled output
  std::vector<int64_t> idx;         // flat offsets into the pool input
  Shape4 input_shape{0, 0, 0, 0};
};

template <typename T>
std::pair<TensorT<T>, PoolIndices> maxpool2d_forward(const TensorT<T>& x);

template <typename T>
TensorT<T> maxpool2d_backward(const PoolIndices& indices, const TensorT<T>& upstream);

// Scatter: zeros everywhere except the stored offsets, which receive y.
// Every offset is validated against its own 2x2 window.
template <typename T>
TensorT<T> maxunpool2d(const TensorT<T>& y, const PoolIndices& indices,
                       const Shape4& out_shape);

template <typename T>
TensorT<T> maxunpool2d_backward(const PoolIndices& indices, const TensorT<T>& upstream);

// ---------------------------------------------------------------------------
// 2-D (spatial) dropout: whole (n,c) planes are zeroed with probability p in
// train mode, survivors scaled by 1/(1-p). `mask` receives one scale factor
// per plane and drives the backward pass. p = 0 and eval mode are exact
// identities and consume no rng draws.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> dropout2d_forward(const TensorT<T>& x, double p, Mode mode, Rng* rng,
                             std::vector<T>& mask);

template <typename T>
TensorT<T> dropout2d_backward(const std::vector<T>& mask, const TensorT<T>& upstream);

// ---------------------------------------------------------------------------
// Depth-to-space and its exact inverse. Channel-major mapping, frozen:
//   out[n, c, h*r+i, w*r+j] = in[n, c*r*r + i*r + j, h, w],  i,j in [0,r).
// Pure permutations: bitwise copies, no arithmetic. space_to_depth is also
// the backward pass of depth_to_space (and vice versa).
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> depth_to_space(const TensorT<T>& x, int block);

template <typename T>
TensorT<T> space_to_depth(const TensorT<T>& x, int block);

// ---------------------------------------------------------------------------
// Class-weighted softmax cross-entropy over 2 channels. target is (N,1,H,W)
// with values exactly 0 or 1; per-pixel losses are weighted by the target
// class and averaged over the total weight. grad_logits is scaled the same
// way, so loss and gradient are consistent.
// ---------------------------------------------------------------------------

template <typename T>
struct LossResult {
  double value = 0.0;
  TensorT<T> grad_logits;
};

template <typename T>
LossResult<T> softmax_ce_loss(const TensorT<T>& logits, const TensorT<T>& target,
                              T weight_background, T weight_foreground);

}  // namespace d2s
