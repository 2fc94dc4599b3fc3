#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "d2s/ops.hpp"
#include "d2s/tensor.hpp"

namespace d2s {

enum class LayerKind { conv, bn, relu, maxpool, maxunpool, dropout2d, d2s, add_skip };
enum class Phase { encoder, decoder, head };

std::string_view to_string(LayerKind k);
std::string_view to_string(Phase p);

// One node of the layer graph. `input` is the index of the producing layer
// (-1 means the model input); add_skip consumes `skip_source` as its second
// operand; maxunpool reuses the argmax indices recorded by the maxpool layer
// at `index_source`. Parameter fields are indices into the model's store.
struct LayerSpec {
  LayerKind kind{};
  std::string name;
  Phase phase = Phase::encoder;
  int input = -1;
  int skip_source = -1;
  int index_source = -1;
  int weight = -1, bias = -1;
  int gamma = -1, beta = -1, run_mean = -1, run_var = -1;
  int stride = 1, pad = 0;
  int block = 1;  // d2s upscale factor
};

// Executable layer graph with a central parameter store and a forward tape.
// Forward records per-layer activations (and pool indices / bn statistics /
// dropout masks); backward walks the tape in reverse and accumulates into
// `grads`. Plain value type: copying a model copies its parameters.
template <typename T>
struct ModelGraphT {
  std::string name;
  int downsample = 1;  // r: input H,W must be divisible by this
  float dropout_p = 0.2f;

  std::vector<LayerSpec> layers;
  std::vector<std::string> param_names;
  std::vector<TensorT<T>> params;
  std::vector<TensorT<T>> grads;
  std::vector<uint8_t> trainable;

  struct Trace {
    TensorT<T> out;
    PoolIndices pool;
    BNCache<T> bn;
    std::vector<T> drop_mask;
  };
  std::vector<Trace> tape;
  TensorT<T> input_cache;
  bool traced = false;

  TensorT<T> forward(const TensorT<T>& x, Mode mode, Rng* rng = nullptr);
  void backward(const TensorT<T>& grad_logits);
  void zero_grads();

  int param_index(std::string_view name) const;  // -1 if absent
  int64_t trainable_param_count() const;
};

using ModelGraph = ModelGraphT<float>;

struct BuildConfig {
  float dropout_p = 0.2f;
};

// The three desk-scale architectures (r = 8), plus a reduced r = 4 variant
// used by the end-to-end gradient checks. Parameters are Kaiming-initialized
// from `rng`; VGG-D2S and SegNet share an identical encoder schema (names and
// shapes), so their checkpoints agree on the shared prefix.
template <typename T>
ModelGraphT<T> build_vgg_mini_d2s(const BuildConfig& cfg, Rng& rng);
template <typename T>
ModelGraphT<T> build_resnet_mini_d2s(const BuildConfig& cfg, Rng& rng);
template <typename T>
ModelGraphT<T> build_segnet_mini(const BuildConfig& cfg, Rng& rng);
template <typename T>
ModelGraphT<T> build_vgg_micro_d2s(const BuildConfig& cfg, Rng& rng);

// name is one of vgg_d2s | resnet_d2s | segnet | vgg_micro_d2s.
ModelGraph build_model(std::string_view name, const BuildConfig& cfg, Rng& rng);
const std::vector<std::string>& model_names();

// ---------------------------------------------------------------------------
// Checkpoints. Binary format, little-endian:
//   "D2S1" | version byte 0x01 | u32 header length | UTF-8 header | payload
// The header is line oriented: model/epoch/best_iou/seed, then one
// `param <name> <n> <c> <h> <w>` line per tensor in store order. The payload
// is the concatenated raw fp32 data in the same order. Round-trips are
// byte-identical.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  std::string model;
  int epoch = 0;
  float best_iou = -1.0f;
  uint64_t seed = 0;
};

void save_checkpoint(const ModelGraph& model, const CheckpointMeta& meta,
                     const std::string& path);

struct LoadedCheckpoint {
  ModelGraph model;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const BuildConfig& cfg = {});

}  // namespace d2s
