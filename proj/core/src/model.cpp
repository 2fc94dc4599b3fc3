#include "d2s/model.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace d2s {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::bn: return "bn";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::maxunpool: return "maxunpool";
    case LayerKind::dropout2d: return "dropout2d";
    case LayerKind::d2s: return "d2s";
    case LayerKind::add_skip: return "add_skip";
  }
  return "?";
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::encoder: return "encoder";
    case Phase::decoder: return "decoder";
    case Phase::head: return "head";
  }
  return "?";
}

namespace {

template <typename T>
void accumulate(TensorT<T>& dst, TensorT<T>&& g) {
  if (dst.data.empty()) {
    dst = std::move(g);
    return;
  }
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
}

template <typename T>
void add_into(TensorT<T>& dst, const TensorT<T>& g) {
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
}

}  // namespace

template <typename T>
TensorT<T> ModelGraphT<T>::forward(const TensorT<T>& x, Mode mode, Rng* rng) {
  if (x.shape.h % downsample != 0 || x.shape.w % downsample != 0)
    throw ShapeError(name + ": input spatial dims " + to_string(x.shape) +
                     " not divisible by " + std::to_string(downsample));
  tape.assign(layers.size(), Trace{});
  input_cache = x;
  for (size_t k = 0; k < layers.size(); ++k) {
    const LayerSpec& spec = layers[k];
    const TensorT<T>& in = spec.input < 0 ? input_cache : tape[spec.input].out;
    Trace& tr = tape[k];
    switch (spec.kind) {
      case LayerKind::conv:
        tr.out = conv2d_forward(in, params[spec.weight], params[spec.bias],
                                spec.stride, spec.pad);
        break;
      case LayerKind::bn:
        tr.out = batchnorm_forward(in, params[spec.gamma], params[spec.beta],
                                   params[spec.run_mean], params[spec.run_var],
                                   static_cast<T>(1e-5), static_cast<T>(0.1), mode,
                                   tr.bn);
        break;
      case LayerKind::relu:
        tr.out = relu(in);
        break;
      case LayerKind::maxpool: {
        auto pooled = maxpool2d_forward(in);
        tr.out = std::move(pooled.first);
        tr.pool = std::move(pooled.second);
        break;
      }
      case LayerKind::maxunpool: {
        const PoolIndices& idx = tape[spec.index_source].pool;
        tr.out = maxunpool2d(in, idx, idx.input_shape);
        break;
      }
      case LayerKind::dropout2d:
        tr.out = dropout2d_forward(in, mode == Mode::train ? dropout_p : 0.0, mode,
                                   rng, tr.drop_mask);
        break;
      case LayerKind::d2s:
        tr.out = depth_to_space(in, spec.block);
        break;
      case LayerKind::add_skip:
        tr.out = elementwise_add(in, tape[spec.skip_source].out);
        break;
    }
  }
  traced = true;
  return tape.back().out;
}

template <typename T>
void ModelGraphT<T>::backward(const TensorT<T>& grad_logits) {
  if (!traced) throw StateError(name + ": backward called before forward");
  if (!(grad_logits.shape == tape.back().out.shape))
    throw ShapeError(name + ": grad_logits shape mismatch");

  std::vector<TensorT<T>> act_grads(layers.size());
  act_grads.back() = grad_logits;

  auto route = [&](int slot, TensorT<T>&& g) {
    if (slot < 0) return;  // gradient w.r.t. the model input is not needed
    accumulate(act_grads[static_cast<size_t>(slot)], std::move(g));
  };

  for (int k = static_cast<int>(layers.size()) - 1; k >= 0; --k) {
    TensorT<T>& gout = act_grads[static_cast<size_t>(k)];
    if (gout.data.empty()) continue;
    const LayerSpec& spec = layers[static_cast<size_t>(k)];
    const TensorT<T>& in = spec.input < 0 ? input_cache : tape[spec.input].out;
    switch (spec.kind) {
      case LayerKind::conv: {
        auto cg = conv2d_backward(in, params[spec.weight], spec.stride, spec.pad, gout);
        add_into(grads[spec.weight], cg.weight);
        add_into(grads[spec.bias], cg.bias);
        route(spec.input, std::move(cg.x));
        break;
      }
      case LayerKind::bn: {
        auto bg = batchnorm_backward(in, params[spec.gamma],
                                     tape[static_cast<size_t>(k)].bn, gout);
        add_into(grads[spec.gamma], bg.gamma);
        add_into(grads[spec.beta], bg.beta);
        route(spec.input, std::move(bg.x));
        break;
      }
      case LayerKind::relu:
        route(spec.input, relu_backward(in, gout));
        break;
      case LayerKind::maxpool:
        route(spec.input, maxpool2d_backward(tape[static_cast<size_t>(k)].pool, gout));
        break;
      case LayerKind::maxunpool:
        route(spec.input, maxunpool2d_backward(tape[spec.index_source].pool, gout));
        break;
      case LayerKind::dropout2d:
        route(spec.input, dropout2d_backward(tape[static_cast<size_t>(k)].drop_mask, gout));
        break;
      case LayerKind::d2s:
        route(spec.input, space_to_depth(gout, spec.block));
        break;
      case LayerKind::add_skip: {
        TensorT<T> copy = gout;
        route(spec.skip_source, std::move(copy));
        route(spec.input, std::move(gout));
        break;
      }
    }
    act_grads[static_cast<size_t>(k)] = TensorT<T>{};  // release as we go
  }
}

template <typename T>
void ModelGraphT<T>::zero_grads() {
  for (size_t i = 0; i < grads.size(); ++i)
    if (!grads[i].data.empty()) std::fill(grads[i].data.begin(), grads[i].data.end(), T(0));
}

template <typename T>
int ModelGraphT<T>::param_index(std::string_view name_) const {
  for (size_t i = 0; i < param_names.size(); ++i)
    if (param_names[i] == name_) return static_cast<int>(i);
  return -1;
}

template <typename T>
int64_t ModelGraphT<T>::trainable_param_count() const {
  int64_t total = 0;
  for (size_t i = 0; i < params.size(); ++i)
    if (trainable[i]) total += params[i].numel();
  return total;
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

namespace {

constexpr int kPrev = -2;  // "input of this layer is the previous layer"

template <typename T>
class GraphBuilder {
 public:
  GraphBuilder(ModelGraphT<T>& g, Rng& rng) : g_(g), rng_(rng) {}

  int conv(const std::string& name, Phase ph, int64_t cin, int64_t cout, int k,
           int stride, int pad, int input = kPrev) {
    LayerSpec spec;
    spec.kind = LayerKind::conv;
    spec.name = name;
    spec.phase = ph;
    spec.stride = stride;
    spec.pad = pad;
    spec.weight = add_param(name + ".weight",
                            kaiming_init<T>({cout, cin, k, k}, cin * k * k, rng_), true);
    spec.bias = add_param(name + ".bias", zeros<T>({cout, 1, 1, 1}), true);
    return push(spec, input);
  }

  int bn(const std::string& name, Phase ph, int64_t c, int input = kPrev) {
    LayerSpec spec;
    spec.kind = LayerKind::bn;
    spec.name = name;
    spec.phase = ph;
    spec.gamma = add_param(name + ".gamma", full<T>({c, 1, 1, 1}, T(1)), true);
    spec.beta = add_param(name + ".beta", zeros<T>({c, 1, 1, 1}), true);
    spec.run_mean = add_param(name + ".running_mean", zeros<T>({c, 1, 1, 1}), false);
    spec.run_var = add_param(name + ".running_var", full<T>({c, 1, 1, 1}, T(1)), false);
    return push(spec, input);
  }

  int act(const std::string& name, Phase ph, int input = kPrev) {
    return push_simple(LayerKind::relu, name, ph, input);
  }
  int pool(const std::string& name, Phase ph, int input = kPrev) {
    return push_simple(LayerKind::maxpool, name, ph, input);
  }
  int unpool(const std::string& name, Phase ph, int pool_layer, int input = kPrev) {
    LayerSpec spec;
    spec.kind = LayerKind::maxunpool;
    spec.name = name;
    spec.phase = ph;
    spec.index_source = pool_layer;
    return push(spec, input);
  }
  int dropout(const std::string& name, Phase ph, int input = kPrev) {
    return push_simple(LayerKind::dropout2d, name, ph, input);
  }
  int d2s(const std::string& name, Phase ph, int block, int input = kPrev) {
    LayerSpec spec;
    spec.kind = LayerKind::d2s;
    spec.name = name;
    spec.phase = ph;
    spec.block = block;
    return push(spec, input);
  }
  int add(const std::string& name, Phase ph, int main_branch, int skip) {
    LayerSpec spec;
    spec.kind = LayerKind::add_skip;
    spec.name = name;
    spec.phase = ph;
    spec.skip_source = skip;
    return push(spec, main_branch);
  }

  int last() const { return last_; }

 private:
  int add_param(const std::string& name, TensorT<T> value, bool is_trainable) {
    g_.param_names.push_back(name);
    g_.grads.push_back(is_trainable ? TensorT<T>(value.shape) : TensorT<T>{});
    g_.params.push_back(std::move(value));
    g_.trainable.push_back(is_trainable ? 1 : 0);
    return static_cast<int>(g_.params.size()) - 1;
  }

  int push_simple(LayerKind kind, const std::string& name, Phase ph, int input) {
    LayerSpec spec;
    spec.kind = kind;
    spec.name = name;
    spec.phase = ph;
    return push(spec, input);
  }

  int push(LayerSpec spec, int input) {
    spec.input = (input == kPrev) ? last_ : input;
    g_.layers.push_back(std::move(spec));
    last_ = static_cast<int>(g_.layers.size()) - 1;
    return last_;
  }

  ModelGraphT<T>& g_;
  Rng& rng_;
  int last_ = -1;
};

// Shared VGG-style encoder: 3 stages of [conv3x3-bn-relu]x2 + pool + dropout,
// widths (16,32,64). SegNet reuses this verbatim so the parameter schema of
// both models agrees on the encoder prefix. Returns the pool layer indices.
template <typename T>
std::vector<int> vgg_encoder(GraphBuilder<T>& b) {
  const int64_t widths[3] = {16, 32, 64};
  int64_t cin = 3;
  std::vector<int> pools;
  for (int s = 1; s <= 3; ++s) {
    const std::string p = "enc" + std::to_string(s);
    const int64_t w = widths[s - 1];
    b.conv(p + ".conv1", Phase::encoder, cin, w, 3, 1, 1);
    b.bn(p + ".bn1", Phase::encoder, w);
    b.act(p + ".relu1", Phase::encoder);
    b.conv(p + ".conv2", Phase::encoder, w, w, 3, 1, 1);
    b.bn(p + ".bn2", Phase::encoder, w);
    b.act(p + ".relu2", Phase::encoder);
    pools.push_back(b.pool(p + ".pool", Phase::encoder));
    b.dropout(p + ".drop", Phase::encoder);
    cin = w;
  }
  return pools;
}

}  // namespace

template <typename T>
ModelGraphT<T> build_vgg_mini_d2s(const BuildConfig& cfg, Rng& rng) {
  ModelGraphT<T> g;
  g.name = "vgg_d2s";
  g.downsample = 8;
  g.dropout_p = cfg.dropout_p;
  GraphBuilder<T> b(g, rng);
  vgg_encoder(b);
  // 64 -> 2*8*8 channels at 1/8 scale, rearranged to 2 channels at full scale
  b.conv("head.squeeze", Phase::head, 64, 128, 1, 1, 0);
  b.d2s("head.d2s", Phase::head, 8);
  b.conv("head.tail1", Phase::head, 2, 2, 3, 1, 1);
  return g;
}

template <typename T>
ModelGraphT<T> build_segnet_mini(const BuildConfig& cfg, Rng& rng) {
  ModelGraphT<T> g;
  g.name = "segnet";
  g.downsample = 8;
  g.dropout_p = cfg.dropout_p;
  GraphBuilder<T> b(g, rng);
  const std::vector<int> pools = vgg_encoder(b);
  // Mirror decoder: one conv per encoder conv, channel drop on the second
  // conv of each stage, unpooling with the paired encoder indices. The last
  // conv maps to the 2 logit channels and carries no bn/relu.
  struct Stage {
    int pool;
    int64_t cin, cmid, cout;
    bool final_stage;
  };
  const Stage stages[3] = {{pools[2], 64, 64, 32, false},
                           {pools[1], 32, 32, 16, false},
                           {pools[0], 16, 16, 2, true}};
  for (int s = 1; s <= 3; ++s) {
    const Stage& st = stages[s - 1];
    const std::string p = "dec" + std::to_string(s);
    b.unpool(p + ".unpool", Phase::decoder, st.pool);
    b.conv(p + ".conv1", Phase::decoder, st.cin, st.cmid, 3, 1, 1);
    b.bn(p + ".bn1", Phase::decoder, st.cmid);
    b.act(p + ".relu1", Phase::decoder);
    b.conv(p + ".conv2", Phase::decoder, st.cmid, st.cout, 3, 1, 1);
    if (!st.final_stage) {
      b.bn(p + ".bn2", Phase::decoder, st.cout);
      b.act(p + ".relu2", Phase::decoder);
    }
  }
  return g;
}

template <typename T>
ModelGraphT<T> build_resnet_mini_d2s(const BuildConfig& cfg, Rng& rng) {
  ModelGraphT<T> g;
  g.name = "resnet_d2s";
  g.downsample = 8;
  g.dropout_p = cfg.dropout_p;
  GraphBuilder<T> b(g, rng);
  b.conv("stem.conv", Phase::encoder, 3, 16, 3, 1, 1);
  b.bn("stem.bn", Phase::encoder, 16);
  b.act("stem.relu", Phase::encoder);

  const int64_t widths[3] = {32, 64, 128};
  int64_t cin = 16;
  for (int s = 1; s <= 3; ++s) {
    const int64_t w = widths[s - 1];
    for (int blk = 1; blk <= 2; ++blk) {
      const std::string p = "stage" + std::to_string(s) + ".block" + std::to_string(blk);
      const int stride = (blk == 1) ? 2 : 1;
      const int block_in = b.last();
      b.conv(p + ".conv1", Phase::encoder, cin, w, 3, stride, 1, block_in);
      b.bn(p + ".bn1", Phase::encoder, w);
      b.act(p + ".relu1", Phase::encoder);
      b.conv(p + ".conv2", Phase::encoder, w, w, 3, 1, 1);
      const int main_branch = b.bn(p + ".bn2", Phase::encoder, w);
      int skip = block_in;
      if (stride != 1 || cin != w)
        skip = b.conv(p + ".proj", Phase::encoder, cin, w, 1, stride, 0, block_in);
      b.add(p + ".add", Phase::encoder, main_branch, skip);
      b.act(p + ".relu2", Phase::encoder);
      cin = w;
    }
    if (s <= 2) b.dropout("stage" + std::to_string(s) + ".drop", Phase::encoder);
  }
  // final map is already 128 = 2*8*8 channels at 1/8 scale: rearrange first,
  // then two cheap 2-channel convs
  b.d2s("head.d2s", Phase::head, 8);
  b.conv("head.tail1", Phase::head, 2, 2, 3, 1, 1);
  b.conv("head.tail2", Phase::head, 2, 2, 3, 1, 1);
  return g;
}

template <typename T>
ModelGraphT<T> build_vgg_micro_d2s(const BuildConfig& cfg, Rng& rng) {
  ModelGraphT<T> g;
  g.name = "vgg_micro_d2s";
  g.downsample = 4;
  g.dropout_p = cfg.dropout_p;
  GraphBuilder<T> b(g, rng);
  const int64_t widths[2] = {8, 16};
  int64_t cin = 3;
  for (int s = 1; s <= 2; ++s) {
    const std::string p = "enc" + std::to_string(s);
    const int64_t w = widths[s - 1];
    b.conv(p + ".conv1", Phase::encoder, cin, w, 3, 1, 1);
    b.bn(p + ".bn1", Phase::encoder, w);
    b.act(p + ".relu1", Phase::encoder);
    b.conv(p + ".conv2", Phase::encoder, w, w, 3, 1, 1);
    b.bn(p + ".bn2", Phase::encoder, w);
    b.act(p + ".relu2", Phase::encoder);
    b.pool(p + ".pool", Phase::encoder);
    b.dropout(p + ".drop", Phase::encoder);
    cin = w;
  }
  b.conv("head.squeeze", Phase::head, 16, 32, 1, 1, 0);
  b.d2s("head.d2s", Phase::head, 4);
  b.conv("head.tail1", Phase::head, 2, 2, 3, 1, 1);
  return g;
}

const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names = {"vgg_d2s", "resnet_d2s", "segnet"};
  return names;
}

ModelGraph build_model(std::string_view name, const BuildConfig& cfg, Rng& rng) {
  if (name == "vgg_d2s") return build_vgg_mini_d2s<float>(cfg, rng);
  if (name == "resnet_d2s") return build_resnet_mini_d2s<float>(cfg, rng);
  if (name == "segnet") return build_segnet_mini<float>(cfg, rng);
  if (name == "vgg_micro_d2s") return build_vgg_micro_d2s<float>(cfg, rng);
  throw ValueError("unknown model '" + std::string(name) +
                   "' (valid: vgg_d2s, resnet_d2s, segnet)");
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', '2', 'S', '1'};
constexpr uint8_t kVersion = 1;

std::string format_float(float v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace

void save_checkpoint(const ModelGraph& model, const CheckpointMeta& meta,
                     const std::string& path) {
  std::string header;
  header += "model " + model.name + "\n";
  header += "epoch " + std::to_string(meta.epoch) + "\n";
  header += "best_iou " + format_float(meta.best_iou) + "\n";
  header += "seed " + std::to_string(meta.seed) + "\n";
  for (size_t i = 0; i < model.params.size(); ++i) {
    const Shape4& s = model.params[i].shape;
    header += "param " + model.param_names[i] + " " + std::to_string(s.n) + " " +
              std::to_string(s.c) + " " + std::to_string(s.h) + " " +
              std::to_string(s.w) + "\n";
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVersion));
  const uint32_t len = static_cast<uint32_t>(header.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& p : model.params)
    out.write(reinterpret_cast<const char*>(p.data.data()),
              static_cast<std::streamsize>(p.data.size() * sizeof(float)));
  if (!out) throw IoError("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path, const BuildConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 9) throw FormatError("checkpoint truncated: " + path);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("checkpoint magic mismatch: " + path);
  if (static_cast<uint8_t>(bytes[4]) != kVersion)
    throw FormatError("unsupported checkpoint version");
  uint32_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 5, 4);
  if (bytes.size() < 9 + static_cast<size_t>(header_len))
    throw FormatError("checkpoint truncated in header: " + path);

  CheckpointMeta meta;
  struct ParamEntry {
    std::string name;
    Shape4 shape;
  };
  std::vector<ParamEntry> manifest;
  {
    std::istringstream hs(bytes.substr(9, header_len));
    std::string line;
    while (std::getline(hs, line)) {
      std::istringstream ls(line);
      std::string key;
      ls >> key;
      if (key == "model") {
        ls >> meta.model;
      } else if (key == "epoch") {
        ls >> meta.epoch;
      } else if (key == "best_iou") {
        double v;
        ls >> v;
        meta.best_iou = static_cast<float>(v);
      } else if (key == "seed") {
        ls >> meta.seed;
      } else if (key == "param") {
        ParamEntry e;
        ls >> e.name >> e.shape.n >> e.shape.c >> e.shape.h >> e.shape.w;
        manifest.push_back(std::move(e));
      } else if (!key.empty()) {
        throw FormatError("unknown checkpoint header key '" + key + "'");
      }
      if (ls.fail()) throw FormatError("malformed checkpoint header line: " + line);
    }
  }
  if (meta.model.empty()) throw FormatError("checkpoint header missing model name");

  Rng rng(0);  // every parameter is overwritten below
  ModelGraph model = [&] {
    try {
      return build_model(meta.model, cfg, rng);
    } catch (const ValueError&) {
      throw FormatError("checkpoint names unknown model '" + meta.model + "'");
    }
  }();

  if (manifest.size() != model.params.size())
    throw FormatError("checkpoint manifest has " + std::to_string(manifest.size()) +
                      " params, model '" + meta.model + "' expects " +
                      std::to_string(model.params.size()));
  size_t payload = 0;
  for (size_t i = 0; i < manifest.size(); ++i) {
    if (manifest[i].name != model.param_names[i] ||
        !(manifest[i].shape == model.params[i].shape))
      throw FormatError("checkpoint param " + std::to_string(i) + " ('" +
                        manifest[i].name + "') does not match model '" + meta.model +
                        "' ('" + model.param_names[i] + "')");
    payload += static_cast<size_t>(manifest[i].shape.numel()) * sizeof(float);
  }
  if (bytes.size() != 9 + static_cast<size_t>(header_len) + payload)
    throw FormatError("checkpoint payload size mismatch: " + path);

  size_t off = 9 + header_len;
  for (auto& p : model.params) {
    std::memcpy(p.data.data(), bytes.data() + off, p.data.size() * sizeof(float));
    off += p.data.size() * sizeof(float);
  }
  return LoadedCheckpoint{std::move(model), std::move(meta)};
}

template struct ModelGraphT<float>;
template struct ModelGraphT<double>;

#define D2S_INSTANTIATE_BUILDERS(T)                                       \
  template ModelGraphT<T> build_vgg_mini_d2s<T>(const BuildConfig&, Rng&); \
  template ModelGraphT<T> build_resnet_mini_d2s<T>(const BuildConfig&, Rng&); \
  template ModelGraphT<T> build_segnet_mini<T>(const BuildConfig&, Rng&); \
  template ModelGraphT<T> build_vgg_micro_d2s<T>(const BuildConfig&, Rng&);

D2S_INSTANTIATE_BUILDERS(float)
D2S_INSTANTIATE_BUILDERS(double)

#undef D2S_INSTANTIATE_BUILDERS

}  // namespace d2s
