#include "d2s/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace d2s {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state,
               const std::string& param_name) {
  if (!(param.shape == grad.shape) || !(state.m.shape == param.shape))
    throw ShapeError("adam_step: shape mismatch for " + param_name);
  for (float g : grad.data)
    if (!std::isfinite(g))
      throw NumericError("non-finite gradient for parameter " + param_name);

  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < param.data.size(); ++i) {
    const double g = grad.data[i];
    const double m = state.beta1 * state.m.data[i] + (1.0 - state.beta1) * g;
    const double v = state.beta2 * state.v.data[i] + (1.0 - state.beta2) * g * g;
    state.m.data[i] = static_cast<float>(m);
    state.v.data[i] = static_cast<float>(v);
    param.data[i] -= static_cast<float>(state.lr * (m / bc1) /
                                        (std::sqrt(v / bc2) + state.eps));
  }
  for (float p : param.data)
    if (!std::isfinite(p))
      throw NumericError("parameter became non-finite after update: " + param_name);
}

double reduce_lr_on_plateau(const TrainHistory& history, double factor, int patience,
                            double base_lr) {
  if (patience < 1) throw ValueError("reduce_lr_on_plateau: patience must be >= 1");
  constexpr double kFloor = 1e-7;
  constexpr double kMinImprovement = 1e-4;
  double lr = base_lr;
  double best = -std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (const EpochRecord& r : history) {
    if (r.iou >= best + kMinImprovement) {
      best = r.iou;
      stalled = 0;
    } else if (++stalled >= patience) {
      lr = std::max(lr * factor, kFloor);
      stalled = 0;
    }
  }
  return lr;
}

void TrainConfig::validate() const {
  bool known = model == "vgg_micro_d2s";
  for (const std::string& name : model_names()) known = known || model == name;
  if (!known)
    throw ValueError("unknown model '" + model + "' (valid: vgg_d2s, resnet_d2s, segnet)");
  if (epochs < 0) throw ValueError("epochs must be >= 0");
  if (batch_size < 1 || batch_size > 64) throw ValueError("batch_size must be in [1, 64]");
  if (!(base_lr > 0)) throw ValueError("lr must be > 0");
  if (!(plateau_factor > 0) || plateau_factor > 1)
    throw ValueError("plateau_factor must be in (0, 1]");
  if (patience < 1) throw ValueError("patience must be >= 1");
  if (dropout < 0 || dropout >= 1) throw ValueError("dropout must be in [0, 1)");
  if (!(weight_background > 0) || !(weight_foreground > 0))
    throw ValueError("class weights must be > 0");
  if (warmup_epochs < 0) throw ValueError("warmup epochs must be >= 0");
}

std::string format_epoch(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "epoch %d loss %.6f iou %.6f lr %g secs %.3f",
                r.epoch, r.loss, r.iou, r.lr, r.secs);
  return buf;
}

void write_history(const TrainHistory& history, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write history: " + path);
  for (const EpochRecord& r : history) out << format_epoch(r) << "\n";
  if (!out) throw IoError("history write failed: " + path);
}

namespace {

std::vector<Sample> load_split(const DatasetManifest& manifest, Split split) {
  std::vector<Sample> samples;
  samples.reserve(manifest.stems(split).size());
  for (size_t i = 0; i < manifest.stems(split).size(); ++i)
    samples.push_back(load_sample(manifest, split, i));
  return samples;
}

// Largest multiple of 8 not above size/2, floored at 8.
int warmup_patch_size(int image_size) {
  return std::max(8, (image_size / 2) - (image_size / 2) % 8);
}

void fill_batch(const std::vector<Sample>& samples, const std::vector<size_t>& order,
                size_t first, size_t count, bool use_patches, int patch,
                bool jitter, Rng& rng, Tensor& x, Tensor& target) {
  for (size_t b = 0; b < count; ++b) {
    const Sample& base = samples[order[first + b]];
    Sample s = use_patches ? patch_sample(base, patch, rng) : base;
    const Tensor image = jitter ? color_jitter(s.image, rng) : s.image;
    const size_t plane = static_cast<size_t>(image.shape.h * image.shape.w);
    for (size_t c = 0; c < 3; ++c)
      std::copy_n(image.data.begin() + static_cast<std::ptrdiff_t>(c * plane), plane,
                  x.data.begin() + static_cast<std::ptrdiff_t>((b * 3 + c) * plane));
    std::copy_n(s.mask.data.begin(), plane,
                target.data.begin() + static_cast<std::ptrdiff_t>(b * plane));
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  const DatasetManifest manifest = load_manifest(cfg.data_dir);
  if (manifest.train.empty()) throw ValueError("train: empty train split");
  if (manifest.val.empty()) throw ValueError("train: empty val split");

  Rng rng(cfg.seed);
  BuildConfig build_cfg;
  build_cfg.dropout_p = static_cast<float>(cfg.dropout);
  ModelGraph model = build_model(cfg.model, build_cfg, rng);

  const std::vector<Sample> train_samples = load_split(manifest, Split::train);
  const std::vector<Sample> val_samples = load_split(manifest, Split::val);
  const int patch = warmup_patch_size(manifest.size);

  std::vector<AdamState> states;
  states.reserve(model.params.size());
  for (size_t i = 0; i < model.params.size(); ++i)
    states.emplace_back(model.params[i].shape, cfg.base_lr);

  TrainResult result;
  result.ckpt_path = cfg.ckpt_path;
  result.history_path = cfg.ckpt_path + ".history";
  double best = -std::numeric_limits<double>::infinity();

  CheckpointMeta meta;
  meta.model = model.name;
  meta.seed = cfg.seed;
  save_checkpoint(model, meta, cfg.ckpt_path);

  std::vector<size_t> order(train_samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = reduce_lr_on_plateau(result.history, cfg.plateau_factor,
                                           cfg.patience, cfg.base_lr);
    for (auto& st : states) st.lr = lr;

    // Fisher-Yates with the shared stream keeps batch composition seeded
    for (size_t i = order.size() - 1; i > 0; --i) {
      const size_t j = rng.below(static_cast<uint64_t>(i + 1));
      std::swap(order[i], order[j]);
    }

    const bool use_patches = epoch <= cfg.warmup_epochs;
    const int side = use_patches ? patch : manifest.size;
    double loss_sum = 0.0;
    int batches = 0;
    for (size_t first = 0; first < order.size(); first += static_cast<size_t>(cfg.batch_size)) {
      const size_t count =
          std::min(static_cast<size_t>(cfg.batch_size), order.size() - first);
      Tensor x(Shape4{static_cast<int64_t>(count), 3, side, side});
      Tensor target(Shape4{static_cast<int64_t>(count), 1, side, side});
      fill_batch(train_samples, order, first, count, use_patches, patch, cfg.jitter,
                 rng, x, target);

      const Tensor logits = model.forward(x, Mode::train, &rng);
      LossResult<float> loss =
          softmax_ce_loss(logits, target, static_cast<float>(cfg.weight_background),
                          static_cast<float>(cfg.weight_foreground));
      if (!std::isfinite(loss.value))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           " batch " + std::to_string(batches));
      model.zero_grads();
      model.backward(loss.grad_logits);
      for (size_t i = 0; i < model.params.size(); ++i)
        if (model.trainable[i])
          adam_step(model.params[i], model.grads[i], states[i], model.param_names[i]);

      loss_sum += loss.value;
      ++batches;
    }

    const IouReport val = iou_over_samples(model, val_samples);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    EpochRecord rec{epoch, loss_sum / std::max(1, batches), val.iou, lr, secs};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (val.iou > best) {
      best = val.iou;
      meta.epoch = epoch;
      meta.best_iou = static_cast<float>(best);
      save_checkpoint(model, meta, cfg.ckpt_path);
    }
  }

  result.best_iou = best;
  write_history(result.history, result.history_path);
  return result;
}

IouReport evaluate(const std::string& ckpt_path, const DatasetManifest& manifest,
                   Split split) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  return dataset_iou(ckpt.model, manifest, split);
}

}  // namespace d2s
