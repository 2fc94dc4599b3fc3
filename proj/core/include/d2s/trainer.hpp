#pragma once

#include <functional>
#include <string>
#include <vector>

#include "d2s/metrics.hpp"
#include "d2s/model.hpp"

namespace d2s {

// Per-parameter Adam state. `lr` is updated by the plateau schedule; the
// moments keep the parameter's exact shape.
struct AdamState {
  Tensor m, v;
  int64_t t = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(const Shape4& shape, double lr_ = 1e-4)
      : m(shape), v(shape), lr(lr_) {}
};

// Bias-corrected Adam update, in place. This is the single sanctioned
// parameter mutation point in the system. Non-finite gradients abort with
// the parameter name.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state,
               const std::string& param_name);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double iou = 0.0;
  double lr = 0.0;
  double secs = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

// Learning rate implied by the history: starts at base_lr; whenever the best
// validation IoU fails to improve by >= 1e-4 for `patience` consecutive
// epochs the rate is multiplied by `factor` (floor 1e-7) and the stall
// counter resets. Pure function of the inputs.
double reduce_lr_on_plateau(const TrainHistory& history, double factor, int patience,
                            double base_lr);

struct TrainConfig {
  std::string model = "vgg_d2s";
  int epochs = 30;
  int batch_size = 4;
  double base_lr = 1e-4;
  double plateau_factor = 0.1;
  int patience = 8;
  double dropout = 0.2;
  double weight_background = 1.0;
  double weight_foreground = 3.0;
  uint64_t seed = 1;
  std::string data_dir;
  std::string ckpt_path;
  int warmup_epochs = 5;  // foreground-centered patch epochs before full images
  bool jitter = true;

  void validate() const;  // throws ValueError on out-of-range fields
};

struct TrainResult {
  TrainHistory history;
  double best_iou = -1.0;
  std::string ckpt_path;
  std::string history_path;
};

// The full loop: build model (seeded), warm-up epochs on half-size patches
// centered on foreground, then full images; per-epoch color jitter, val IoU
// evaluation, plateau schedule, checkpoint-on-improvement. Deterministic in
// (cfg, seed) except for the wall-clock column. History is persisted next to
// the checkpoint as <ckpt_path>.history.
TrainResult train(const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

// epoch <n> loss <f> iou <f> lr <f> secs <f>
std::string format_epoch(const EpochRecord& r);
void write_history(const TrainHistory& history, const std::string& path);

IouReport evaluate(const std::string& ckpt_path, const DatasetManifest& manifest,
                   Split split);

}  // namespace d2s
