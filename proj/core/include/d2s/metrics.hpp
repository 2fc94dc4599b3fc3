#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d2s/datagen.hpp"
#include "d2s/model.hpp"

namespace d2s {

// Pixel confusion counts with foreground (mask value 1) as the positive
// class. Exact integer accumulation; tp+fp+fn+tn always equals the number of
// evaluated pixels.
struct ConfusionCounts {
  uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  void add(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
  }
  uint64_t total() const { return tp + fp + fn + tn; }
};

ConfusionCounts confusion_counts(const Tensor& pred_mask, const Tensor& gt_mask);

// Foreground IoU tp/(tp+fp+fn); 1.0 when there is no foreground anywhere
// (tp = fp = fn = 0).
double pixel_iou(const ConfusionCounts& counts);

// Eval-mode forward + channel argmax (foreground wins only on a strictly
// larger logit). Returns a (N,1,H,W) mask of 0/1.
Tensor predict_mask(ModelGraph& model, const Tensor& image);

struct IouReport {
  double iou = 0.0;             // from globally summed counts
  double mean_image_iou = 0.0;  // secondary diagnostic
  ConfusionCounts counts;
};

// Global-count aggregation over the whole split: counts are summed across
// samples first, a single IoU is computed from the sums (micro averaging,
// not the mean of per-image IoUs).
IouReport iou_over_samples(ModelGraph& model, const std::vector<Sample>& samples);
IouReport dataset_iou(ModelGraph& model, const DatasetManifest& manifest, Split split);

// Line grammar: iou <value> / tp <n> / fp <n> / fn <n> / tn <n>
std::string format_report(const IouReport& report);

}  // namespace d2s
