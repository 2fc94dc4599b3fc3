#include "d2s/metrics.hpp"

#include <cstdio>

namespace d2s {

ConfusionCounts confusion_counts(const Tensor& pred_mask, const Tensor& gt_mask) {
  if (!(pred_mask.shape == gt_mask.shape))
    throw ShapeError("confusion_counts: shape mismatch " + to_string(pred_mask.shape) +
                     " vs " + to_string(gt_mask.shape));
  ConfusionCounts counts;
  for (size_t i = 0; i < pred_mask.data.size(); ++i) {
    const float p = pred_mask.data[i], g = gt_mask.data[i];
    if ((p != 0.0f && p != 1.0f) || (g != 0.0f && g != 1.0f))
      throw ValueError("confusion_counts: masks must contain only 0 and 1");
    if (p == 1.0f)
      (g == 1.0f ? counts.tp : counts.fp)++;
    else
      (g == 1.0f ? counts.fn : counts.tn)++;
  }
  return counts;
}

double pixel_iou(const ConfusionCounts& counts) {
  const uint64_t denom = counts.tp + counts.fp + counts.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(counts.tp) / static_cast<double>(denom);
}

Tensor predict_mask(ModelGraph& model, const Tensor& image) {
  const Tensor logits = model.forward(image, Mode::eval);
  Tensor mask(Shape4{logits.shape.n, 1, logits.shape.h, logits.shape.w});
  const int64_t plane = logits.shape.h * logits.shape.w;
  for (int64_t n = 0; n < logits.shape.n; ++n) {
    const size_t b0 = static_cast<size_t>(logits.shape.index(n, 0, 0, 0));
    const size_t b1 = static_cast<size_t>(logits.shape.index(n, 1, 0, 0));
    const size_t bm = static_cast<size_t>(mask.shape.index(n, 0, 0, 0));
    for (int64_t i = 0; i < plane; ++i)
      mask.data[bm + static_cast<size_t>(i)] =
          logits.data[b1 + static_cast<size_t>(i)] > logits.data[b0 + static_cast<size_t>(i)]
              ? 1.0f
              : 0.0f;
  }
  return mask;
}

IouReport iou_over_samples(ModelGraph& model, const std::vector<Sample>& samples) {
  if (samples.empty()) throw ValueError("iou_over_samples: empty split");
  IouReport report;
  double iou_sum = 0.0;
  for (const Sample& s : samples) {
    const Tensor pred = predict_mask(model, s.image);
    const ConfusionCounts c = confusion_counts(pred, s.mask);
    report.counts.add(c);
    iou_sum += pixel_iou(c);
  }
  report.iou = pixel_iou(report.counts);
  report.mean_image_iou = iou_sum / static_cast<double>(samples.size());
  return report;
}

IouReport dataset_iou(ModelGraph& model, const DatasetManifest& manifest, Split split) {
  const auto& stems = manifest.stems(split);
  if (stems.empty()) throw ValueError("dataset_iou: empty split");
  std::vector<Sample> samples;
  samples.reserve(stems.size());
  for (size_t i = 0; i < stems.size(); ++i) samples.push_back(load_sample(manifest, split, i));
  return iou_over_samples(model, samples);
}

std::string format_report(const IouReport& report) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "iou %.6f\ntp %llu\nfp %llu\nfn %llu\ntn %llu\n",
                report.iou, static_cast<unsigned long long>(report.counts.tp),
                static_cast<unsigned long long>(report.counts.fp),
                static_cast<unsigned long long>(report.counts.fn),
                static_cast<unsigned long long>(report.counts.tn));
  return buf;
}

}  // namespace d2s
