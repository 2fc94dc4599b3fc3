#include "d2s/profiler.hpp"

#include <cstdio>

namespace d2s {

std::vector<Shape4> infer_shapes(const ModelGraph& model, const Shape4& input) {
  checked_shape(input);
  if (input.h % model.downsample != 0 || input.w % model.downsample != 0)
    throw ShapeError(model.name + ": input spatial dims " + to_string(input) +
                     " not divisible by " + std::to_string(model.downsample));
  std::vector<Shape4> shapes(model.layers.size());
  auto in_shape = [&](const LayerSpec& spec) -> const Shape4& {
    return spec.input < 0 ? input : shapes[static_cast<size_t>(spec.input)];
  };
  for (size_t k = 0; k < model.layers.size(); ++k) {
    const LayerSpec& spec = model.layers[k];
    const Shape4& in = in_shape(spec);
    switch (spec.kind) {
      case LayerKind::conv:
        shapes[k] = conv2d_output_shape(in, model.params[spec.weight].shape,
                                        spec.stride, spec.pad);
        break;
      case LayerKind::bn:
      case LayerKind::relu:
      case LayerKind::dropout2d:
        shapes[k] = in;
        break;
      case LayerKind::maxpool:
        if (in.h % 2 != 0 || in.w % 2 != 0)
          throw ShapeError(spec.name + ": odd spatial dims " + to_string(in));
        shapes[k] = Shape4{in.n, in.c, in.h / 2, in.w / 2};
        break;
      case LayerKind::maxunpool: {
        // restores the spatial extent of the paired pool's input
        const LayerSpec& pool = model.layers[static_cast<size_t>(spec.index_source)];
        const Shape4& pool_in = pool.input < 0 ? input : shapes[static_cast<size_t>(pool.input)];
        shapes[k] = pool_in;
        break;
      }
      case LayerKind::d2s: {
        const int64_t r2 = static_cast<int64_t>(spec.block) * spec.block;
        if (in.c % r2 != 0)
          throw ShapeError(spec.name + ": channels not divisible by r^2");
        shapes[k] = Shape4{in.n, in.c / r2, in.h * spec.block, in.w * spec.block};
        break;
      }
      case LayerKind::add_skip:
        shapes[k] = in;
        break;
    }
  }
  return shapes;
}

CostReport count_macs(const ModelGraph& model, const Shape4& input) {
  const std::vector<Shape4> shapes = infer_shapes(model, input);
  CostReport report;
  report.layers.reserve(model.layers.size());
  for (size_t k = 0; k < model.layers.size(); ++k) {
    const LayerSpec& spec = model.layers[k];
    const Shape4& out = shapes[k];
    LayerCost cost;
    cost.name = spec.name;
    cost.phase = spec.phase;
    cost.activation_elems = static_cast<uint64_t>(out.numel());
    if (spec.kind == LayerKind::conv) {
      const Shape4& w = model.params[spec.weight].shape;
      cost.macs = static_cast<uint64_t>(out.n) * static_cast<uint64_t>(w.h * w.w) *
                  static_cast<uint64_t>(w.c) * static_cast<uint64_t>(w.n) *
                  static_cast<uint64_t>(out.h * out.w);
      cost.params = static_cast<uint64_t>(w.numel() + w.n);  // + bias
    } else if (spec.kind == LayerKind::bn) {
      cost.macs = static_cast<uint64_t>(out.n) * 2ull *
                  static_cast<uint64_t>(out.c * out.h * out.w);
      cost.params = 2ull * static_cast<uint64_t>(out.c);  // gamma + beta
    }
    report.total_macs += cost.macs;
    report.total_params += cost.params;
    report.phase_macs[static_cast<int>(cost.phase)] += cost.macs;
    report.layers.push_back(std::move(cost));
  }
  return report;
}

CompareReport compare_models(const ModelGraph& a, const ModelGraph& b,
                             const Shape4& input) {
  CompareReport r;
  r.a = count_macs(a, input);
  r.b = count_macs(b, input);
  r.name_a = a.name;
  r.name_b = b.name;
  r.ratio = static_cast<double>(r.a.total_macs) / static_cast<double>(r.b.total_macs);
  return r;
}

std::string format_cost_table(const ModelGraph& model, const CostReport& report) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-22s %-8s %14s %10s %12s\n", "layer", "phase",
                "macs", "params", "act_elems");
  out += line;
  for (const auto& c : report.layers) {
    std::snprintf(line, sizeof(line), "%-22s %-8s %14llu %10llu %12llu\n",
                  c.name.c_str(), std::string(to_string(c.phase)).c_str(),
                  static_cast<unsigned long long>(c.macs),
                  static_cast<unsigned long long>(c.params),
                  static_cast<unsigned long long>(c.activation_elems));
    out += line;
  }
  std::snprintf(line, sizeof(line),
                "%s total: %llu MACs (%llu FLOPs), %llu trainable params\n",
                model.name.c_str(), static_cast<unsigned long long>(report.total_macs),
                static_cast<unsigned long long>(2 * report.total_macs),
                static_cast<unsigned long long>(report.total_params));
  out += line;
  std::snprintf(line, sizeof(line),
                "phase MACs: encoder %llu, decoder %llu, head %llu\n",
                static_cast<unsigned long long>(report.macs_for(Phase::encoder)),
                static_cast<unsigned long long>(report.macs_for(Phase::decoder)),
                static_cast<unsigned long long>(report.macs_for(Phase::head)));
  out += line;
  return out;
}

std::string format_cost_lines(const CostReport& report) {
  std::string out;
  char line[160];
  for (const auto& c : report.layers) {
    std::snprintf(line, sizeof(line), "layer %s %s %llu %llu %llu\n", c.name.c_str(),
                  std::string(to_string(c.phase)).c_str(),
                  static_cast<unsigned long long>(c.macs),
                  static_cast<unsigned long long>(c.params),
                  static_cast<unsigned long long>(c.activation_elems));
    out += line;
  }
  std::snprintf(line, sizeof(line), "total %llu %llu\n",
                static_cast<unsigned long long>(report.total_macs),
                static_cast<unsigned long long>(report.total_params));
  out += line;
  return out;
}

std::string format_compare_report(const CompareReport& report) {
  std::string out;
  char line[200];
  std::snprintf(line, sizeof(line), "model %s total_macs %llu\n", report.name_a.c_str(),
                static_cast<unsigned long long>(report.a.total_macs));
  out += line;
  std::snprintf(line, sizeof(line), "model %s total_macs %llu\n", report.name_b.c_str(),
                static_cast<unsigned long long>(report.b.total_macs));
  out += line;
  std::snprintf(line, sizeof(line), "ratio %.6f\n", report.ratio);
  out += line;
  for (const CostReport* r : {&report.a, &report.b}) {
    const std::string& name = (r == &report.a) ? report.name_a : report.name_b;
    std::snprintf(line, sizeof(line), "phases %s encoder %llu decoder %llu head %llu\n",
                  name.c_str(),
                  static_cast<unsigned long long>(r->macs_for(Phase::encoder)),
                  static_cast<unsigned long long>(r->macs_for(Phase::decoder)),
                  static_cast<unsigned long long>(r->macs_for(Phase::head)));
    out += line;
  }
  return out;
}

}  // namespace d2s
