#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d2s/model.hpp"

namespace d2s {

// Static per-layer cost: multiply-accumulates, trainable parameters, output
// activation elements. Permutation/compare-only layers (relu, pool, unpool,
// dropout, d2s, add) carry zero MACs; their traffic shows up in
// activation_elems. 1 MAC = 2 FLOPs.
struct LayerCost {
  std::string name;
  Phase phase = Phase::encoder;
  uint64_t macs = 0;
  uint64_t params = 0;
  uint64_t activation_elems = 0;
};

struct CostReport {
  std::vector<LayerCost> layers;
  uint64_t total_macs = 0;
  uint64_t total_params = 0;
  uint64_t phase_macs[3] = {0, 0, 0};  // indexed by Phase

  uint64_t macs_for(Phase p) const { return phase_macs[static_cast<int>(p)]; }
};

// Infers every layer's output shape without running the network.
std::vector<Shape4> infer_shapes(const ModelGraph& model, const Shape4& input);

// Exact integer accounting at the given input shape.
// conv: N*K^2*Cin*Cout*Hout*Wout MACs; bn: N*2*C*H*W; everything else 0.
CostReport count_macs(const ModelGraph& model, const Shape4& input);

struct CompareReport {
  CostReport a, b;
  std::string name_a, name_b;
  double ratio = 0.0;  // total MACs a / b
};

CompareReport compare_models(const ModelGraph& a, const ModelGraph& b,
                             const Shape4& input);

// Aligned human-readable table.
std::string format_cost_table(const ModelGraph& model, const CostReport& report);

// Machine-readable lines:
//   layer <name> <phase> <macs> <params> <act_elems>
//   total <macs> <params>
std::string format_cost_lines(const CostReport& report);

std::string format_compare_report(const CompareReport& report);

}  // namespace d2s
