#pragma once

#include <span>
#include <vector>

#include "pcsharp/eval.hpp"

namespace pcsharp {

/// Node flows F_n(x) [samples x nodes] and sum-edge flows F_nc(x)
/// [samples x sum edges].
struct FlowTable {
  Matrix node_flow;
  Matrix edge_flow;
};

/// Single-sample backward kernel. Spans are indexed by NodeId / EdgeId.
/// A sum node whose output is zero passes no flow to its children.
void backward_sample(const Circuit& circuit, const ParamSet& params, std::span<const double> log_p,
                     std::span<double> node_flow, std::span<double> edge_flow);

/// Throws StaleTrace if the trace was not produced for this circuit.
FlowTable backward(const Circuit& circuit, const ParamSet& params, const EvalTrace& trace);

/// d/dθ_nc of Σ_x log P(x): batch sum of F_nc(x)/θ_nc.
std::vector<double> loglik_gradient(const FlowTable& flows, const ParamSet& params);

/// Σ_x F_nc(x) for every sum edge, streamed over the batch.
std::vector<double> edge_flow_sums(const Circuit& circuit, const ParamSet& params, const Matrix& batch);

}  // namespace pcsharp
