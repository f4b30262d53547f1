#include "pcsharp/flows.hpp"

#include <algorithm>
#include <cmath>

#include "pcsharp/error.hpp"
#include "pcsharp/parallel.hpp"

namespace pcsharp {

void backward_sample(const Circuit& circuit, const ParamSet& params, std::span<const double> log_p,
                     std::span<double> node_flow, std::span<double> edge_flow) {
  std::fill(node_flow.begin(), node_flow.end(), 0.0);
  node_flow[circuit.root()] = 1.0;
  const auto& topo = circuit.topo_order();
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const NodeId id = *it;
    const Node& nd = circuit.node(id);
    const double f = node_flow[id];
    if (nd.kind == NodeKind::Sum) {
      const EdgeId b = circuit.edge_begin(id);
      const double ln = log_p[id];
      for (std::size_t s = 0; s < nd.children.size(); ++s) {
        double fe = 0.0;
        if (f != 0.0 && ln != -INFINITY) {
          const double theta = params.weights[b + s];
          const double ratio = std::clamp(std::exp(log_p[nd.children[s]] - ln), 0.0, 1.0 / theta);
          fe = f * theta * ratio;
        }
        edge_flow[b + s] = fe;
        node_flow[nd.children[s]] += fe;
      }
    } else if (nd.kind == NodeKind::Product) {
      for (NodeId c : nd.children) node_flow[c] += f;
    }
  }
}

FlowTable backward(const Circuit& circuit, const ParamSet& params, const EvalTrace& trace) {
  if (trace.log_p.cols() != circuit.num_nodes())
    throw Error(ErrorKind::StaleTrace, "trace has " + std::to_string(trace.log_p.cols()) + " node columns, circuit has " +
                                           std::to_string(circuit.num_nodes()));
  if (params.weights.size() != circuit.num_edges())
    throw Error(ErrorKind::StaleTrace, "parameters do not match circuit");
  const std::size_t n = trace.num_samples();
  FlowTable flows{Matrix(n, circuit.num_nodes()), Matrix(n, circuit.num_edges())};
  parallel_chunks(n, [&](int, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      backward_sample(circuit, params, trace.log_p.row(i), flows.node_flow.row(i), flows.edge_flow.row(i));
  });
  return flows;
}

std::vector<double> loglik_gradient(const FlowTable& flows, const ParamSet& params) {
  std::vector<double> grad(params.weights.size(), 0.0);
  for (std::size_t i = 0; i < flows.edge_flow.rows(); ++i) {
    const auto row = flows.edge_flow.row(i);
    for (std::size_t e = 0; e < grad.size(); ++e) grad[e] += row[e] / params.weights[e];
  }
  return grad;
}

std::vector<double> edge_flow_sums(const Circuit& circuit, const ParamSet& params, const Matrix& batch) {
  check_batch(circuit, batch);
  const auto log_w = log_weights(params);
  const int workers = num_threads();
  std::vector<std::vector<double>> partial(workers, std::vector<double>(circuit.num_edges(), 0.0));
  parallel_chunks(batch.rows(), [&](int w, std::size_t begin, std::size_t end) {
    std::vector<double> lp(circuit.num_nodes()), nf(circuit.num_nodes()), ef(circuit.num_edges());
    auto& acc = partial[w];
    for (std::size_t i = begin; i < end; ++i) {
      forward_sample(circuit, params, log_w, batch.row(i), lp);
      backward_sample(circuit, params, lp, nf, ef);
      for (std::size_t e = 0; e < ef.size(); ++e) acc[e] += ef[e];
    }
  });
  for (int w = 1; w < workers; ++w)
    for (std::size_t e = 0; e < partial[0].size(); ++e) partial[0][e] += partial[w][e];
  return partial[0];
}

}  // namespace pcsharp
