#include "pcsharp/eval.hpp"

#include <algorithm>
#include <cmath>

#include "pcsharp/error.hpp"
#include "pcsharp/parallel.hpp"

namespace pcsharp {

std::vector<double> log_weights(const ParamSet& params) {
  std::vector<double> out(params.weights.size());
  std::transform(params.weights.begin(), params.weights.end(), out.begin(), [](double w) { return std::log(w); });
  return out;
}

void check_batch(const Circuit& circuit, const Matrix& batch) {
  const auto& scope = circuit.node(circuit.root()).scope;
  if (batch.cols() != scope.size() || (!scope.empty() && scope.back() != static_cast<int>(scope.size()) - 1))
    throw Error(ErrorKind::ScopeMismatch, "batch has " + std::to_string(batch.cols()) + " columns but the root scope has " +
                                              std::to_string(scope.size()) + " variables");
}

void forward_sample(const Circuit& circuit, const ParamSet& params, std::span<const double> log_w,
                    std::span<const double> x, std::span<double> log_p) {
  for (NodeId id : circuit.topo_order()) {
    const Node& nd = circuit.node(id);
    switch (nd.kind) {
      case NodeKind::Leaf:
        log_p[id] = leaf_log_density(params.leaves[circuit.leaf_ordinal(id)], x[nd.variable]);
        break;
      case NodeKind::Product: {
        double acc = 0.0;
        for (NodeId c : nd.children) acc += log_p[c];
        log_p[id] = acc;
        break;
      }
      case NodeKind::Sum: {
        const EdgeId b = circuit.edge_begin(id);
        double m = -INFINITY;
        for (std::size_t s = 0; s < nd.children.size(); ++s) m = std::max(m, log_w[b + s] + log_p[nd.children[s]]);
        if (m == -INFINITY) {
          log_p[id] = -INFINITY;
          break;
        }
        double acc = 0.0;
        for (std::size_t s = 0; s < nd.children.size(); ++s) acc += std::exp(log_w[b + s] + log_p[nd.children[s]] - m);
        log_p[id] = m + std::log(acc);
        break;
      }
    }
  }
}

EvalTrace forward(const Circuit& circuit, const ParamSet& params, const Matrix& batch) {
  check_batch(circuit, batch);
  const auto log_w = log_weights(params);
  EvalTrace trace{Matrix(batch.rows(), circuit.num_nodes())};
  parallel_chunks(batch.rows(), [&](int, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) forward_sample(circuit, params, log_w, batch.row(i), trace.log_p.row(i));
  });
  return trace;
}

std::vector<double> log_likelihoods(const Circuit& circuit, const ParamSet& params, const Matrix& batch) {
  check_batch(circuit, batch);
  const auto log_w = log_weights(params);
  std::vector<double> out(batch.rows());
  parallel_chunks(batch.rows(), [&](int, std::size_t begin, std::size_t end) {
    std::vector<double> scratch(circuit.num_nodes());
    for (std::size_t i = begin; i < end; ++i) {
      forward_sample(circuit, params, log_w, batch.row(i), scratch);
      out[i] = scratch[circuit.root()];
    }
  });
  return out;
}

double mean_nll(const Circuit& circuit, const ParamSet& params, const Matrix& batch) {
  if (batch.rows() == 0) return 0.0;
  const auto ll = log_likelihoods(circuit, params, batch);
  double total = 0.0;
  for (double v : ll) total += v;
  return -total / static_cast<double>(ll.size());
}

double product_complement(const Circuit& circuit, const EvalTrace& trace, NodeId product, NodeId child,
                          std::size_t sample) {
  const Node& nd = circuit.node(product);
  if (nd.kind != NodeKind::Product) throw Error(ErrorKind::NotAChild, "node " + std::to_string(product) + " is not a product");
  const auto slot = std::find(nd.children.begin(), nd.children.end(), child);
  if (slot == nd.children.end())
    throw Error(ErrorKind::NotAChild, "node " + std::to_string(child) + " is not a child of " + std::to_string(product));
  const double lc = trace.log_p(sample, child);
  if (lc != -INFINITY) return trace.log_p(sample, product) - lc;
  double acc = 0.0;
  for (auto it = nd.children.begin(); it != nd.children.end(); ++it)
    if (it != slot) acc += trace.log_p(sample, *it);
  return acc;
}

}  // namespace pcsharp
