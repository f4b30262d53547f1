#pragma once

#include <span>
#include <vector>

#include "pcsharp/circuit.hpp"
#include "pcsharp/matrix.hpp"

namespace pcsharp {

/// Per-sample, per-node natural-log outputs. Row i belongs to row i of the
/// evaluated batch; column index is the NodeId.
struct EvalTrace {
  Matrix log_p;

  std::size_t num_samples() const noexcept { return log_p.rows(); }
  double root(const Circuit& c, std::size_t sample) const { return log_p(sample, c.root()); }
};

/// log θ for every sum edge.
std::vector<double> log_weights(const ParamSet& params);

/// Throws ScopeMismatch unless the batch has exactly one column per variable
/// of the root scope and the scope is {0..cols-1}.
void check_batch(const Circuit& circuit, const Matrix& batch);

/// Single-sample forward kernel. `log_p` must hold num_nodes entries.
void forward_sample(const Circuit& circuit, const ParamSet& params, std::span<const double> log_w,
                    std::span<const double> x, std::span<double> log_p);

EvalTrace forward(const Circuit& circuit, const ParamSet& params, const Matrix& batch);

/// Root log-likelihood per row without materializing the full trace.
std::vector<double> log_likelihoods(const Circuit& circuit, const ParamSet& params, const Matrix& batch);

/// Mean negative log-likelihood over the rows of `batch`.
double mean_nll(const Circuit& circuit, const ParamSet& params, const Matrix& batch);

/// log of the product of all children of `product` except `child`.
/// Throws NotAChild.
double product_complement(const Circuit& circuit, const EvalTrace& trace, NodeId product, NodeId child,
                          std::size_t sample);

}  // namespace pcsharp
