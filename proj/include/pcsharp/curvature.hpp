#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "pcsharp/flows.hpp"

namespace pcsharp {

/// Σ_x Σ_(n,c) (F_nc(x)/θ_nc)^2: the magnitude of the log-likelihood Hessian
/// trace over sum weights. One forward and one backward pass per sample.
double hessian_trace(const Circuit& circuit, const ParamSet& params, const Matrix& batch);

/// Per-edge ∂²/∂θ² of Σ_x log P(x) = -Σ_x (F_nc/θ_nc)^2. Entries are <= 0.
std::vector<double> hessian_diag(const Circuit& circuit, const ParamSet& params, const Matrix& batch);

/// Pair classes of every edge pair of a tree circuit, computed once.
class PairTable {
 public:
  explicit PairTable(const Circuit& circuit);

  std::size_t size() const noexcept { return n_; }
  PairKind kind(EdgeId i, EdgeId j) const { return static_cast<PairKind>(kind_[i * n_ + j]); }
  /// ProductPair: the common product node. PathPair: the shallower edge.
  std::uint32_t ref(EdgeId i, EdgeId j) const { return ref_[i * n_ + j]; }

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> kind_;
  std::vector<std::uint32_t> ref_;
};

inline constexpr std::size_t kDefaultDenseEdgeCap = 5000;

/// Dense Hessian of log P(x) over sum weights for a single sample of a
/// tree-structured circuit. Throws NotATree, or CapExceeded above `cap` edges.
Matrix full_hessian_tree(const Circuit& circuit, const ParamSet& params, std::span<const double> sample,
                         std::size_t cap = kDefaultDenseEdgeCap);

/// Σ_x of the per-sample dense Hessians.
Matrix full_hessian_tree(const Circuit& circuit, const ParamSet& params, const Matrix& batch,
                         std::size_t cap = kDefaultDenseEdgeCap);

struct EigenPairs {
  std::vector<double> values;          // sorted by |λ| descending
  std::vector<std::vector<double>> vectors;  // unit eigenvectors, same order
};

/// Largest-magnitude eigenpairs of a symmetric matrix. Small matrices go
/// through cyclic Jacobi; larger ones through Lanczos with full
/// reorthogonalization, growing the Krylov space until every returned pair
/// satisfies ||Av - λv|| <= tol * ||A||_F. Throws NotConverged.
EigenPairs top_eigenpairs(const Matrix& symmetric, std::size_t k, double tol = 1e-8);
std::vector<double> top_eigenvalues(const Matrix& symmetric, std::size_t k, double tol = 1e-8);

/// All eigenpairs of a small symmetric matrix by cyclic Jacobi rotations.
EigenPairs jacobi_eigen(const Matrix& symmetric, int max_sweeps = 100);

struct CurvatureReport {
  double abs_trace = 0.0;
  std::optional<std::vector<double>> diag;
  std::optional<Matrix> dense;
  std::optional<std::vector<double>> eigvals;
};

void write_dense_csv(std::ostream& out, const Matrix& dense);
void write_diag_csv(std::ostream& out, std::span<const double> diag);
void write_eigen_csv(std::ostream& out, std::span<const double> eigvals);

}  // namespace pcsharp
