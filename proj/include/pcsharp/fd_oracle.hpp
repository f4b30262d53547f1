#pragma once

#include <vector>

#include "pcsharp/learning.hpp"

namespace pcsharp {

/// Central finite differences on raw (unnormalized) sum weights: these are
/// the unconstrained partials that the flow formulas compute. Ground truth
/// for tests and `trace --fd-check`; never used in training.
struct FdConfig {
  double gradient_step = 1e-5;
  double hessian_step = 1e-4;
};

inline constexpr std::size_t kFdGradientEdgeGuard = 10'000;
inline constexpr std::size_t kFdHessianEdgeGuard = 500;

/// d/dθ_e of Σ_x log P(x). Throws CostGuardExceeded above 10^4 edges.
std::vector<double> fd_gradient(const Circuit& circuit, const ParamSet& params, const Matrix& batch, double h = 1e-5);

/// Column j is the central difference of the analytic batch gradient along
/// θ_j. Not symmetrized. Throws CostGuardExceeded above 500 edges.
Matrix fd_hessian_raw(const Circuit& circuit, const ParamSet& params, const Matrix& batch, double h = 1e-4);

/// (H + H^T) / 2 of fd_hessian_raw.
Matrix fd_hessian(const Circuit& circuit, const ParamSet& params, const Matrix& batch, double h = 1e-4);

/// Sum of the FD Hessian diagonal.
double fd_trace(const Matrix& fd_hess);

/// Central differences of hessian_trace() with respect to raw sum weights
/// and leaf coordinates (see leaf_coordinates()).
ParamGradient fd_penalty_gradient(const Circuit& circuit, const ParamSet& params, const Matrix& batch,
                                  double h = 1e-5);

}  // namespace pcsharp
