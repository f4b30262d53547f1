#include "pcsharp/fd_oracle.hpp"

#include <cmath>

#include "pcsharp/curvature.hpp"
#include "pcsharp/error.hpp"

namespace pcsharp {

namespace {

double batch_loglik(const Circuit& circuit, const ParamSet& params, const Matrix& batch) {
  double total = 0.0;
  for (double v : log_likelihoods(circuit, params, batch)) total += v;
  return total;
}

std::vector<double> analytic_gradient(const Circuit& circuit, const ParamSet& params, const Matrix& batch) {
  return loglik_gradient(backward(circuit, params, forward(circuit, params, batch)), params);
}

void check_step(const ParamSet& params, double h) {
  if (!(h > 0.0)) throw Error(ErrorKind::InvalidArgument, "finite-difference step must be > 0");
  for (double w : params.weights)
    if (w - h <= 0.0) throw Error(ErrorKind::InvalidArgument, "weight too small for central difference step");
}

}  // namespace

std::vector<double> fd_gradient(const Circuit& circuit, const ParamSet& params, const Matrix& batch, double h) {
  if (circuit.num_edges() > kFdGradientEdgeGuard)
    throw Error(ErrorKind::CostGuardExceeded, "FD gradient limited to " + std::to_string(kFdGradientEdgeGuard) + " edges");
  check_step(params, h);
  std::vector<double> grad(circuit.num_edges());
  ParamSet p = params;
  for (EdgeId e = 0; e < circuit.num_edges(); ++e) {
    const double w = params.weights[e];
    p.weights[e] = w + h;
    const double up = batch_loglik(circuit, p, batch);
    p.weights[e] = w - h;
    const double down = batch_loglik(circuit, p, batch);
    p.weights[e] = w;
    grad[e] = (up - down) / (2.0 * h);
  }
  return grad;
}

Matrix fd_hessian_raw(const Circuit& circuit, const ParamSet& params, const Matrix& batch, double h) {
  const std::size_t n = circuit.num_edges();
  if (n > kFdHessianEdgeGuard)
    throw Error(ErrorKind::CostGuardExceeded, "FD Hessian limited to " + std::to_string(kFdHessianEdgeGuard) + " edges");
  check_step(params, h);
  Matrix hess(n, n);
  ParamSet p = params;
  for (EdgeId j = 0; j < n; ++j) {
    const double w = params.weights[j];
    p.weights[j] = w + h;
    const auto up = analytic_gradient(circuit, p, batch);
    p.weights[j] = w - h;
    const auto down = analytic_gradient(circuit, p, batch);
    p.weights[j] = w;
    for (EdgeId i = 0; i < n; ++i) hess(i, j) = (up[i] - down[i]) / (2.0 * h);
  }
  return hess;
}

Matrix fd_hessian(const Circuit& circuit, const ParamSet& params, const Matrix& batch, double h) {
  Matrix hess = fd_hessian_raw(circuit, params, batch, h);
  for (std::size_t i = 0; i < hess.rows(); ++i)
    for (std::size_t j = i + 1; j < hess.cols(); ++j) hess(i, j) = hess(j, i) = 0.5 * (hess(i, j) + hess(j, i));
  return hess;
}

double fd_trace(const Matrix& fd_hess) {
  double t = 0.0;
  for (std::size_t i = 0; i < fd_hess.rows(); ++i) t += fd_hess(i, i);
  return t;
}

ParamGradient fd_penalty_gradient(const Circuit& circuit, const ParamSet& params, const Matrix& batch, double h) {
  if (circuit.num_edges() > kFdGradientEdgeGuard)
    throw Error(ErrorKind::CostGuardExceeded, "FD penalty gradient limited to " + std::to_string(kFdGradientEdgeGuard) +
                                                  " edges");
  check_step(params, h);
  ParamGradient grad = ParamGradient::zeros_like(params);
  ParamSet p = params;
  for (EdgeId e = 0; e < circuit.num_edges(); ++e) {
    const double w = params.weights[e];
    p.weights[e] = w + h;
    const double up = hessian_trace(circuit, p, batch);
    p.weights[e] = w - h;
    const double down = hessian_trace(circuit, p, batch);
    p.weights[e] = w;
    grad.weights[e] = (up - down) / (2.0 * h);
  }
  for (std::size_t o = 0; o < params.leaves.size(); ++o) {
    auto coords = leaf_coordinates(params.leaves[o]);
    for (std::size_t k = 0; k < coords.size(); ++k) {
      const double c = coords[k];
      coords[k] = c + h;
      p.leaves[o] = leaf_from_coordinates(params.leaves[o], coords);
      const double up = hessian_trace(circuit, p, batch);
      coords[k] = c - h;
      p.leaves[o] = leaf_from_coordinates(params.leaves[o], coords);
      const double down = hessian_trace(circuit, p, batch);
      coords[k] = c;
      p.leaves[o] = params.leaves[o];
      grad.leaves[o][k] = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

}  // namespace pcsharp
