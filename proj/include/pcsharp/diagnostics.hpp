#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "pcsharp/learning.hpp"

namespace pcsharp {

/// (eval - train) / |train|. Throws ZeroTrainNLL.
double dof(double train_nll, double eval_nll);
/// |eval - train| / |train|. Throws ZeroTrainNLL.
double dof_abs(double train_nll, double eval_nll);

enum class LandscapeMode { OneD, TwoD };

struct LandscapeGrid {
  LandscapeMode mode = LandscapeMode::OneD;
  std::vector<double> u, v;  // logit-space directions, one entry per sum edge; v empty in 1D
  std::vector<double> alphas, betas;
  /// 1D: values[i] at alphas[i]. 2D: values[i * betas.size() + j] at (alphas[i], betas[j]).
  std::vector<double> values;
};

struct LandscapeOptions {
  LandscapeMode mode = LandscapeMode::OneD;
  double radius = 1.0;
  std::size_t points = 51;  // per axis
  std::uint64_t seed = 0;
};

/// Offsets r(2i - (n-1))/(n-1) for i < n; a single point sits at 0.
std::vector<double> grid_offsets(double radius, std::size_t points);

/// Random logit-space direction, rescaled per sum node so each block has the
/// Euclidean norm of that node's weight block.
std::vector<double> filter_normalized_direction(const Circuit& circuit, const ParamSet& params, std::uint64_t seed);

/// Weights softmax(log θ + offset) per sum node; a zero offset returns the
/// weights unchanged.
ParamSet perturb_logits(const Circuit& circuit, const ParamSet& params, const std::vector<double>& offset);

/// Mean NLL of `data` over the offset grid. `params` is never modified.
LandscapeGrid landscape(const Circuit& circuit, const ParamSet& params, const Matrix& data,
                        const LandscapeOptions& options);

/// Header `alpha,nll` or `alpha,beta,nll`, alpha-major.
void write_landscape_csv(std::ostream& out, const LandscapeGrid& grid);

/// Largest-magnitude eigenvalues of the summed log-likelihood Hessian over
/// sum weights: the closed-form dense Hessian for trees, the FD Hessian for
/// DAGs up to 500 edges. Throws CapExceeded otherwise.
std::vector<double> hessian_top_eigenvalues(const Circuit& circuit, const ParamSet& params, const Matrix& data,
                                            std::size_t k);

struct SharpnessSeries {
  std::vector<int> epochs;
  std::vector<double> sharpness;
  int argmax_epoch = -1;  // earliest epoch on ties; -1 for an empty report
};

SharpnessSeries sharpness_curve(const TrainReport& report);

/// Spearman rank correlation with average ranks for ties. Throws
/// InvalidArgument on length mismatch or fewer than two points.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace pcsharp
