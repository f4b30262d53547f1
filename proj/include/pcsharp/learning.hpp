#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <optional>
#include <vector>

#include "pcsharp/flows.hpp"

namespace pcsharp {

enum class MuSchedule { Fixed, AdaptiveDoF, LayerMeanFlow };

struct RegularizerConfig {
  double mu = 0.0;
  double lambda = 1.0;
  double smoothing_alpha = 1.0;
  MuSchedule schedule = MuSchedule::Fixed;
  double kappa = 1.05;
  double balance_alpha = 1.0;

  /// Throws InvalidArgument on mu < 0, lambda <= 0, alpha outside [0,1] or kappa < 1.
  void check() const;
};

/// Grid searched for μ on validation NLL.
inline constexpr double kMuGrid[] = {0.01, 0.05, 0.1, 0.5, 1.0};

/// Nonnegative root of λθ² - Fθ - μF = 0.
double sharp_update(double flow_sum, double lambda, double mu);

/// Positive root of λθ³ - Fθ² - 2μF² = 0 by safeguarded Newton. Test oracle
/// only; returns 0 for F = 0.
double cubic_update_oracle(double flow_sum, double lambda, double mu);

/// λθ² - Fθ - μF divided by the sum of the term magnitudes.
double sharp_update_relative_residual(double theta, double flow_sum, double lambda, double mu);
double cubic_relative_residual(double theta, double flow_sum, double lambda, double mu);

inline constexpr double kZeroFlowWeightFloor = 1e-8;

/// M-steps from batch-summed edge flows. Each sum node's target is
/// normalized onto the simplex; zero-flow edges are floored at 1e-8 and the
/// node renormalized; the result is blended as (1-α)θ_old + α θ_target.
/// Nodes whose flows are all zero keep their old weights and are reported
/// in `degenerate` when given.
ParamSet m_step_vanilla(const Circuit& circuit, const ParamSet& params, const std::vector<double>& flow_sums,
                        double alpha, std::vector<NodeId>* degenerate = nullptr);
/// `mu_per_edge` holds one μ per sum edge.
ParamSet m_step_sharp(const Circuit& circuit, const ParamSet& params, const std::vector<double>& flow_sums,
                      double lambda, const std::vector<double>& mu_per_edge, double alpha,
                      std::vector<NodeId>* degenerate = nullptr);

ParamSet em_step_vanilla(const Circuit& circuit, const ParamSet& params, const Matrix& batch, double alpha,
                         std::vector<NodeId>* degenerate = nullptr);
/// Fixed and AdaptiveDoF schedules use config.mu as the current μ;
/// LayerMeanFlow derives per-layer μ from this batch's flows.
ParamSet em_step_sharp(const Circuit& circuit, const ParamSet& params, const Matrix& batch,
                       const RegularizerConfig& config, std::vector<NodeId>* degenerate = nullptr);

/// μ_ℓ = mean of `flow_sums` over the edges of layer ℓ, indexed by layer.
std::vector<double> layer_mean_flow(const Circuit& circuit, const std::vector<double>& flow_sums);

struct ScheduleState {
  double train_nll = 0.0;
  double valid_nll = 0.0;
  double grad_data_norm = 0.0;
  double grad_reg_norm = 0.0;
  double previous_mu = 0.0;
};

/// Fixed: config.mu. AdaptiveDoF: κ^DoF · α · g_data / g_reg with
/// DoF = 100 |NLL_val - NLL_train| / |NLL_train|, falling back to the
/// previous μ when g_reg is zero. LayerMeanFlow is per-layer and handled by
/// layer_mean_flow(); here it returns config.mu.
double schedule_mu(const ScheduleState& state, const RegularizerConfig& config);

// ---------------------------------------------------------------------------
// Leaves

/// Unconstrained coordinates of a leaf: Bernoulli [logit p], Categorical
/// [log p_k], Gaussian [mean, log stddev].
std::vector<double> leaf_coordinates(const LeafDistribution& dist);
LeafDistribution leaf_from_coordinates(const LeafDistribution& like, const std::vector<double>& coords);
/// d log f(x) / d coordinates.
std::vector<double> leaf_score(const LeafDistribution& dist, double x);

inline constexpr double kBernoulliClamp = 1e-6;
inline constexpr double kGaussianVarianceFloor = 1e-4;

/// Flow-weighted sufficient statistics of each leaf.
struct LeafStats {
  std::vector<double> flow;                 // Σ F
  std::vector<double> weighted_sum;         // Σ F x
  std::vector<double> weighted_sq;          // Σ F x²
  std::vector<std::vector<double>> counts;  // categorical: Σ F [x = k]

  explicit LeafStats(const Circuit& circuit, const ParamSet& params);
  void add(const Circuit& circuit, std::span<const double> node_flow, std::span<const double> x);
  void merge(const LeafStats& other);
};

/// Flow-weighted maximum likelihood, blended by α. Leaves with zero total
/// flow are left unchanged.
ParamSet apply_leaf_stats(const Circuit& circuit, const ParamSet& params, const LeafStats& stats, double alpha);
ParamSet update_leaves(const Circuit& circuit, const ParamSet& params, const FlowTable& flows, const Matrix& batch,
                       double alpha);

// ---------------------------------------------------------------------------
// Gradients

/// Gradient over raw sum weights and per-leaf coordinates.
struct ParamGradient {
  std::vector<double> weights;
  std::vector<std::vector<double>> leaves;

  static ParamGradient zeros_like(const ParamSet& params);
  double squared_norm() const;
};

struct ObjectiveGradients {
  double loglik = 0.0;   // Σ_x log P(x)
  double penalty = 0.0;  // Σ_x Σ_e (F_e/θ_e)², same as hessian_trace
  ParamGradient loglik_grad;
  ParamGradient penalty_grad;
};

/// One forward/backward pass per sample for the log-likelihood gradient; with
/// `with_penalty`, a tangent forward and a tangent backward pass along the
/// per-sample gradient give the penalty gradient 2·H(x)·g(x) exactly.
ObjectiveGradients objective_gradients(const Circuit& circuit, const ParamSet& params, const Matrix& batch,
                                       bool with_penalty);

/// Chain rule from raw weights to per-node softmax logits.
std::vector<double> weights_to_logit_gradient(const Circuit& circuit, const ParamSet& params,
                                              const std::vector<double>& weight_grad);

// ---------------------------------------------------------------------------
// Training loops

struct EpochRecord {
  int epoch = 0;
  double train_nll = 0.0;
  double valid_nll = 0.0;
  double sharpness = 0.0;
  double dof = 0.0;
  double mu = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  bool diverged = false;
};

struct EmSettings {
  int epochs = 100;
  std::size_t batch_size = 200;
  bool learn_leaves = true;
  std::uint64_t seed = 0;
};

/// Mini-batch EM. With config.mu == 0 under the Fixed schedule this is
/// vanilla EM; otherwise the sharpness-aware M-step is used.
TrainReport em_train(const Circuit& circuit, ParamSet& params, const Matrix& train, const Matrix& valid,
                     RegularizerConfig config, const EmSettings& settings);

struct SgdSettings {
  int epochs = 200;
  std::size_t batch_size = 200;
  double learning_rate = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool learn_leaves = true;
  bool fd_penalty_gradient = false;
  std::uint64_t seed = 0;
};

/// Adam on per-node softmax logits (and leaf coordinates) minimizing the
/// batch NLL + μ Σ (F/θ)². On a non-finite objective or gradient the
/// parameters are restored to the last finite state and the report is
/// marked diverged.
TrainReport sgd_train(const Circuit& circuit, ParamSet& params, const Matrix& train, const Matrix& valid,
                      RegularizerConfig config, const SgdSettings& settings);

void write_train_log(std::ostream& out, const TrainReport& report);

}  // namespace pcsharp
