#include "pcsharp/learning.hpp"

#include <algorithm>
#include <cassert>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "pcsharp/curvature.hpp"
#include "pcsharp/error.hpp"
#include "pcsharp/fd_oracle.hpp"
#include "pcsharp/parallel.hpp"

namespace pcsharp {

void RegularizerConfig::check() const {
  if (!(mu >= 0.0)) throw Error(ErrorKind::InvalidArgument, "mu must be >= 0");
  if (!(lambda > 0.0)) throw Error(ErrorKind::InvalidArgument, "lambda must be > 0");
  if (!(smoothing_alpha >= 0.0 && smoothing_alpha <= 1.0))
    throw Error(ErrorKind::InvalidArgument, "smoothing alpha must lie in [0,1]");
  if (!(kappa >= 1.0)) throw Error(ErrorKind::InvalidArgument, "kappa must be >= 1");
}

double sharp_update(double flow_sum, double lambda, double mu) {
  const double disc = flow_sum * flow_sum + 4.0 * lambda * mu * flow_sum;
  assert(disc >= 0.0);
  return (flow_sum + std::sqrt(disc)) / (2.0 * lambda);
}

double sharp_update_relative_residual(double theta, double flow_sum, double lambda, double mu) {
  const double a = lambda * theta * theta;
  const double b = flow_sum * theta;
  const double c = mu * flow_sum;
  const double scale = a + b + c;
  return scale == 0.0 ? 0.0 : std::abs(a - b - c) / scale;
}

double cubic_relative_residual(double theta, double flow_sum, double lambda, double mu) {
  const double a = lambda * theta * theta * theta;
  const double b = flow_sum * theta * theta;
  const double c = 2.0 * mu * flow_sum * flow_sum;
  const double scale = a + b + c;
  return scale == 0.0 ? 0.0 : std::abs(a - b - c) / scale;
}

double cubic_update_oracle(double flow_sum, double lambda, double mu) {
  if (flow_sum <= 0.0) return 0.0;
  const double F = flow_sum;
  auto f = [&](double t) { return lambda * t * t * t - F * t * t - 2.0 * mu * F * F; };
  auto df = [&](double t) { return 3.0 * lambda * t * t - 2.0 * F * t; };
  // f < 0 on (0, 2F/3λ] and f(F/λ + cbrt(2μF²/λ)) >= 0.
  double lo = 2.0 * F / (3.0 * lambda);
  double hi = F / lambda + std::cbrt(2.0 * mu * F * F / lambda);
  if (f(hi) == 0.0) return hi;
  double t = hi;
  for (int it = 0; it < 200; ++it) {
    const double ft = f(t);
    if (ft == 0.0) return t;
    if (ft < 0.0) lo = t; else hi = t;
    double next = t - ft / df(t);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - t) <= 1e-17 * std::abs(t) || hi - lo <= 1e-16 * hi) return next;
    t = next;
  }
  return t;
}

// ---------------------------------------------------------------------------
// M-steps

namespace {

template <typename Target>
ParamSet m_step(const Circuit& circuit, const ParamSet& params, const std::vector<double>& flow_sums, double alpha,
                std::vector<NodeId>* degenerate, Target target) {
  if (flow_sums.size() != circuit.num_edges())
    throw Error(ErrorKind::InvalidArgument, "flow sums do not match the sum edge count");
  ParamSet out = params;
  std::vector<double> tilde;
  for (NodeId id = 0; id < circuit.num_nodes(); ++id) {
    const Node& nd = circuit.node(id);
    if (nd.kind != NodeKind::Sum) continue;
    const EdgeId b = circuit.edge_begin(id);
    const std::size_t k = nd.children.size();
    tilde.assign(k, 0.0);
    double total = 0.0;
    for (std::size_t s = 0; s < k; ++s) {
      tilde[s] = target(b + s, flow_sums[b + s]);
      total += tilde[s];
    }
    if (!(total > 0.0)) {
      if (degenerate) degenerate->push_back(id);
      continue;
    }
    bool floored = false;
    for (auto& t : tilde) {
      t /= total;
      if (t == 0.0) {
        t = kZeroFlowWeightFloor;
        floored = true;
      }
    }
    if (floored) {
      const double renorm = std::accumulate(tilde.begin(), tilde.end(), 0.0);
      for (auto& t : tilde) t /= renorm;
    }
    for (std::size_t s = 0; s < k; ++s) out.weights[b + s] = (1.0 - alpha) * params.weights[b + s] + alpha * tilde[s];
  }
  return out;
}

}  // namespace

ParamSet m_step_vanilla(const Circuit& circuit, const ParamSet& params, const std::vector<double>& flow_sums,
                        double alpha, std::vector<NodeId>* degenerate) {
  return m_step(circuit, params, flow_sums, alpha, degenerate, [](EdgeId, double f) { return f; });
}

ParamSet m_step_sharp(const Circuit& circuit, const ParamSet& params, const std::vector<double>& flow_sums,
                      double lambda, const std::vector<double>& mu_per_edge, double alpha,
                      std::vector<NodeId>* degenerate) {
  if (mu_per_edge.size() != circuit.num_edges())
    throw Error(ErrorKind::InvalidArgument, "mu vector does not match the sum edge count");
  return m_step(circuit, params, flow_sums, alpha, degenerate,
                [&](EdgeId e, double f) { return sharp_update(f, lambda, mu_per_edge[e]); });
}

std::vector<double> layer_mean_flow(const Circuit& circuit, const std::vector<double>& flow_sums) {
  std::vector<double> total(circuit.num_layers(), 0.0);
  std::vector<std::size_t> count(circuit.num_layers(), 0);
  for (EdgeId e = 0; e < circuit.num_edges(); ++e) {
    total[circuit.layer_of_edge(e)] += flow_sums[e];
    ++count[circuit.layer_of_edge(e)];
  }
  for (std::size_t l = 0; l < total.size(); ++l)
    if (count[l] > 0) total[l] /= static_cast<double>(count[l]);
  return total;
}

namespace {

std::vector<double> mu_for_edges(const Circuit& circuit, const std::vector<double>& flow_sums,
                                 const RegularizerConfig& config) {
  if (config.schedule != MuSchedule::LayerMeanFlow) return std::vector<double>(circuit.num_edges(), config.mu);
  const auto per_layer = layer_mean_flow(circuit, flow_sums);
  std::vector<double> mu(circuit.num_edges());
  for (EdgeId e = 0; e < circuit.num_edges(); ++e) mu[e] = per_layer[circuit.layer_of_edge(e)];
  return mu;
}

}  // namespace

ParamSet em_step_vanilla(const Circuit& circuit, const ParamSet& params, const Matrix& batch, double alpha,
                         std::vector<NodeId>* degenerate) {
  return m_step_vanilla(circuit, params, edge_flow_sums(circuit, params, batch), alpha, degenerate);
}

ParamSet em_step_sharp(const Circuit& circuit, const ParamSet& params, const Matrix& batch,
                       const RegularizerConfig& config, std::vector<NodeId>* degenerate) {
  config.check();
  const auto flows = edge_flow_sums(circuit, params, batch);
  return m_step_sharp(circuit, params, flows, config.lambda, mu_for_edges(circuit, flows, config),
                      config.smoothing_alpha, degenerate);
}

double schedule_mu(const ScheduleState& state, const RegularizerConfig& config) {
  switch (config.schedule) {
    case MuSchedule::Fixed:
    case MuSchedule::LayerMeanFlow:
      return config.mu;
    case MuSchedule::AdaptiveDoF: {
      if (!(state.grad_reg_norm > 0.0) || state.train_nll == 0.0) return state.previous_mu;
      const double dof = 100.0 * std::abs(state.valid_nll - state.train_nll) / std::abs(state.train_nll);
      return std::pow(config.kappa, dof) * config.balance_alpha * state.grad_data_norm / state.grad_reg_norm;
    }
  }
  return config.mu;
}

// ---------------------------------------------------------------------------
// Leaves

std::vector<double> leaf_coordinates(const LeafDistribution& dist) {
  return std::visit(
      [](const auto& d) -> std::vector<double> {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Bernoulli>) {
          return {std::log(d.p) - std::log1p(-d.p)};
        } else if constexpr (std::is_same_v<T, Categorical>) {
          std::vector<double> out(d.probs.size());
          std::transform(d.probs.begin(), d.probs.end(), out.begin(), [](double p) { return std::log(p); });
          return out;
        } else {
          return {d.mean, std::log(d.stddev)};
        }
      },
      dist);
}

LeafDistribution leaf_from_coordinates(const LeafDistribution& like, const std::vector<double>& coords) {
  return std::visit(
      [&coords](const auto& d) -> LeafDistribution {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Bernoulli>) {
          const double p = 1.0 / (1.0 + std::exp(-coords[0]));
          return Bernoulli{std::clamp(p, kBernoulliClamp, 1.0 - kBernoulliClamp)};
        } else if constexpr (std::is_same_v<T, Categorical>) {
          const double m = *std::max_element(coords.begin(), coords.end());
          Categorical out;
          double total = 0.0;
          for (double c : coords) {
            out.probs.push_back(std::exp(c - m));
            total += out.probs.back();
          }
          for (auto& p : out.probs) p /= total;
          return out;
        } else {
          return Gaussian{coords[0], std::max(std::exp(coords[1]), std::sqrt(kGaussianVarianceFloor))};
        }
      },
      like);
}

std::vector<double> leaf_score(const LeafDistribution& dist, double x) {
  return std::visit(
      [x](const auto& d) -> std::vector<double> {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Bernoulli>) {
          return {(x > 0.5 ? 1.0 : 0.0) - d.p};
        } else if constexpr (std::is_same_v<T, Categorical>) {
          std::vector<double> out(d.probs.size());
          const auto k = std::lround(x);
          for (std::size_t i = 0; i < out.size(); ++i) out[i] = (static_cast<long>(i) == k ? 1.0 : 0.0) - d.probs[i];
          return out;
        } else {
          const double z = (x - d.mean) / d.stddev;
          return {z / d.stddev, z * z - 1.0};
        }
      },
      dist);
}

LeafStats::LeafStats(const Circuit& circuit, const ParamSet& params)
    : flow(circuit.leaves().size(), 0.0),
      weighted_sum(circuit.leaves().size(), 0.0),
      weighted_sq(circuit.leaves().size(), 0.0),
      counts(circuit.leaves().size()) {
  for (std::size_t o = 0; o < params.leaves.size(); ++o)
    if (const auto* cat = std::get_if<Categorical>(&params.leaves[o])) counts[o].assign(cat->probs.size(), 0.0);
}

void LeafStats::add(const Circuit& circuit, std::span<const double> node_flow, std::span<const double> x) {
  const auto& leaves = circuit.leaves();
  for (std::size_t o = 0; o < leaves.size(); ++o) {
    const double f = node_flow[leaves[o]];
    if (f == 0.0) continue;
    const double v = x[circuit.node(leaves[o]).variable];
    flow[o] += f;
    weighted_sum[o] += f * v;
    weighted_sq[o] += f * v * v;
    if (!counts[o].empty()) {
      const auto k = std::lround(v);
      if (k >= 0 && k < static_cast<long>(counts[o].size())) counts[o][k] += f;
    }
  }
}

void LeafStats::merge(const LeafStats& other) {
  for (std::size_t o = 0; o < flow.size(); ++o) {
    flow[o] += other.flow[o];
    weighted_sum[o] += other.weighted_sum[o];
    weighted_sq[o] += other.weighted_sq[o];
    for (std::size_t k = 0; k < counts[o].size(); ++k) counts[o][k] += other.counts[o][k];
  }
}

ParamSet apply_leaf_stats(const Circuit& circuit, const ParamSet& params, const LeafStats& stats, double alpha) {
  (void)circuit;
  ParamSet out = params;
  for (std::size_t o = 0; o < params.leaves.size(); ++o) {
    const double w = stats.flow[o];
    if (!(w > 0.0)) continue;
    std::visit(
        [&](auto& d) {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, Bernoulli>) {
            const double mle = std::clamp(stats.weighted_sum[o] / w, kBernoulliClamp, 1.0 - kBernoulliClamp);
            d.p = (1.0 - alpha) * d.p + alpha * mle;
          } else if constexpr (std::is_same_v<T, Categorical>) {
            std::vector<double> mle(d.probs.size());
            double total = 0.0;
            for (std::size_t k = 0; k < mle.size(); ++k) {
              mle[k] = std::max(stats.counts[o][k] / w, kBernoulliClamp);
              total += mle[k];
            }
            for (std::size_t k = 0; k < mle.size(); ++k) d.probs[k] = (1.0 - alpha) * d.probs[k] + alpha * mle[k] / total;
            const double renorm = std::accumulate(d.probs.begin(), d.probs.end(), 0.0);
            for (auto& p : d.probs) p /= renorm;
          } else {
            const double mean = stats.weighted_sum[o] / w;
            const double var = std::max(stats.weighted_sq[o] / w - mean * mean, kGaussianVarianceFloor);
            const double old_var = d.stddev * d.stddev;
            d.mean = (1.0 - alpha) * d.mean + alpha * mean;
            d.stddev = std::sqrt((1.0 - alpha) * old_var + alpha * var);
          }
        },
        out.leaves[o]);
  }
  return out;
}

ParamSet update_leaves(const Circuit& circuit, const ParamSet& params, const FlowTable& flows, const Matrix& batch,
                       double alpha) {
  if (flows.node_flow.rows() != batch.rows() || flows.node_flow.cols() != circuit.num_nodes())
    throw Error(ErrorKind::StaleTrace, "flow table does not match batch/circuit");
  LeafStats stats(circuit, params);
  for (std::size_t i = 0; i < batch.rows(); ++i) stats.add(circuit, flows.node_flow.row(i), batch.row(i));
  return apply_leaf_stats(circuit, params, stats, alpha);
}

// ---------------------------------------------------------------------------
// Gradients

ParamGradient ParamGradient::zeros_like(const ParamSet& params) {
  ParamGradient g;
  g.weights.assign(params.weights.size(), 0.0);
  for (const auto& leaf : params.leaves) g.leaves.emplace_back(leaf_coordinates(leaf).size(), 0.0);
  return g;
}

double ParamGradient::squared_norm() const {
  double s = 0.0;
  for (double v : weights) s += v * v;
  for (const auto& l : leaves)
    for (double v : l) s += v * v;
  return s;
}

namespace {

void add_into(ParamGradient& dst, const ParamGradient& src) {
  for (std::size_t e = 0; e < dst.weights.size(); ++e) dst.weights[e] += src.weights[e];
  for (std::size_t o = 0; o < dst.leaves.size(); ++o)
    for (std::size_t k = 0; k < dst.leaves[o].size(); ++k) dst.leaves[o][k] += src.leaves[o][k];
}

}  // namespace

ObjectiveGradients objective_gradients(const Circuit& circuit, const ParamSet& params, const Matrix& batch,
                                       bool with_penalty) {
  check_batch(circuit, batch);
  const auto log_w = log_weights(params);
  const int workers = num_threads();
  std::vector<ObjectiveGradients> partial(workers);
  for (auto& p : partial) {
    p.loglik_grad = ParamGradient::zeros_like(params);
    p.penalty_grad = ParamGradient::zeros_like(params);
  }
  const auto& theta = params.weights;
  const NodeId root = circuit.root();
  const auto& topo = circuit.topo_order();

  parallel_chunks(batch.rows(), [&](int w, std::size_t begin, std::size_t end) {
    ObjectiveGradients& acc = partial[w];
    const std::size_t nn = circuit.num_nodes();
    std::vector<double> lp(nn), nf(nn), ef(circuit.num_edges()), g(circuit.num_edges()), t(nn), G(nn);
    for (std::size_t i = begin; i < end; ++i) {
      const auto x = batch.row(i);
      forward_sample(circuit, params, log_w, x, lp);
      backward_sample(circuit, params, lp, nf, ef);
      acc.loglik += lp[root];
      for (std::size_t e = 0; e < g.size(); ++e) {
        g[e] = ef[e] / theta[e];
        acc.loglik_grad.weights[e] += g[e];
      }
      for (std::size_t o = 0; o < circuit.leaves().size(); ++o) {
        const NodeId leaf = circuit.leaves()[o];
        if (nf[leaf] == 0.0) continue;
        const auto score = leaf_score(params.leaves[o], x[circuit.node(leaf).variable]);
        for (std::size_t k = 0; k < score.size(); ++k) acc.loglik_grad.leaves[o][k] += nf[leaf] * score[k];
      }
      if (!with_penalty) continue;

      for (double v : g) acc.penalty += v * v;
      // Tangent forward: t_n = d log p_n along direction g.
      for (NodeId id : topo) {
        const Node& nd = circuit.node(id);
        if (nd.kind == NodeKind::Leaf || lp[id] == -INFINITY) {
          t[id] = 0.0;
        } else if (nd.kind == NodeKind::Product) {
          double s = 0.0;
          for (NodeId c : nd.children) s += t[c];
          t[id] = s;
        } else {
          const EdgeId b = circuit.edge_begin(id);
          double s = 0.0;
          for (std::size_t k = 0; k < nd.children.size(); ++k) {
            const NodeId c = nd.children[k];
            const double ratio = std::clamp(std::exp(lp[c] - lp[id]), 0.0, 1.0 / theta[b + k]);
            s += (g[b + k] + theta[b + k] * t[c]) * ratio;
          }
          t[id] = s;
        }
      }
      // Tangent backward: G_n = p_n times the directional derivative of d log P / d p_n.
      std::fill(G.begin(), G.end(), 0.0);
      G[root] = -t[root];
      for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        const NodeId id = *it;
        const Node& nd = circuit.node(id);
        if (nd.kind == NodeKind::Sum) {
          const EdgeId b = circuit.edge_begin(id);
          for (std::size_t k = 0; k < nd.children.size(); ++k) {
            const NodeId c = nd.children[k];
            const double ratio =
                lp[id] == -INFINITY ? 0.0 : std::clamp(std::exp(lp[c] - lp[id]), 0.0, 1.0 / theta[b + k]);
            G[c] += (G[id] * theta[b + k] + nf[id] * g[b + k]) * ratio;
            acc.penalty_grad.weights[b + k] += 2.0 * (G[id] + nf[id] * t[c]) * ratio;
          }
        } else if (nd.kind == NodeKind::Product) {
          for (NodeId c : nd.children) G[c] += G[id] + nf[id] * (t[id] - t[c]);
        } else if (G[id] != 0.0) {
          const std::uint32_t o = circuit.leaf_ordinal(id);
          const auto score = leaf_score(params.leaves[o], x[nd.variable]);
          for (std::size_t k = 0; k < score.size(); ++k) acc.penalty_grad.leaves[o][k] += 2.0 * G[id] * score[k];
        }
      }
    }
  });
  for (int w = 1; w < workers; ++w) {
    partial[0].loglik += partial[w].loglik;
    partial[0].penalty += partial[w].penalty;
    add_into(partial[0].loglik_grad, partial[w].loglik_grad);
    add_into(partial[0].penalty_grad, partial[w].penalty_grad);
  }
  return std::move(partial[0]);
}

std::vector<double> weights_to_logit_gradient(const Circuit& circuit, const ParamSet& params,
                                              const std::vector<double>& weight_grad) {
  std::vector<double> out(weight_grad.size(), 0.0);
  for (NodeId id = 0; id < circuit.num_nodes(); ++id) {
    const Node& nd = circuit.node(id);
    if (nd.kind != NodeKind::Sum) continue;
    const EdgeId b = circuit.edge_begin(id);
    double mean = 0.0;
    for (std::size_t k = 0; k < nd.children.size(); ++k) mean += params.weights[b + k] * weight_grad[b + k];
    for (std::size_t k = 0; k < nd.children.size(); ++k)
      out[b + k] = params.weights[b + k] * (weight_grad[b + k] - mean);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

using Clock = std::chrono::steady_clock;

double relative_gap(double train, double valid) { return train == 0.0 ? 0.0 : (valid - train) / std::abs(train); }

EpochRecord make_record(const Circuit& circuit, const ParamSet& params, const Matrix& train, const Matrix& valid,
                        int epoch, double mu, Clock::time_point start) {
  EpochRecord r;
  r.epoch = epoch;
  r.train_nll = mean_nll(circuit, params, train);
  r.valid_nll = valid.rows() > 0 ? mean_nll(circuit, params, valid) : r.train_nll;
  r.sharpness = hessian_trace(circuit, params, train);
  r.dof = relative_gap(r.train_nll, r.valid_nll);
  r.mu = mu;
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

/// Norms of the data and penalty gradients in logit/coordinate space over the full training set.
std::pair<double, double> gradient_norms(const Circuit& circuit, const ParamSet& params, const Matrix& train) {
  const auto og = objective_gradients(circuit, params, train, true);
  const auto dz_data = weights_to_logit_gradient(circuit, params, og.loglik_grad.weights);
  const auto dz_reg = weights_to_logit_gradient(circuit, params, og.penalty_grad.weights);
  double d = 0.0, r = 0.0;
  for (double v : dz_data) d += v * v;
  for (double v : dz_reg) r += v * v;
  for (std::size_t o = 0; o < og.loglik_grad.leaves.size(); ++o)
    for (std::size_t k = 0; k < og.loglik_grad.leaves[o].size(); ++k) {
      d += og.loglik_grad.leaves[o][k] * og.loglik_grad.leaves[o][k];
      r += og.penalty_grad.leaves[o][k] * og.penalty_grad.leaves[o][k];
    }
  return {std::sqrt(d), std::sqrt(r)};
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  batch_size = std::max<std::size_t>(1, batch_size);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size)
    out.emplace_back(order.begin() + b, order.begin() + std::min(n, b + batch_size));
  return out;
}

double update_mu(const Circuit& circuit, const ParamSet& params, const Matrix& train, const EpochRecord& rec,
                 const RegularizerConfig& config, double current) {
  if (config.schedule != MuSchedule::AdaptiveDoF) return current;
  const auto [gd, gr] = gradient_norms(circuit, params, train);
  return schedule_mu({rec.train_nll, rec.valid_nll, gd, gr, current}, config);
}

}  // namespace

TrainReport em_train(const Circuit& circuit, ParamSet& params, const Matrix& train, const Matrix& valid,
                     RegularizerConfig config, const EmSettings& settings) {
  config.check();
  check_batch(circuit, train);
  TrainReport report;
  std::mt19937_64 rng(settings.seed);
  const auto start = Clock::now();
  const bool vanilla = config.schedule == MuSchedule::Fixed && config.mu == 0.0;

  for (int epoch = 1; epoch <= settings.epochs; ++epoch) {
    for (const auto& idx : make_batches(train.rows(), settings.batch_size, rng)) {
      const Matrix batch = train.select_rows(idx);
      const auto log_w = log_weights(params);
      const int workers = num_threads();
      std::vector<std::vector<double>> flows(workers, std::vector<double>(circuit.num_edges(), 0.0));
      std::vector<LeafStats> stats(workers, LeafStats(circuit, params));
      parallel_chunks(batch.rows(), [&](int w, std::size_t begin, std::size_t end) {
        std::vector<double> lp(circuit.num_nodes()), nf(circuit.num_nodes()), ef(circuit.num_edges());
        for (std::size_t i = begin; i < end; ++i) {
          forward_sample(circuit, params, log_w, batch.row(i), lp);
          backward_sample(circuit, params, lp, nf, ef);
          for (std::size_t e = 0; e < ef.size(); ++e) flows[w][e] += ef[e];
          if (settings.learn_leaves) stats[w].add(circuit, nf, batch.row(i));
        }
      });
      for (int w = 1; w < workers; ++w) {
        for (std::size_t e = 0; e < flows[0].size(); ++e) flows[0][e] += flows[w][e];
        stats[0].merge(stats[w]);
      }
      ParamSet next = vanilla ? m_step_vanilla(circuit, params, flows[0], config.smoothing_alpha)
                              : m_step_sharp(circuit, params, flows[0], config.lambda,
                                             mu_for_edges(circuit, flows[0], config), config.smoothing_alpha);
      if (settings.learn_leaves) next = apply_leaf_stats(circuit, next, stats[0], config.smoothing_alpha);
      params = std::move(next);
    }
    const EpochRecord rec = make_record(circuit, params, train, valid, epoch, config.mu, start);
    report.epochs.push_back(rec);
    if (!std::isfinite(rec.train_nll)) {
      report.diverged = true;
      break;
    }
    config.mu = update_mu(circuit, params, train, rec, config, config.mu);
  }
  return report;
}

TrainReport sgd_train(const Circuit& circuit, ParamSet& params, const Matrix& train, const Matrix& valid,
                      RegularizerConfig config, const SgdSettings& settings) {
  config.check();
  check_batch(circuit, train);
  TrainReport report;
  std::mt19937_64 rng(settings.seed);
  const auto start = Clock::now();

  const std::size_t ne = circuit.num_edges();
  std::vector<double> m_w(ne, 0.0), v_w(ne, 0.0);
  std::vector<std::vector<double>> m_l, v_l;
  for (const auto& leaf : params.leaves) {
    m_l.emplace_back(leaf_coordinates(leaf).size(), 0.0);
    v_l.emplace_back(leaf_coordinates(leaf).size(), 0.0);
  }
  long step = 0;
  ParamSet last_good = params;

  auto adam = [&](double grad, double& m, double& v) {
    m = settings.beta1 * m + (1.0 - settings.beta1) * grad;
    v = settings.beta2 * v + (1.0 - settings.beta2) * grad * grad;
    const double mh = m / (1.0 - std::pow(settings.beta1, static_cast<double>(step)));
    const double vh = v / (1.0 - std::pow(settings.beta2, static_cast<double>(step)));
    return -settings.learning_rate * mh / (std::sqrt(vh) + settings.epsilon);
  };

  for (int epoch = 1; epoch <= settings.epochs && !report.diverged; ++epoch) {
    for (const auto& idx : make_batches(train.rows(), settings.batch_size, rng)) {
      const Matrix batch = train.select_rows(idx);
      const bool penalize = config.mu > 0.0;
      ObjectiveGradients og = objective_gradients(circuit, params, batch, penalize && !settings.fd_penalty_gradient);
      if (penalize && settings.fd_penalty_gradient) og.penalty_grad = fd_penalty_gradient(circuit, params, batch);

      std::vector<double> dtheta(ne);
      for (std::size_t e = 0; e < ne; ++e)
        dtheta[e] = -og.loglik_grad.weights[e] + (penalize ? config.mu * og.penalty_grad.weights[e] : 0.0);
      const auto dz = weights_to_logit_gradient(circuit, params, dtheta);

      bool finite = std::isfinite(og.loglik) && std::isfinite(og.penalty);
      for (double v : dz) finite = finite && std::isfinite(v);
      if (!finite) {
        params = last_good;
        report.diverged = true;
        break;
      }
      last_good = params;
      ++step;

      for (NodeId id = 0; id < circuit.num_nodes(); ++id) {
        const Node& nd = circuit.node(id);
        if (nd.kind != NodeKind::Sum) continue;
        const EdgeId b = circuit.edge_begin(id);
        const std::size_t k = nd.children.size();
        std::vector<double> delta(k);
        bool moved = false;
        for (std::size_t s = 0; s < k; ++s) {
          delta[s] = adam(dz[b + s], m_w[b + s], v_w[b + s]);
          moved = moved || delta[s] != 0.0;
        }
        if (!moved) continue;
        double mx = -INFINITY;
        for (std::size_t s = 0; s < k; ++s) {
          delta[s] += std::log(params.weights[b + s]);
          mx = std::max(mx, delta[s]);
        }
        double total = 0.0;
        for (std::size_t s = 0; s < k; ++s) {
          delta[s] = std::max(std::exp(delta[s] - mx), 1e-12);
          total += delta[s];
        }
        for (std::size_t s = 0; s < k; ++s) params.weights[b + s] = delta[s] / total;
      }
      if (settings.learn_leaves) {
        for (std::size_t o = 0; o < params.leaves.size(); ++o) {
          auto coords = leaf_coordinates(params.leaves[o]);
          bool moved = false;
          for (std::size_t k = 0; k < coords.size(); ++k) {
            const double grad =
                -og.loglik_grad.leaves[o][k] + (penalize ? config.mu * og.penalty_grad.leaves[o][k] : 0.0);
            if (!std::isfinite(grad)) {
              finite = false;
              continue;
            }
            const double d = adam(grad, m_l[o][k], v_l[o][k]);
            coords[k] += d;
            moved = moved || d != 0.0;
          }
          if (moved) params.leaves[o] = leaf_from_coordinates(params.leaves[o], coords);
        }
        if (!finite) {
          params = last_good;
          report.diverged = true;
          break;
        }
      }
    }
    if (report.diverged) break;
    const EpochRecord rec = make_record(circuit, params, train, valid, epoch, config.mu, start);
    report.epochs.push_back(rec);
    if (!std::isfinite(rec.train_nll)) {
      params = last_good;
      report.diverged = true;
      break;
    }
    config.mu = update_mu(circuit, params, train, rec, config, config.mu);
  }
  return report;
}

void write_train_log(std::ostream& out, const TrainReport& report) {
  out << "epoch,train_nll,valid_nll,sharpness,dof,mu,seconds\n";
  out.precision(17);
  for (const auto& r : report.epochs)
    out << r.epoch << ',' << r.train_nll << ',' << r.valid_nll << ',' << r.sharpness << ',' << r.dof << ',' << r.mu
        << ',' << r.seconds << '\n';
}

}  // namespace pcsharp
