#include "pcsharp/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "pcsharp/curvature.hpp"
#include "pcsharp/error.hpp"
#include "pcsharp/fd_oracle.hpp"
#include "pcsharp/parallel.hpp"

namespace pcsharp {

double dof(double train_nll, double eval_nll) {
  if (train_nll == 0.0) throw Error(ErrorKind::ZeroTrainNLL, "degree of overfitting needs a nonzero train NLL");
  return (eval_nll - train_nll) / std::abs(train_nll);
}

double dof_abs(double train_nll, double eval_nll) { return std::abs(dof(train_nll, eval_nll)); }

std::vector<double> grid_offsets(double radius, std::size_t points) {
  if (points == 0) throw Error(ErrorKind::InvalidArgument, "grid needs at least one point");
  if (points == 1) return {0.0};
  std::vector<double> out(points);
  const double n1 = static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) out[i] = radius * (2.0 * static_cast<double>(i) - n1) / n1;
  return out;
}

std::vector<double> filter_normalized_direction(const Circuit& circuit, const ParamSet& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> d(circuit.num_edges());
  for (auto& x : d) x = gauss(rng);
  for (NodeId id = 0; id < circuit.num_nodes(); ++id) {
    const Node& nd = circuit.node(id);
    if (nd.kind != NodeKind::Sum) continue;
    const EdgeId b = circuit.edge_begin(id);
    double dn = 0.0, wn = 0.0;
    for (std::size_t s = 0; s < nd.children.size(); ++s) {
      dn += d[b + s] * d[b + s];
      wn += params.weights[b + s] * params.weights[b + s];
    }
    const double scale = dn > 0.0 ? std::sqrt(wn / dn) : 0.0;
    for (std::size_t s = 0; s < nd.children.size(); ++s) d[b + s] *= scale;
  }
  return d;
}

ParamSet perturb_logits(const Circuit& circuit, const ParamSet& params, const std::vector<double>& offset) {
  ParamSet out = params;
  std::vector<double> z;
  for (NodeId id = 0; id < circuit.num_nodes(); ++id) {
    const Node& nd = circuit.node(id);
    if (nd.kind != NodeKind::Sum) continue;
    const EdgeId b = circuit.edge_begin(id);
    const std::size_t k = nd.children.size();
    if (std::all_of(offset.begin() + b, offset.begin() + b + k, [](double o) { return o == 0.0; })) continue;
    z.resize(k);
    double zmax = -INFINITY;
    for (std::size_t s = 0; s < k; ++s) {
      z[s] = std::log(params.weights[b + s]) + offset[b + s];
      zmax = std::max(zmax, z[s]);
    }
    double total = 0.0;
    for (auto& v : z) total += (v = std::exp(v - zmax));
    for (std::size_t s = 0; s < k; ++s) out.weights[b + s] = z[s] / total;
  }
  return out;
}

LandscapeGrid landscape(const Circuit& circuit, const ParamSet& params, const Matrix& data,
                        const LandscapeOptions& options) {
  check_batch(circuit, data);
  LandscapeGrid grid;
  grid.mode = options.mode;
  grid.alphas = grid_offsets(options.radius, options.points);
  grid.u = filter_normalized_direction(circuit, params, options.seed);
  if (options.mode == LandscapeMode::TwoD) {
    grid.betas = grid_offsets(options.radius, options.points);
    // Second stream derived from the seed so u and v differ.
    grid.v = filter_normalized_direction(circuit, params, options.seed ^ 0x9e3779b97f4a7c15ULL);
  } else {
    grid.betas = {0.0};
  }
  const std::size_t nb = grid.betas.size();
  grid.values.assign(grid.alphas.size() * nb, 0.0);
  const std::size_t total = grid.values.size();
  parallel_chunks(total, [&](int, std::size_t begin, std::size_t end) {
    std::vector<double> offset(circuit.num_edges());
    for (std::size_t idx = begin; idx < end; ++idx) {
      const double a = grid.alphas[idx / nb];
      const double bt = grid.betas[idx % nb];
      for (std::size_t e = 0; e < offset.size(); ++e)
        offset[e] = a * grid.u[e] + (grid.v.empty() ? 0.0 : bt * grid.v[e]);
      grid.values[idx] = mean_nll(circuit, perturb_logits(circuit, params, offset), data);
    }
  });
  if (options.mode == LandscapeMode::OneD) grid.betas.clear();
  return grid;
}

void write_landscape_csv(std::ostream& out, const LandscapeGrid& grid) {
  const auto old = out.precision(17);
  if (grid.mode == LandscapeMode::OneD) {
    out << "alpha,nll\n";
    for (std::size_t i = 0; i < grid.alphas.size(); ++i) out << grid.alphas[i] << ',' << grid.values[i] << '\n';
  } else {
    out << "alpha,beta,nll\n";
    const std::size_t nb = grid.betas.size();
    for (std::size_t i = 0; i < grid.alphas.size(); ++i)
      for (std::size_t j = 0; j < nb; ++j)
        out << grid.alphas[i] << ',' << grid.betas[j] << ',' << grid.values[i * nb + j] << '\n';
  }
  out.precision(old);
}

std::vector<double> hessian_top_eigenvalues(const Circuit& circuit, const ParamSet& params, const Matrix& data,
                                            std::size_t k) {
  Matrix hess;
  if (circuit.is_tree()) {
    hess = full_hessian_tree(circuit, params, data);
  } else if (circuit.num_edges() <= kFdHessianEdgeGuard) {
    hess = fd_hessian(circuit, params, data);
  } else {
    throw Error(ErrorKind::CapExceeded, "dense Hessian of a DAG circuit is limited to " +
                                            std::to_string(kFdHessianEdgeGuard) + " edges");
  }
  return top_eigenvalues(hess, std::min(k, hess.rows()));
}

SharpnessSeries sharpness_curve(const TrainReport& report) {
  SharpnessSeries s;
  double best = -INFINITY;
  for (const auto& r : report.epochs) {
    s.epochs.push_back(r.epoch);
    s.sharpness.push_back(r.sharpness);
    if (r.sharpness > best) {
      best = r.sharpness;
      s.argmax_epoch = r.epoch;
    }
  }
  return s;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw Error(ErrorKind::InvalidArgument, "spearman needs two equal-length series of at least two points");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace pcsharp
