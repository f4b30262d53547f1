#include "pcsharp/curvature.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "pcsharp/error.hpp"
#include "pcsharp/parallel.hpp"

namespace pcsharp {

namespace {

struct SampleScratch {
  std::vector<double> log_p, node_flow, edge_flow;
  explicit SampleScratch(const Circuit& c) : log_p(c.num_nodes()), node_flow(c.num_nodes()), edge_flow(c.num_edges()) {}
};

/// Per-edge Σ_x (F/θ)^2, reduced over workers in worker order.
std::vector<double> squared_gradient_sums(const Circuit& circuit, const ParamSet& params, const Matrix& batch) {
  check_batch(circuit, batch);
  const auto log_w = log_weights(params);
  const int workers = num_threads();
  std::vector<std::vector<double>> partial(workers, std::vector<double>(circuit.num_edges(), 0.0));
  parallel_chunks(batch.rows(), [&](int w, std::size_t begin, std::size_t end) {
    SampleScratch s(circuit);
    auto& acc = partial[w];
    for (std::size_t i = begin; i < end; ++i) {
      forward_sample(circuit, params, log_w, batch.row(i), s.log_p);
      backward_sample(circuit, params, s.log_p, s.node_flow, s.edge_flow);
      for (std::size_t e = 0; e < acc.size(); ++e) {
        const double g = s.edge_flow[e] / params.weights[e];
        acc[e] += g * g;
      }
    }
  });
  for (int w = 1; w < workers; ++w)
    for (std::size_t e = 0; e < partial[0].size(); ++e) partial[0][e] += partial[w][e];
  return partial[0];
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

double hessian_trace(const Circuit& circuit, const ParamSet& params, const Matrix& batch) {
  check_batch(circuit, batch);
  const auto log_w = log_weights(params);
  const int workers = num_threads();
  std::vector<double> partial(workers, 0.0);
  parallel_chunks(batch.rows(), [&](int w, std::size_t begin, std::size_t end) {
    SampleScratch s(circuit);
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      forward_sample(circuit, params, log_w, batch.row(i), s.log_p);
      backward_sample(circuit, params, s.log_p, s.node_flow, s.edge_flow);
      for (std::size_t e = 0; e < s.edge_flow.size(); ++e) {
        const double g = s.edge_flow[e] / params.weights[e];
        acc += g * g;
      }
    }
    partial[w] = acc;
  });
  return std::accumulate(partial.begin(), partial.end(), 0.0);
}

std::vector<double> hessian_diag(const Circuit& circuit, const ParamSet& params, const Matrix& batch) {
  auto diag = squared_gradient_sums(circuit, params, batch);
  for (double& d : diag) d = -d;
  return diag;
}

// ---------------------------------------------------------------------------
// Dense tree Hessian

PairTable::PairTable(const Circuit& circuit) : n_(circuit.num_edges()), kind_(n_ * n_, 0), ref_(n_ * n_, 0) {
  if (!circuit.is_tree()) throw Error(ErrorKind::NotATree, "pair table needs a tree-structured circuit");
  for (EdgeId i = 0; i < n_; ++i) {
    for (EdgeId j = i + 1; j < n_; ++j) {
      const PairClass pc = classify_pair(circuit, i, j);
      std::uint32_t ref = 0;
      if (pc.kind == PairKind::ProductPair) ref = pc.ancestor;
      if (pc.kind == PairKind::PathPair) ref = pc.shallower;
      kind_[i * n_ + j] = kind_[j * n_ + i] = static_cast<std::uint8_t>(pc.kind);
      ref_[i * n_ + j] = ref_[j * n_ + i] = ref;
    }
  }
}

namespace {

void check_dense(const Circuit& circuit, std::size_t cap) {
  if (!circuit.is_tree()) throw Error(ErrorKind::NotATree, "full Hessian needs a tree-structured circuit");
  if (circuit.num_edges() > cap)
    throw Error(ErrorKind::CapExceeded, "dense Hessian refused for " + std::to_string(circuit.num_edges()) +
                                            " sum edges (cap " + std::to_string(cap) + ")");
}

void accumulate_tree_hessian(const PairTable& table, const ParamSet& params, std::span<const double> node_flow,
                             std::span<const double> edge_flow, Matrix& out) {
  const std::size_t n = table.size();
  std::vector<double> g(n);
  for (std::size_t e = 0; e < n; ++e) g[e] = edge_flow[e] / params.weights[e];
  for (EdgeId i = 0; i < n; ++i) {
    out(i, i) -= g[i] * g[i];
    if (g[i] == 0.0) continue;
    for (EdgeId j = 0; j < n; ++j) {
      if (j == i) continue;
      double v = 0.0;
      switch (table.kind(i, j)) {
        case PairKind::SumPair:
          v = -g[i] * g[j];
          break;
        case PairKind::ProductPair: {
          const double fq = node_flow[table.ref(i, j)];
          // g[i] <= fq / θ_i keeps the quotient finite when fq is tiny
          v = fq > 0.0 ? (g[i] / fq) * g[j] - g[i] * g[j] : 0.0;
          break;
        }
        case PairKind::PathPair: {
          const EdgeId shallow = table.ref(i, j);
          const EdgeId deep = shallow == i ? j : i;
          v = g[deep] * (1.0 - edge_flow[shallow]) / params.weights[shallow];
          break;
        }
      }
      out(i, j) += v;
    }
  }
}

}  // namespace

Matrix full_hessian_tree(const Circuit& circuit, const ParamSet& params, std::span<const double> sample,
                         std::size_t cap) {
  Matrix batch(1, sample.size());
  std::copy(sample.begin(), sample.end(), batch.row(0).begin());
  return full_hessian_tree(circuit, params, batch, cap);
}

Matrix full_hessian_tree(const Circuit& circuit, const ParamSet& params, const Matrix& batch, std::size_t cap) {
  check_dense(circuit, cap);
  check_batch(circuit, batch);
  const PairTable table(circuit);
  const auto log_w = log_weights(params);
  const std::size_t n = circuit.num_edges();
  Matrix out(n, n);
  SampleScratch s(circuit);
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    forward_sample(circuit, params, log_w, batch.row(i), s.log_p);
    backward_sample(circuit, params, s.log_p, s.node_flow, s.edge_flow);
    accumulate_tree_hessian(table, params, s.node_flow, s.edge_flow, out);
  }
  // The per-pair formulas are symmetric analytically; average out round-off.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) out(i, j) = out(j, i) = 0.5 * (out(i, j) + out(j, i));
  return out;
}

// ---------------------------------------------------------------------------
// Eigen-solvers

namespace {

double frobenius(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

void sort_by_magnitude(EigenPairs& pairs) {
  std::vector<std::size_t> order(pairs.values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(pairs.values[a]) > std::abs(pairs.values[b]);
  });
  EigenPairs sorted;
  for (std::size_t i : order) {
    sorted.values.push_back(pairs.values[i]);
    sorted.vectors.push_back(std::move(pairs.vectors[i]));
  }
  pairs = std::move(sorted);
}

std::vector<double> multiply(const Matrix& a, std::span<const double> x) {
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) acc += r[j] * x[j];
    y[i] = acc;
  }
  return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double residual(const Matrix& a, double lambda, std::span<const double> v) {
  const auto av = multiply(a, v);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - lambda * v[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

EigenPairs jacobi_eigen(const Matrix& symmetric, int max_sweeps) {
  const std::size_t n = symmetric.rows();
  if (symmetric.cols() != n) throw Error(ErrorKind::InvalidArgument, "eigen-solver needs a square matrix");
  Matrix a = symmetric;
  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;
  const double scale = frobenius(a);

  bool converged = n <= 1 || scale == 0.0;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= 1e-15 * scale) {
      converged = true;
      break;
    }
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r != p && r != q) {
            const double arp = a(r, p);
            const double arq = a(r, q);
            a(r, p) = a(p, r) = c * arp - s * arq;
            a(r, q) = a(q, r) = s * arp + c * arq;
          }
          const double vrp = v(r, p);
          const double vrq = v(r, q);
          v(r, p) = c * vrp - s * vrq;
          v(r, q) = s * vrp + c * vrq;
        }
      }
    }
  }
  if (!converged) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) > 1e-12 * scale)
      throw Error(ErrorKind::NotConverged, "Jacobi rotations did not converge");
  }
  EigenPairs out;
  for (std::size_t i = 0; i < n; ++i) {
    out.values.push_back(a(i, i));
    std::vector<double> col(n);
    for (std::size_t r = 0; r < n; ++r) col[r] = v(r, i);
    out.vectors.push_back(std::move(col));
  }
  sort_by_magnitude(out);
  return out;
}

EigenPairs top_eigenpairs(const Matrix& symmetric, std::size_t k, double tol) {
  const std::size_t n = symmetric.rows();
  if (symmetric.cols() != n) throw Error(ErrorKind::InvalidArgument, "eigen-solver needs a square matrix");
  k = std::min(k, n);
  const double scale = frobenius(symmetric);

  if (n <= 64 || scale == 0.0) {
    EigenPairs all = jacobi_eigen(symmetric);
    all.values.resize(k);
    all.vectors.resize(k);
    return all;
  }

  std::mt19937_64 rng(0x5eedULL);
  std::normal_distribution<double> normal;
  auto random_orthogonal = [&](const std::vector<std::vector<double>>& basis) {
    std::vector<double> w(n);
    for (auto& x : w) x = normal(rng);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : basis) {
        const double d = dot(q, w);
        for (std::size_t i = 0; i < n; ++i) w[i] -= d * q[i];
      }
    const double norm = std::sqrt(dot(w, w));
    for (auto& x : w) x /= norm;
    return w;
  };

  std::vector<std::vector<double>> basis{random_orthogonal({})};
  std::vector<double> alpha, beta;
  std::size_t target = std::min(n, std::max<std::size_t>(2 * k + 30, 60));
  while (true) {
    while (alpha.size() < target) {
      const std::size_t j = alpha.size();
      std::vector<double> w = multiply(symmetric, basis[j]);
      const double a = dot(basis[j], w);
      alpha.push_back(a);
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& q : basis) {
          const double d = dot(q, w);
          for (std::size_t i = 0; i < n; ++i) w[i] -= d * q[i];
        }
      if (alpha.size() == n) break;
      const double b = std::sqrt(dot(w, w));
      if (b <= 1e-12 * scale) {
        beta.push_back(0.0);
        basis.push_back(random_orthogonal(basis));
      } else {
        beta.push_back(b);
        for (auto& x : w) x /= b;
        basis.push_back(std::move(w));
      }
    }
    const std::size_t m = alpha.size();
    Matrix t(m, m);
    for (std::size_t i = 0; i < m; ++i) {
      t(i, i) = alpha[i];
      if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[i];
    }
    EigenPairs ritz = jacobi_eigen(t);
    EigenPairs out;
    bool ok = true;
    for (std::size_t r = 0; r < k; ++r) {
      std::vector<double> y(n, 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        const double c = ritz.vectors[r][j];
        for (std::size_t i = 0; i < n; ++i) y[i] += c * basis[j][i];
      }
      const double norm = std::sqrt(dot(y, y));
      for (auto& x : y) x /= norm;
      if (residual(symmetric, ritz.values[r], y) > tol * scale) ok = false;
      out.values.push_back(ritz.values[r]);
      out.vectors.push_back(std::move(y));
    }
    if (ok) return out;
    if (m >= n) throw Error(ErrorKind::NotConverged, "Lanczos residuals above tolerance at full Krylov dimension");
    target = std::min(n, 2 * target);
  }
}

std::vector<double> top_eigenvalues(const Matrix& symmetric, std::size_t k, double tol) {
  return top_eigenpairs(symmetric, k, tol).values;
}

// ---------------------------------------------------------------------------
// CSV

void write_dense_csv(std::ostream& out, const Matrix& dense) {
  out << "edge_i,edge_j,value\n";
  for (std::size_t i = 0; i < dense.rows(); ++i)
    for (std::size_t j = 0; j < dense.cols(); ++j) out << i << ',' << j << ',' << format_double(dense(i, j)) << '\n';
}

void write_diag_csv(std::ostream& out, std::span<const double> diag) {
  out << "edge,value\n";
  for (std::size_t e = 0; e < diag.size(); ++e) out << e << ',' << format_double(diag[e]) << '\n';
}

void write_eigen_csv(std::ostream& out, std::span<const double> eigvals) {
  out << "rank,eigenvalue\n";
  for (std::size_t r = 0; r < eigvals.size(); ++r) out << r + 1 << ',' << format_double(eigvals[r]) << '\n';
}

}  // namespace pcsharp
