// End-to-end acceptance checks. One PASS/FAIL line per criterion; exits 1 if
// any fails. argv[1] is the path of the pcsharp CLI.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pcsharp/curvature.hpp"
#include "pcsharp/data.hpp"
#include "pcsharp/diagnostics.hpp"
#include "pcsharp/error.hpp"
#include "pcsharp/fd_oracle.hpp"
#include "pcsharp/learning.hpp"
#include "pcsharp/structure.hpp"
#include "zoo.hpp"

using namespace pcsharp;

namespace {

std::string g_cli;

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Binary tree Bayesian network: parent[v] < v (or -1 for the root), child
// copies its parent with probability keep[v], otherwise draws a fair bit.
struct TreeNet {
  std::vector<int> parent;
  std::vector<double> keep;
  std::vector<double> root_p;
};

Matrix sample_net(const TreeNet& net, std::size_t rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = net.parent.size();
  Matrix x(rows, n);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t v = 0; v < n; ++v) {
      if (net.parent[v] < 0) {
        x(r, v) = u(rng) < net.root_p[v] ? 1.0 : 0.0;
      } else {
        const double par = x(r, net.parent[v]);
        x(r, v) = u(rng) < net.keep[v] ? par : (u(rng) < 0.5 ? 1.0 : 0.0);
      }
    }
  return x;
}

TreeNet random_net(int vars, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TreeNet net;
  for (int v = 0; v < vars; ++v) {
    net.parent.push_back(v == 0 ? -1 : static_cast<int>(rng() % v));
    net.keep.push_back(0.5 + 0.45 * u(rng));
    net.root_p.push_back(0.2 + 0.6 * u(rng));
  }
  return net;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

// --- 1 ---------------------------------------------------------------------
Outcome gradients() {
  const auto entries = zoo::standard_zoo(24, 200, 1001);
  int trees = 0, dags = 0;
  double worst = 0.0;
  for (const auto& e : entries) {
    (e.model.circuit.is_tree() ? trees : dags)++;
    const auto flows = backward(e.model.circuit, e.model.params, forward(e.model.circuit, e.model.params, e.data));
    const auto g = loglik_gradient(flows, e.model.params);
    worst = std::max(worst, max_abs_diff(g, fd_gradient(e.model.circuit, e.model.params, e.data)));
  }
  return {worst <= 1e-6 && trees > 0 && dags > 0,
          std::to_string(entries.size()) + " circuits (" + std::to_string(trees) + " trees), max |err| " + fmt(worst)};
}

// --- 2 ---------------------------------------------------------------------
Outcome traces() {
  const auto entries = zoo::standard_zoo(24, 200, 1001);
  double worst = 0.0;
  for (const auto& e : entries) {
    const double tr = hessian_trace(e.model.circuit, e.model.params, e.data);
    const double fd = std::abs(fd_trace(fd_hessian(e.model.circuit, e.model.params, e.data)));
    worst = std::max(worst, std::abs(tr - fd) / std::max(fd, 1e-300));
  }
  return {worst <= 1e-4, "max relative err " + fmt(worst)};
}

// --- 3 ---------------------------------------------------------------------
Outcome tree_hessians() {
  const auto entries = zoo::tree_zoo(12, 40, 4, 2002);
  std::array<int, 3> counts{};
  double worst = 0.0;
  for (const auto& e : entries) {
    const Circuit& c = e.model.circuit;
    const Matrix h = full_hessian_tree(c, e.model.params, e.data);
    const Matrix fd = fd_hessian(c, e.model.params, e.data);
    for (std::size_t i = 0; i < h.rows(); ++i)
      for (std::size_t j = 0; j < h.cols(); ++j) {
        worst = std::max(worst, std::abs(h(i, j) - fd(i, j)));
        if (i < j) ++counts[static_cast<int>(classify_pair(c, i, j).kind)];
      }
  }
  const bool covered = *std::min_element(counts.begin(), counts.end()) >= 10;
  return {worst <= 1e-4 && covered, "max |err| " + fmt(worst) + ", pairs sum/product/path " + std::to_string(counts[0]) +
                                        "/" + std::to_string(counts[1]) + "/" + std::to_string(counts[2])};
}

// --- 4 ---------------------------------------------------------------------
Outcome scaling() {
  const std::string cmd = "\"" + g_cli + "\" --threads 1 bench --sizes 1000,10000,100000,1000000 --samples 16 --repeats 5";
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  if (!pipe) return {false, "could not run " + cmd};
  std::string out;
  char buf[256];
  while (fgets(buf, sizeof buf, pipe.get())) out += buf;
  const auto at = out.find("r2 ");
  if (at == std::string::npos) return {false, "no r2 in bench output"};
  double r2 = NAN;
  try {
    r2 = std::stod(out.substr(at + 3));
  } catch (const std::exception&) {
    return {false, "unparsable r2"};
  }
  return {r2 >= 0.98, "R^2 " + fmt(r2)};
}

// --- 5 ---------------------------------------------------------------------
Outcome mu_zero() {
  int identical = 0;
  for (int k = 0; k < 100; ++k) {
    zoo::Spec spec;
    spec.num_vars = 2 + k % 4;
    spec.dag = k % 2;
    const Model m = zoo::random_circuit(spec, 5000 + k);
    const Matrix batch = zoo::random_data(m, 1 + k % 7, 7000 + k);
    RegularizerConfig cfg;
    cfg.mu = 0.0;
    cfg.smoothing_alpha = (k % 5) / 4.0;
    const ParamSet a = em_step_vanilla(m.circuit, m.params, batch, cfg.smoothing_alpha);
    const ParamSet b = em_step_sharp(m.circuit, m.params, batch, cfg);
    bool same = a.weights == b.weights;
    for (std::size_t l = 0; same && l < a.leaves.size(); ++l)
      same = leaf_coordinates(a.leaves[l]) == leaf_coordinates(b.leaves[l]);
    identical += same;
  }
  return {identical == 100, std::to_string(identical) + "/100 bitwise identical"};
}

// --- 6 ---------------------------------------------------------------------
Outcome closed_form() {
  double worst_q = 0.0, worst_c = 0.0, min_disc = INFINITY;
  int points = 0;
  for (int i = 0; i < 25; ++i)
    for (int j = 0; j < 20; ++j)
      for (int k = 0; k < 20; ++k) {
        const double F = std::pow(10.0, -6.0 + 12.0 * i / 24.0);
        const double lambda = std::pow(10.0, -3.0 + 6.0 * j / 19.0);
        const double mu = k == 0 ? 0.0 : std::pow(10.0, -6.0 + 9.0 * (k - 1) / 18.0);
        min_disc = std::min(min_disc, F * F + 4.0 * lambda * mu * F);
        worst_q = std::max(worst_q, std::abs(sharp_update_relative_residual(sharp_update(F, lambda, mu), F, lambda, mu)));
        worst_c = std::max(worst_c,
                           std::abs(cubic_relative_residual(cubic_update_oracle(F, lambda, mu), F, lambda, mu)));
        ++points;
      }
  return {points == 10000 && worst_q <= 1e-12 && worst_c <= 1e-12 && min_disc >= 0.0,
          std::to_string(points) + " points, residual " + fmt(worst_q) + " / cubic " + fmt(worst_c)};
}

// --- 7 ---------------------------------------------------------------------
Outcome monotone_em() {
  std::vector<std::pair<Model, Matrix>> runs;
  for (int k = 0; k < 5; ++k) {
    zoo::Spec spec;
    spec.num_vars = 3 + k;
    spec.dag = k % 2;
    Model m = zoo::random_circuit(spec, 300 + k);
    Matrix data = zoo::random_data(m, 80, 400 + k);
    runs.emplace_back(std::move(m), std::move(data));
  }
  for (int k = 0; k < 2; ++k) {
    Matrix data = sample_net(random_net(8, 50 + k), 200, 60 + k);
    HcltConfig h;
    h.num_latents = 3 + k;
    h.seed = k;
    runs.emplace_back(build_hclt(chow_liu_tree(data), h, &data), std::move(data));
  }
  double worst = INFINITY;
  for (auto& [m, data] : runs) {
    ParamSet p = m.params;
    EmSettings s;
    s.epochs = 50;
    s.batch_size = data.rows();
    RegularizerConfig cfg;
    cfg.smoothing_alpha = 1.0;
    const auto rep = em_train(m.circuit, p, data, Matrix(), cfg, s);
    double prev = -mean_nll(m.circuit, m.params, data);
    for (const auto& r : rep.epochs) {
      worst = std::min(worst, -r.train_nll - prev);
      prev = -r.train_nll;
    }
  }
  return {worst >= -1e-9, std::to_string(runs.size()) + " circuits, worst step " + fmt(worst)};
}

// --- 8 ---------------------------------------------------------------------
Outcome normalization() {
  std::vector<std::pair<std::string, Model>> models;
  for (int k = 0; k < 6; ++k) {
    zoo::Spec spec;
    spec.num_vars = 2 + 2 * k;
    spec.family = zoo::Family::Bernoulli;
    spec.dag = k % 2;
    models.emplace_back("zoo", zoo::random_circuit(spec, 900 + k));
  }
  const Matrix net_data = sample_net(random_net(10, 3), 300, 4);
  HcltConfig h;
  h.num_latents = 4;
  models.emplace_back("hclt", build_hclt(chow_liu_tree(net_data), h, &net_data));
  RatConfig r;
  r.num_vars = 12;
  r.depth = 3;
  r.num_sums = 3;
  r.num_input_distributions = 3;
  r.num_repetitions = 2;
  r.leaf_family = LeafFamily::Bernoulli;
  models.emplace_back("rat", build_rat(r));

  double worst = 0.0;
  int checked = 0;
  for (auto& [name, m] : models) {
    const int vars = static_cast<int>(m.circuit.num_vars());
    const Matrix data = name == "zoo" ? zoo::random_data(m, 60, 11) : [&] {
      Matrix d(net_data.rows(), vars);
      for (std::size_t i = 0; i < d.rows(); ++i)
        for (int v = 0; v < vars; ++v) d(i, v) = net_data(i, v % net_data.cols());
      return d;
    }();
    worst = std::max(worst, std::abs(zoo::log_total_mass(m.circuit, m.params)));
    ParamSet em = m.params;
    EmSettings es;
    es.epochs = 5;
    em_train(m.circuit, em, data, Matrix(), RegularizerConfig{.mu = 0.1, .smoothing_alpha = 0.5}, es);
    ParamSet sgd = m.params;
    SgdSettings ss;
    ss.epochs = 5;
    sgd_train(m.circuit, sgd, data, Matrix(), RegularizerConfig{.mu = 0.01}, ss);
    worst = std::max(worst, std::abs(zoo::log_total_mass(m.circuit, em)));
    worst = std::max(worst, std::abs(zoo::log_total_mass(m.circuit, sgd)));
    checked += 3;
  }
  // |log Σ p| ≤ 1e-9 bounds |Σ p - 1| to about 1e-9
  return {worst <= 1e-9, std::to_string(checked) + " checks, max |log mass| " + fmt(worst)};
}

// --- 9 and 11 share the spiral runs ----------------------------------------
struct SpiralRun {
  Model model;
  Dataset data;
  ParamSet plain, sharp;
};

std::vector<SpiralRun>& spiral_runs() {
  static std::vector<SpiralRun> runs = [] {
    std::vector<SpiralRun> out;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      Dataset ds = gen_manifold("spiral", 1000, 0.05, seed);
      minmax_scale(ds);
      ds = subsample(ds, {0.05, seed});
      RatConfig r;
      r.num_vars = 2;
      r.seed = seed;
      Model m = build_rat(r);
      SgdSettings s;
      s.epochs = 200;
      s.seed = seed;
      ParamSet plain = m.params, sharp = m.params;
      sgd_train(m.circuit, plain, ds.train, ds.valid, RegularizerConfig{.mu = 0.0}, s);
      sgd_train(m.circuit, sharp, ds.train, ds.valid, RegularizerConfig{.mu = 0.1}, s);
      out.push_back({std::move(m), std::move(ds), std::move(plain), std::move(sharp)});
    }
    return out;
  }();
  return runs;
}

Outcome spiral_sharpness() {
  double sharp0 = 0, sharp1 = 0, nll0 = 0, nll1 = 0;
  for (const auto& r : spiral_runs()) {
    sharp0 += hessian_trace(r.model.circuit, r.plain, r.data.train) / 3;
    sharp1 += hessian_trace(r.model.circuit, r.sharp, r.data.train) / 3;
    nll0 += mean_nll(r.model.circuit, r.plain, r.data.test) / 3;
    nll1 += mean_nll(r.model.circuit, r.sharp, r.data.test) / 3;
  }
  const bool nll_ok = nll1 <= nll0 + 0.02 * std::abs(nll0);
  return {sharp1 < sharp0 && nll_ok, "sharpness " + fmt(sharp0) + " -> " + fmt(sharp1) + ", test NLL " + fmt(nll0) +
                                         " -> " + fmt(nll1)};
}

// --- 10 --------------------------------------------------------------------
Outcome em_direction() {
  const TreeNet net = random_net(50, 10);
  Dataset ds{"surrogate50", sample_net(net, 2000, 1), sample_net(net, 400, 2), sample_net(net, 400, 3), 50, true};
  ds = subsample(ds, {0.05, 7});
  HcltConfig h;
  h.num_latents = 8;
  h.seed = 7;
  const Model m = build_hclt(chow_liu_tree(ds.train), h, &ds.train);
  EmSettings s;
  s.epochs = 60;
  s.batch_size = 50;
  s.seed = 7;
  RegularizerConfig cfg;
  cfg.smoothing_alpha = 0.1;

  ParamSet vanilla = m.params;
  em_train(m.circuit, vanilla, ds.train, ds.valid, cfg, s);

  ParamSet best;
  double best_valid = INFINITY, best_mu = 0;
  for (double mu : kMuGrid) {
    ParamSet p = m.params;
    cfg.mu = mu;
    em_train(m.circuit, p, ds.train, ds.valid, cfg, s);
    const double v = mean_nll(m.circuit, p, ds.valid);
    if (v < best_valid) best_valid = v, best_mu = mu, best = std::move(p);
  }
  const double t0 = hessian_trace(m.circuit, vanilla, ds.train);
  const double t1 = hessian_trace(m.circuit, best, ds.train);
  return {t1 < t0, "sharpness " + fmt(t0) + " -> " + fmt(t1) + " at mu " + fmt(best_mu) + ", valid NLL " +
                       fmt(mean_nll(m.circuit, vanilla, ds.valid)) + " -> " + fmt(best_valid)};
}

// --- 11 --------------------------------------------------------------------
Outcome landscape_sanity() {
  bool origin_exact = true;
  int smaller = 0;
  std::string eig;
  for (const auto& r : spiral_runs()) {
    for (const ParamSet* p : {&r.plain, &r.sharp}) {
      LandscapeOptions opt;
      opt.points = 5;
      const auto grid = landscape(r.model.circuit, *p, r.data.train, opt);
      origin_exact = origin_exact && grid.values[2] == mean_nll(r.model.circuit, *p, r.data.train);
    }
    const double e0 = std::abs(hessian_top_eigenvalues(r.model.circuit, r.plain, r.data.train, 1)[0]);
    const double e1 = std::abs(hessian_top_eigenvalues(r.model.circuit, r.sharp, r.data.train, 1)[0]);
    smaller += e1 < e0;
    eig += (eig.empty() ? "" : ", ") + fmt(e0) + " -> " + fmt(e1);
  }
  return {origin_exact && smaller >= 2,
          std::string("origin ") + (origin_exact ? "exact" : "mismatch") + ", top |eig| " + eig};
}

// --- 12 --------------------------------------------------------------------
Outcome chow_liu() {
  TreeNet net;
  net.parent = {-1, 0, 1, 1, 3};
  net.keep = {0, 0.7, 0.6, 0.8, 0.65};
  net.root_p = {0.4, 0, 0, 0, 0};
  const SpanningTree t = chow_liu_tree(sample_net(net, 10000, 12));
  std::set<std::pair<int, int>> want{{0, 1}, {1, 2}, {1, 3}, {3, 4}};
  std::set<std::pair<int, int>> got(t.edges.begin(), t.edges.end());
  return {got == want, got == want ? "edge set recovered" : "edge set differs"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <path-to-pcsharp-cli>\n";
    return 2;
  }
  g_cli = argv[1];
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;  // <= 0: no limit stated
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient vs finite differences", 60, gradients},
      {2, "trace vs finite-difference Hessian", 300, traces},
      {3, "dense tree Hessian vs finite differences", 300, tree_hessians},
      {4, "linear scaling of the trace", 600, scaling},
      {5, "mu = 0 sharp step equals vanilla step", 0, mu_zero},
      {6, "closed-form update residuals", 0, closed_form},
      {7, "full-batch EM monotonicity", 0, monotone_em},
      {8, "normalization before and after training", 0, normalization},
      {9, "spiral sharpness reduction", 1200, spiral_sharpness},
      {10, "sharp EM lowers sharpness", 1800, em_direction},
      {11, "landscape origin and top eigenvalue", 0, landscape_sanity},
      {12, "Chow-Liu recovery", 0, chow_liu},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_seconds > 0 && secs > c.budget_seconds) {
      o.pass = false;
      o.detail += ", over time budget";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.name << " (" << o.detail << ", "
              << fmt(secs) << " s)" << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << "\n";
  return failed ? 1 : 0;
}
