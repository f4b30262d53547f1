#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "pcsharp/curvature.hpp"
#include "pcsharp/error.hpp"
#include "pcsharp/fd_oracle.hpp"
#include "pcsharp/learning.hpp"
#include "pcsharp/structure.hpp"
#include "zoo.hpp"

using namespace pcsharp;

namespace {

Model two_leaf_sum(LeafDistribution a, LeafDistribution b, std::vector<double> w = {0.5, 0.5}) {
  CircuitBuilder builder;
  auto x = builder.add_leaf(0, std::move(a));
  auto y = builder.add_leaf(0, std::move(b));
  return builder.build(builder.add_sum({x, y}, std::move(w)));
}

double distance_to_uniform(const std::vector<double>& w) {
  double s = 0.0;
  for (double v : w) s += (v - 1.0 / w.size()) * (v - 1.0 / w.size());
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("closed-form update examples") {
  CHECK(sharp_update(1.0, 1.0, 0.0) == 1.0);
  CHECK(sharp_update(0.0, 1.0, 1.0) == 0.0);
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  CHECK(sharp_update(1.0, 1.0, 1.0) == doctest::Approx(golden).epsilon(1e-15));
  CHECK(sharp_update_relative_residual(sharp_update(1.0, 1.0, 1.0), 1.0, 1.0, 1.0) < 1e-12);

  CHECK(cubic_update_oracle(1.0, 1.0, 0.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(cubic_update_oracle(0.0, 1.0, 1.0) == 0.0);
  const double r = cubic_update_oracle(1.0, 1.0, 1.0);
  CHECK(r == doctest::Approx(1.6956).epsilon(1e-4));
  CHECK(std::abs(r * r * r - r * r - 2.0) < 1e-12);
}

TEST_CASE("vanilla M-step") {
  auto m = two_leaf_sum(Bernoulli{0.5}, Bernoulli{0.5});
  auto out = m_step_vanilla(m.circuit, m.params, {3.0, 1.0}, 1.0);
  CHECK(out.weights[0] == doctest::Approx(0.75));
  CHECK(out.weights[1] == doctest::Approx(0.25));
  std::vector<NodeId> degenerate;
  auto same = m_step_vanilla(m.circuit, m.params, {0.0, 0.0}, 1.0, &degenerate);
  CHECK(same.weights == m.params.weights);
  CHECK(degenerate == std::vector<NodeId>{m.circuit.root()});
  auto half = m_step_vanilla(m.circuit, m.params, {3.0, 1.0}, 0.5);
  CHECK(half.weights[0] == doctest::Approx(0.625));
}

TEST_CASE("sharp M-step shrinks toward uniform") {
  auto m = two_leaf_sum(Bernoulli{0.5}, Bernoulli{0.5});
  auto reg = m_step_sharp(m.circuit, m.params, {4.0, 1.0}, 1.0, {1.0, 1.0}, 1.0);
  const double a = sharp_update(4.0, 1.0, 1.0), b = sharp_update(1.0, 1.0, 1.0);
  CHECK(reg.weights[0] == doctest::Approx(a / (a + b)));
  CHECK(distance_to_uniform(reg.weights) < distance_to_uniform({0.8, 0.2}));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  zoo::Spec spec;
  spec.num_vars = 1;
  spec.max_sum_arity = 4;
  auto c = zoo::random_circuit(spec, 1);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> flows(c.circuit.num_edges());
    for (auto& f : flows) f = u(rng);
    double prev = INFINITY;
    for (double mu : {0.0, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0}) {
      auto w = m_step_sharp(c.circuit, c.params, flows, 1.0, std::vector<double>(flows.size(), mu), 1.0).weights;
      const double d = distance_to_uniform(w);
      CHECK(d <= prev + 1e-15);
      prev = d;
    }
  }
}

TEST_CASE("zero-flow edges are floored") {
  auto m = two_leaf_sum(Bernoulli{0.5}, Bernoulli{0.5});
  auto out = m_step_sharp(m.circuit, m.params, {2.0, 0.0}, 1.0, {0.3, 0.3}, 1.0);
  CHECK(out.weights[1] > 0.0);
  CHECK(out.weights[0] + out.weights[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("sharp step with mu zero is the vanilla step") {
  for (const auto& e : zoo::standard_zoo(6, 200, 5)) {
    RegularizerConfig cfg;
    cfg.smoothing_alpha = 0.3;
    CHECK(em_step_sharp(e.model.circuit, e.model.params, e.data, cfg) ==
          em_step_vanilla(e.model.circuit, e.model.params, e.data, 0.3));
  }
}

TEST_CASE("schedules") {
  RegularizerConfig cfg;
  cfg.schedule = MuSchedule::AdaptiveDoF;
  CHECK(schedule_mu({10.0, 10.0, 2.0, 2.0, 0.7}, cfg) == doctest::Approx(1.0));
  CHECK(schedule_mu({10.0, 20.0, 1.0, 1.0, 0.7}, cfg) == doctest::Approx(std::pow(1.05, 100.0)));
  CHECK(std::pow(1.05, 100.0) == doctest::Approx(131.5).epsilon(1e-3));
  CHECK(schedule_mu({10.0, 20.0, 1.0, 0.0, 0.7}, cfg) == 0.7);
  cfg.schedule = MuSchedule::Fixed;
  cfg.mu = 0.05;
  CHECK(schedule_mu({10.0, 20.0, 1.0, 1.0, 0.7}, cfg) == 0.05);

  auto m = two_leaf_sum(Bernoulli{0.5}, Bernoulli{0.5});
  auto lm = layer_mean_flow(m.circuit, {0.2, 0.4});
  REQUIRE(lm.size() == 1);
  CHECK(lm[0] == doctest::Approx(0.3));

  RegularizerConfig bad;
  bad.lambda = 0.0;
  CHECK_THROWS_AS(bad.check(), Error);
}

TEST_CASE("leaf updates") {
  {
    CircuitBuilder b;
    auto m = b.build(b.add_sum({b.add_leaf(0, Bernoulli{0.5})}));
    Matrix x(4, 1, 1.0);
    auto flows = backward(m.circuit, m.params, forward(m.circuit, m.params, x));
    auto out = update_leaves(m.circuit, m.params, flows, x, 1.0);
    CHECK(std::get<Bernoulli>(out.leaves[0]).p == doctest::Approx(1.0 - 1e-6).epsilon(1e-15));
  }
  {
    CircuitBuilder b;
    auto m = b.build(b.add_sum({b.add_leaf(0, Gaussian{0.3, 2.0})}));
    Matrix x(2, 1);
    x(0, 0) = -1.0;
    x(1, 0) = 1.0;
    auto flows = backward(m.circuit, m.params, forward(m.circuit, m.params, x));
    auto out = update_leaves(m.circuit, m.params, flows, x, 1.0);
    CHECK(std::get<Gaussian>(out.leaves[0]).mean == doctest::Approx(0.0));
    CHECK(std::get<Gaussian>(out.leaves[0]).stddev == doctest::Approx(1.0));
  }
}

TEST_CASE("EM recovers a known two-component mixture") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix x(4000, 3);
  const double p[2][3] = {{0.9, 0.8, 0.1}, {0.1, 0.2, 0.85}};
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const int z = u(rng) < 0.3 ? 0 : 1;
    for (int v = 0; v < 3; ++v) x(r, v) = u(rng) < p[z][v] ? 1.0 : 0.0;
  }
  CircuitBuilder b;
  std::vector<NodeId> comps;
  for (int z = 0; z < 2; ++z) {
    std::vector<NodeId> leaves;
    for (int v = 0; v < 3; ++v) leaves.push_back(b.add_leaf(v, Bernoulli{z == 0 ? 0.7 : 0.3}));
    comps.push_back(b.add_product(leaves));
  }
  auto m = b.build(b.add_sum(comps, {0.5, 0.5}));
  EmSettings s;
  s.epochs = 100;
  s.batch_size = x.rows();
  em_train(m.circuit, m.params, x, Matrix(), {}, s);
  CHECK(std::abs(m.params.weights[0] - 0.3) < 0.05);
  CHECK(std::abs(m.params.weights[1] - 0.7) < 0.05);
}

TEST_CASE("Gaussian mixture means recover cluster centres") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 0.3);
  Matrix x(2000, 1);
  for (std::size_t r = 0; r < x.rows(); ++r) x(r, 0) = (r % 2 ? 2.0 : -2.0) + g(rng);
  auto m = two_leaf_sum(Gaussian{-0.5, 1.0}, Gaussian{0.5, 1.0});
  EmSettings s;
  s.epochs = 50;
  s.batch_size = x.rows();
  em_train(m.circuit, m.params, x, Matrix(), {}, s);
  CHECK(std::abs(std::get<Gaussian>(m.params.leaves[0]).mean + 2.0) < 0.1);
  CHECK(std::abs(std::get<Gaussian>(m.params.leaves[1]).mean - 2.0) < 0.1);
}

TEST_CASE("full-batch vanilla EM never decreases the likelihood") {
  for (const auto& e : zoo::standard_zoo(6, 200, 91)) {
    ParamSet p = e.model.params;
    Matrix data = zoo::random_data(e.model, 60, 4);
    EmSettings s;
    s.epochs = 30;
    s.batch_size = data.rows();
    auto rep = em_train(e.model.circuit, p, data, Matrix(), {}, s);
    double prev = mean_nll(e.model.circuit, e.model.params, data);
    for (const auto& r : rep.epochs) {
      CHECK(r.train_nll <= prev + 1e-9);
      prev = r.train_nll;
    }
    CHECK_NOTHROW(check_params(e.model.circuit, p));
  }
}

TEST_CASE("penalty gradient matches finite differences") {
  for (const auto& e : zoo::standard_zoo(10, 120, 313)) {
    const auto og = objective_gradients(e.model.circuit, e.model.params, e.data, true);
    CHECK(og.penalty == doctest::Approx(hessian_trace(e.model.circuit, e.model.params, e.data)).epsilon(1e-12));
    const auto fd = fd_penalty_gradient(e.model.circuit, e.model.params, e.data);
    for (std::size_t k = 0; k < fd.weights.size(); ++k)
      CHECK(std::abs(og.penalty_grad.weights[k] - fd.weights[k]) <= 1e-5 * std::max(1.0, std::abs(fd.weights[k])));
    for (std::size_t o = 0; o < fd.leaves.size(); ++o)
      for (std::size_t k = 0; k < fd.leaves[o].size(); ++k)
        CHECK(std::abs(og.penalty_grad.leaves[o][k] - fd.leaves[o][k]) <=
              1e-5 * std::max(1.0, std::abs(fd.leaves[o][k])));
  }
}

TEST_CASE("log-likelihood leaf gradient matches finite differences") {
  for (const auto& e : zoo::standard_zoo(6, 120, 414)) {
    const auto og = objective_gradients(e.model.circuit, e.model.params, e.data, false);
    ParamSet p = e.model.params;
    const double h = 1e-6;
    for (std::size_t o = 0; o < p.leaves.size(); ++o) {
      auto coords = leaf_coordinates(e.model.params.leaves[o]);
      for (std::size_t k = 0; k < coords.size(); ++k) {
        auto c = coords;
        c[k] += h;
        p.leaves[o] = leaf_from_coordinates(e.model.params.leaves[o], c);
        double up = 0.0;
        for (double v : log_likelihoods(e.model.circuit, p, e.data)) up += v;
        c[k] -= 2 * h;
        p.leaves[o] = leaf_from_coordinates(e.model.params.leaves[o], c);
        double down = 0.0;
        for (double v : log_likelihoods(e.model.circuit, p, e.data)) down += v;
        p.leaves[o] = e.model.params.leaves[o];
        CHECK(std::abs(og.loglik_grad.leaves[o][k] - (up - down) / (2 * h)) < 1e-5);
      }
    }
  }
}

TEST_CASE("sgd with zero learning rate leaves parameters unchanged") {
  auto e = zoo::standard_zoo(1, 200, 8)[0];
  ParamSet p = e.model.params;
  SgdSettings s;
  s.learning_rate = 0.0;
  s.epochs = 3;
  RegularizerConfig cfg;
  cfg.mu = 0.1;
  sgd_train(e.model.circuit, p, e.data, e.data, cfg, s);
  CHECK(p == e.model.params);
}

TEST_CASE("sgd reaches the EM optimum on a tiny mixture") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix x(300, 2);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const bool z = u(rng) < 0.4;
    x(r, 0) = u(rng) < (z ? 0.9 : 0.2) ? 1.0 : 0.0;
    x(r, 1) = u(rng) < (z ? 0.8 : 0.3) ? 1.0 : 0.0;
  }
  CircuitBuilder b;
  std::vector<NodeId> comps;
  for (int z = 0; z < 2; ++z)
    comps.push_back(b.add_product({b.add_leaf(0, Bernoulli{z ? 0.6 : 0.4}), b.add_leaf(1, Bernoulli{z ? 0.55 : 0.45})}));
  auto m = b.build(b.add_sum(comps));
  ParamSet em = m.params, sgd = m.params;
  EmSettings es;
  es.epochs = 200;
  es.batch_size = x.rows();
  em_train(m.circuit, em, x, Matrix(), {}, es);
  SgdSettings ss;
  ss.epochs = 200;
  ss.batch_size = 100;
  ss.learning_rate = 0.05;
  sgd_train(m.circuit, sgd, x, Matrix(), {}, ss);
  const double a = mean_nll(m.circuit, em, x), c = mean_nll(m.circuit, sgd, x);
  CHECK(c <= a * 1.01);
}

TEST_CASE("simplex preserved through training") {
  auto e = zoo::standard_zoo(2, 200, 19)[1];
  Matrix data = zoo::random_data(e.model, 80, 1);
  ParamSet p = e.model.params;
  RegularizerConfig cfg;
  cfg.mu = 0.5;
  SgdSettings s;
  s.epochs = 5;
  s.batch_size = 20;
  sgd_train(e.model.circuit, p, data, data, cfg, s);
  CHECK_NOTHROW(check_params(e.model.circuit, p));
  EmSettings es;
  es.epochs = 5;
  es.batch_size = 20;
  em_train(e.model.circuit, p, data, data, cfg, es);
  CHECK_NOTHROW(check_params(e.model.circuit, p));
}

TEST_CASE("train log format") {
  TrainReport r;
  r.epochs.push_back({1, 2.5, 3.0, 4.0, 0.2, 0.1, 0.0});
  std::ostringstream out;
  write_train_log(out, r);
  CHECK(out.str().rfind("epoch,train_nll,valid_nll,sharpness,dof,mu,seconds\n1,2.5,3,4,0.2", 0) == 0);
}
