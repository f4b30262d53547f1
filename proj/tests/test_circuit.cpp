#include "doctest.h"

#include <cmath>

#include "pcsharp/circuit.hpp"
#include "pcsharp/error.hpp"
#include "zoo.hpp"

using namespace pcsharp;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an exception");
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST_CASE("minimal smooth sum validates") {
  CircuitBuilder b;
  auto a = b.add_leaf(0, Bernoulli{1.0});
  auto c = b.add_leaf(0, Bernoulli{0.0});
  auto m = b.build(b.add_sum({a, c}));
  CHECK(validate(m.circuit).ok());
  CHECK(m.circuit.is_tree());
  CHECK(m.circuit.num_edges() == 2);
  CHECK(m.params.weights == std::vector<double>{0.5, 0.5});
}

TEST_CASE("overlapping product scopes are flagged") {
  CircuitBuilder b;
  auto a = b.add_leaf(0, Bernoulli{0.3});
  auto c = b.add_leaf(0, Bernoulli{0.6});
  auto m = b.build(b.add_product({a, c}));
  auto rep = validate(m.circuit);
  CHECK(rep.count(ViolationKind::NonDecomposable) == 1);
  CHECK(rep.violations.size() == 1);
}

TEST_CASE("non-smooth sum is flagged") {
  CircuitBuilder b;
  auto a = b.add_leaf(0, Bernoulli{0.3});
  auto c = b.add_leaf(1, Bernoulli{0.6});
  auto m = b.build(b.add_sum({a, c}));
  CHECK(validate(m.circuit).count(ViolationKind::NonSmooth) == 1);
}

TEST_CASE("builder splices pass-through nodes to keep layers alternating") {
  CircuitBuilder b;
  auto l0 = b.add_leaf(0, Gaussian{0.0, 1.0});
  auto l1 = b.add_leaf(0, Gaussian{1.0, 1.0});
  auto inner = b.add_sum({l0, l1}, {0.25, 0.75});
  auto l2 = b.add_leaf(0, Gaussian{2.0, 1.0});
  auto root = b.add_sum({inner, l2}, {0.5, 0.5});
  auto m = b.build(root);
  CHECK(validate(m.circuit).ok());
  CHECK(m.circuit.num_nodes() == 6);
  const Node& pt = m.circuit.node(m.circuit.node(root).children[0]);
  CHECK(pt.kind == NodeKind::Product);
  CHECK(pt.children == std::vector<NodeId>{inner});

  CircuitBuilder p;
  auto x = p.add_leaf(0, Bernoulli{0.2});
  auto y = p.add_leaf(1, Bernoulli{0.7});
  auto z = p.add_leaf(2, Bernoulli{0.4});
  auto inner_p = p.add_product({x, y});
  auto mp = p.build(p.add_product({inner_p, z}));
  CHECK(validate(mp.circuit).ok());
  CHECK(mp.circuit.num_edges() == 1);
  CHECK(mp.params.weights[0] == 1.0);
}

TEST_CASE("construction errors") {
  CHECK(kind_of([] {
          std::vector<Node> nodes(2);
          nodes[0] = {NodeKind::Product, {1}, -1, {}};
          nodes[1] = {NodeKind::Product, {0}, -1, {}};
          Circuit c(nodes, 0);
        }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([] {
          std::vector<Node> nodes(3);
          nodes[0] = {NodeKind::Sum, {1}, -1, {}};
          nodes[1] = {NodeKind::Product, {2}, -1, {}};
          nodes[2] = {NodeKind::Sum, {1}, -1, {}};
          Circuit c(nodes, 0);
        }) == ErrorKind::CyclicGraph);
  CHECK(kind_of([] {
          CircuitBuilder b;
          auto a = b.add_leaf(0, Bernoulli{0.5});
          b.add_sum({a}, {0.4});
          b.build(1);
        }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([] {
          CircuitBuilder b;
          b.add_leaf(0, Categorical{{0.5, 0.4}});
          b.build(0);
        }) == ErrorKind::InvalidArgument);
}

TEST_CASE("topological order, scopes and tree navigation") {
  for (const auto& e : zoo::standard_zoo(12, 200, 5)) {
    const Circuit& c = e.model.circuit;
    std::vector<int> pos(c.num_nodes());
    for (std::size_t i = 0; i < c.topo_order().size(); ++i) pos[c.topo_order()[i]] = static_cast<int>(i);
    for (NodeId id = 0; id < c.num_nodes(); ++id)
      for (NodeId ch : c.node(id).children) CHECK(pos[ch] < pos[id]);
    CHECK(c.parents(c.root()).empty());
    bool single = true;
    for (NodeId id = 0; id < c.num_nodes(); ++id)
      if (id != c.root() && c.parents(id).size() != 1) single = false;
    CHECK(c.is_tree() == single);
    CHECK(validate(c).ok());
    CHECK_NOTHROW(check_params(c, e.model.params));
  }
}

TEST_CASE("pair classification") {
  // root product over two sums; the first sum has a nested sum below a product
  CircuitBuilder b;
  auto a0 = b.add_leaf(0, Bernoulli{0.2});
  auto a1 = b.add_leaf(0, Bernoulli{0.8});
  auto deep = b.add_sum({a0, a1}, {0.3, 0.7});
  auto a2 = b.add_leaf(0, Bernoulli{0.5});
  auto s0 = b.add_sum({deep, a2}, {0.6, 0.4});  // deep gets a pass-through product
  auto c0 = b.add_leaf(1, Bernoulli{0.1});
  auto c1 = b.add_leaf(1, Bernoulli{0.9});
  auto s1 = b.add_sum({c0, c1}, {0.5, 0.5});
  auto m = b.build(b.add_product({s0, s1}));
  const Circuit& c = m.circuit;
  REQUIRE(c.is_tree());

  auto cls = classify_pair(c, c.edge_id(s1, 0), c.edge_id(s1, 1));
  CHECK(cls.kind == PairKind::SumPair);

  cls = classify_pair(c, c.edge_id(s0, 1), c.edge_id(s1, 0));
  CHECK(cls.kind == PairKind::ProductPair);
  CHECK(cls.ancestor == c.root());
  CHECK_FALSE(cls.weight_above.has_value());

  cls = classify_pair(c, c.edge_id(deep, 1), c.edge_id(s0, 0));
  CHECK(cls.kind == PairKind::PathPair);
  CHECK(cls.deeper == c.edge_id(deep, 1));
  CHECK(cls.shallower == c.edge_id(s0, 0));

  // the sibling edge of s0 is off the path: common ancestor is s0 itself
  cls = classify_pair(c, c.edge_id(deep, 1), c.edge_id(s0, 1));
  CHECK(cls.kind == PairKind::SumPair);

  CHECK(kind_of([&] { classify_pair(c, 0, 0); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("pair classification refuses DAGs") {
  zoo::Spec spec;
  spec.dag = true;
  spec.num_vars = 4;
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto m = zoo::random_circuit(spec, s);
    if (m.circuit.is_tree()) continue;
    CHECK(kind_of([&] { classify_pair(m.circuit, 0, 1); }) == ErrorKind::NotATree);
    return;
  }
  FAIL("zoo produced no DAG");
}

TEST_CASE("serialization round trip") {
  for (const auto& e : zoo::standard_zoo(10, 200, 9)) {
    const std::string text = serialize(e.model.circuit, e.model.params);
    Model back = deserialize(text);
    CHECK(back.params == e.model.params);
    CHECK(back.circuit.num_nodes() == e.model.circuit.num_nodes());
    CHECK(back.circuit.root() == e.model.circuit.root());
    for (NodeId id = 0; id < back.circuit.num_nodes(); ++id) {
      CHECK(back.circuit.node(id).kind == e.model.circuit.node(id).kind);
      CHECK(back.circuit.node(id).children == e.model.circuit.node(id).children);
    }
    CHECK(serialize(back.circuit, back.params) == text);
  }
}

TEST_CASE("malformed files") {
  CHECK(kind_of([] { deserialize(""); }) == ErrorKind::MalformedFile);
  CHECK(kind_of([] { deserialize("pc v1 3 0\n0 S 1\n1 P 2\n2 S 1\nw 0 1\nw 2 1\n"); }) == ErrorKind::CyclicGraph);
  CHECK(kind_of([] { deserialize("pc v1 2 0\n0 S 1\n1 L 0 bern 0.5\n"); }) == ErrorKind::MalformedFile);
  CHECK(kind_of([] { deserialize("pc v1 2 0\n0 S 1\n1 L 0 bern x\nw 0 1\n"); }) == ErrorKind::MalformedFile);
  try {
    deserialize("pc v1 2 0\n0 S 1\n1 L 0 beta 0.5\nw 0 1\n");
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}
