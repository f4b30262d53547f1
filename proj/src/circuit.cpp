#include "pcsharp/circuit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <queue>
#include <sstream>

#include "pcsharp/error.hpp"

namespace pcsharp {

double leaf_log_density(const LeafDistribution& dist, double x) {
  return std::visit(
      [x](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Bernoulli>) {
          return x > 0.5 ? std::log(d.p) : std::log1p(-d.p);
        } else if constexpr (std::is_same_v<T, Categorical>) {
          const auto k = static_cast<long>(std::lround(x));
          if (k < 0 || k >= static_cast<long>(d.probs.size())) return -INFINITY;
          return std::log(d.probs[k]);
        } else {
          const double z = (x - d.mean) / d.stddev;
          return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(d.stddev) - 0.5 * z * z;
        }
      },
      dist);
}

void check_leaf(const LeafDistribution& dist) {
  std::visit(
      [](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Bernoulli>) {
          if (!(d.p >= 0.0 && d.p <= 1.0))
            throw Error(ErrorKind::InvalidArgument, "Bernoulli p outside [0,1]");
        } else if constexpr (std::is_same_v<T, Categorical>) {
          if (d.probs.empty()) throw Error(ErrorKind::InvalidArgument, "empty categorical");
          double total = 0.0;
          for (double p : d.probs) {
            if (!(p >= 0.0)) throw Error(ErrorKind::InvalidArgument, "negative categorical probability");
            total += p;
          }
          if (std::abs(total - 1.0) > 1e-12)
            throw Error(ErrorKind::InvalidArgument, "categorical probabilities do not sum to 1");
        } else {
          if (!(d.stddev > 0.0) || !std::isfinite(d.mean))
            throw Error(ErrorKind::InvalidArgument, "Gaussian needs finite mean and stddev > 0");
        }
      },
      dist);
}

// ---------------------------------------------------------------------------
// Circuit

Circuit::Circuit(std::vector<Node> nodes, NodeId root) : nodes_(std::move(nodes)), root_(root) {
  const std::size_t n = nodes_.size();
  if (root_ >= n) throw Error(ErrorKind::InvalidArgument, "root id out of range");

  parents_.assign(n, {});
  for (NodeId id = 0; id < n; ++id) {
    const Node& nd = nodes_[id];
    if (nd.kind == NodeKind::Leaf) {
      if (!nd.children.empty())
        throw Error(ErrorKind::InvalidArgument, "leaf " + std::to_string(id) + " has children");
      if (nd.variable < 0)
        throw Error(ErrorKind::InvalidArgument, "leaf " + std::to_string(id) + " has no variable");
    } else if (nd.children.empty()) {
      throw Error(ErrorKind::InvalidArgument, "internal node " + std::to_string(id) + " has no children");
    }
    for (std::uint32_t s = 0; s < nd.children.size(); ++s) {
      const NodeId c = nd.children[s];
      if (c >= n)
        throw Error(ErrorKind::InvalidArgument,
                    "node " + std::to_string(id) + " references missing child " + std::to_string(c));
      parents_[c].push_back({id, s});
    }
  }
  if (!parents_[root_].empty()) throw Error(ErrorKind::InvalidArgument, "root has parents");

  // Kahn's algorithm over child->parent edges.
  std::vector<std::uint32_t> pending(n);
  std::queue<NodeId> ready;
  for (NodeId id = 0; id < n; ++id) {
    pending[id] = static_cast<std::uint32_t>(nodes_[id].children.size());
    if (pending[id] == 0) ready.push(id);
  }
  topo_.reserve(n);
  while (!ready.empty()) {
    const NodeId id = ready.front();
    ready.pop();
    topo_.push_back(id);
    for (const auto& pr : parents_[id])
      if (--pending[pr.parent] == 0) ready.push(pr.parent);
  }
  if (topo_.size() != n) throw Error(ErrorKind::CyclicGraph, "circuit graph contains a cycle");

  for (NodeId id : topo_) {
    Node& nd = nodes_[id];
    if (nd.kind == NodeKind::Leaf) {
      nd.scope = {nd.variable};
      continue;
    }
    std::vector<int> merged;
    for (NodeId c : nd.children) {
      const auto& cs = nodes_[c].scope;
      std::vector<int> out;
      out.reserve(merged.size() + cs.size());
      std::set_union(merged.begin(), merged.end(), cs.begin(), cs.end(), std::back_inserter(out));
      merged.swap(out);
    }
    nd.scope = std::move(merged);
  }

  edge_begin_.assign(n, kNoEdge);
  leaf_ordinal_.assign(n, static_cast<std::uint32_t>(-1));
  for (NodeId id = 0; id < n; ++id) {
    const Node& nd = nodes_[id];
    if (nd.kind == NodeKind::Sum) {
      edge_begin_[id] = static_cast<EdgeId>(edges_.size());
      for (std::uint32_t s = 0; s < nd.children.size(); ++s) edges_.push_back({id, s, nd.children[s]});
    } else if (nd.kind == NodeKind::Leaf) {
      leaf_ordinal_[id] = static_cast<std::uint32_t>(leaves_.size());
      leaves_.push_back(id);
    }
  }

  // Sum layers above each node, longest path from the root.
  std::vector<int> above(n, 0);
  for (auto it = topo_.rbegin(); it != topo_.rend(); ++it) {
    const NodeId id = *it;
    const int own = above[id] + (nodes_[id].kind == NodeKind::Sum ? 1 : 0);
    for (NodeId c : nodes_[id].children) above[c] = std::max(above[c], own);
  }
  layer_of_edge_.resize(edges_.size());
  num_layers_ = 0;
  for (EdgeId e = 0; e < edges_.size(); ++e) {
    layer_of_edge_[e] = above[edges_[e].sum];
    num_layers_ = std::max(num_layers_, layer_of_edge_[e] + 1);
  }

  is_tree_ = true;
  for (NodeId id = 0; id < n && is_tree_; ++id)
    if (id != root_ && parents_[id].size() != 1) is_tree_ = false;

  if (is_tree_) {
    tree_parent_.assign(n, kNoNode);
    tree_parent_edge_.assign(n, kNoEdge);
    depth_.assign(n, 0);
    tin_.assign(n, 0);
    tout_.assign(n, 0);
    for (NodeId id = 0; id < n; ++id) {
      if (id == root_) continue;
      const auto& pr = parents_[id].front();
      tree_parent_[id] = pr.parent;
      if (nodes_[pr.parent].kind == NodeKind::Sum) tree_parent_edge_[id] = edge_id(pr.parent, pr.slot);
    }
    std::uint32_t clock = 0;
    std::vector<std::pair<NodeId, std::size_t>> stack{{root_, 0}};
    tin_[root_] = clock++;
    while (!stack.empty()) {
      auto& [id, next] = stack.back();
      if (next < nodes_[id].children.size()) {
        const NodeId c = nodes_[id].children[next++];
        depth_[c] = depth_[id] + 1;
        tin_[c] = clock++;
        stack.push_back({c, 0});
      } else {
        tout_[id] = clock++;
        stack.pop_back();
      }
    }
  }
}

bool Circuit::is_ancestor(NodeId ancestor, NodeId node) const {
  return tin_[ancestor] <= tin_[node] && tout_[node] <= tout_[ancestor];
}

NodeId Circuit::lowest_common_ancestor(NodeId a, NodeId b) const {
  while (depth_[a] > depth_[b]) a = tree_parent_[a];
  while (depth_[b] > depth_[a]) b = tree_parent_[b];
  while (a != b) {
    a = tree_parent_[a];
    b = tree_parent_[b];
  }
  return a;
}

void check_params(const Circuit& circuit, const ParamSet& params, double tol) {
  if (params.weights.size() != circuit.num_edges())
    throw Error(ErrorKind::InvalidArgument, "weight vector size does not match sum edge count");
  if (params.leaves.size() != circuit.leaves().size())
    throw Error(ErrorKind::InvalidArgument, "leaf parameter count does not match leaf count");
  for (NodeId id = 0; id < circuit.num_nodes(); ++id) {
    const Node& nd = circuit.node(id);
    if (nd.kind != NodeKind::Sum) continue;
    double total = 0.0;
    const EdgeId b = circuit.edge_begin(id);
    for (std::size_t s = 0; s < nd.children.size(); ++s) {
      const double w = params.weights[b + s];
      if (!(w > 0.0 && w <= 1.0))
        throw Error(ErrorKind::InvalidArgument, "sum node " + std::to_string(id) + " has weight outside (0,1]");
      total += w;
    }
    if (std::abs(total - 1.0) > tol)
      throw Error(ErrorKind::InvalidArgument, "sum node " + std::to_string(id) + " weights do not sum to 1");
  }
  for (const auto& leaf : params.leaves) check_leaf(leaf);
}

// ---------------------------------------------------------------------------
// Builder

NodeId CircuitBuilder::add_leaf(int variable, LeafDistribution dist) {
  const auto id = static_cast<NodeId>(raw_.size());
  place(id, NodeKind::Leaf, {}, variable, std::move(dist));
  return id;
}

NodeId CircuitBuilder::add_sum(std::vector<NodeId> children, std::vector<double> weights) {
  const auto id = static_cast<NodeId>(raw_.size());
  place(id, NodeKind::Sum, std::move(children), -1, {});
  raw_[id].weights = std::move(weights);
  return id;
}

NodeId CircuitBuilder::add_product(std::vector<NodeId> children) {
  const auto id = static_cast<NodeId>(raw_.size());
  place(id, NodeKind::Product, std::move(children), -1, {});
  return id;
}

void CircuitBuilder::place(NodeId id, NodeKind kind, std::vector<NodeId> children, int variable,
                           LeafDistribution dist) {
  if (id >= raw_.size()) raw_.resize(id + 1);
  RawNode& r = raw_[id];
  if (r.placed) throw Error(ErrorKind::InvalidArgument, "node " + std::to_string(id) + " defined twice");
  r.placed = true;
  r.kind = kind;
  r.children = std::move(children);
  r.variable = variable;
  r.dist = std::move(dist);
}

void CircuitBuilder::set_weights(NodeId sum, std::vector<double> weights) {
  if (sum >= raw_.size()) raw_.resize(sum + 1);
  raw_[sum].weights = std::move(weights);
}

Model CircuitBuilder::build(NodeId root) const {
  std::vector<RawNode> raw = raw_;
  for (std::size_t id = 0; id < raw.size(); ++id)
    if (!raw[id].placed) throw Error(ErrorKind::InvalidArgument, "node id " + std::to_string(id) + " undefined");

  const std::size_t original = raw.size();
  for (std::size_t id = 0; id < original; ++id) {
    if (raw[id].kind == NodeKind::Sum) {
      if (raw[id].weights.empty())
        raw[id].weights.assign(raw[id].children.size(), 1.0 / static_cast<double>(raw[id].children.size()));
      if (raw[id].weights.size() != raw[id].children.size())
        throw Error(ErrorKind::InvalidArgument, "sum node " + std::to_string(id) + " weight count mismatch");
    } else if (!raw[id].weights.empty()) {
      throw Error(ErrorKind::InvalidArgument, "weights given for non-sum node " + std::to_string(id));
    }
    for (NodeId c : raw[id].children)
      if (c >= original) throw Error(ErrorKind::InvalidArgument, "dangling child id " + std::to_string(c));
  }

  // Splice pass-through nodes wherever a node has a child of its own kind.
  std::map<NodeId, NodeId> passthrough;
  for (std::size_t id = 0; id < original; ++id) {
    const NodeKind kind = raw[id].kind;
    if (kind == NodeKind::Leaf) continue;
    for (auto& c : raw[id].children) {
      if (raw[c].kind != kind) continue;
      auto it = passthrough.find(c);
      if (it == passthrough.end()) {
        RawNode pt;
        pt.placed = true;
        pt.kind = kind == NodeKind::Sum ? NodeKind::Product : NodeKind::Sum;
        pt.children = {c};
        if (pt.kind == NodeKind::Sum) pt.weights = {1.0};
        const auto pid = static_cast<NodeId>(raw.size());
        raw.push_back(std::move(pt));
        it = passthrough.emplace(c, pid).first;
      }
      c = it->second;
    }
  }

  std::vector<Node> nodes(raw.size());
  for (std::size_t id = 0; id < raw.size(); ++id) {
    nodes[id].kind = raw[id].kind;
    nodes[id].children = raw[id].children;
    nodes[id].variable = raw[id].kind == NodeKind::Leaf ? raw[id].variable : -1;
  }
  Model model{Circuit(std::move(nodes), root), {}};
  const Circuit& c = model.circuit;
  model.params.weights.resize(c.num_edges());
  for (NodeId id = 0; id < c.num_nodes(); ++id)
    if (c.node(id).kind == NodeKind::Sum)
      std::copy(raw[id].weights.begin(), raw[id].weights.end(), model.params.weights.begin() + c.edge_begin(id));
  for (NodeId leaf : c.leaves()) model.params.leaves.push_back(raw[leaf].dist);
  check_params(c, model.params);
  return model;
}

// ---------------------------------------------------------------------------
// Validation

std::size_t ValidationReport::count(ViolationKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(violations.begin(), violations.end(), [kind](const Violation& v) { return v.kind == kind; }));
}

ValidationReport validate(const Circuit& circuit) {
  ValidationReport report;
  for (NodeId id = 0; id < circuit.num_nodes(); ++id) {
    const Node& nd = circuit.node(id);
    if (id != circuit.root() && circuit.parents(id).empty())
      report.violations.push_back({ViolationKind::MultipleRoots, id, "node has no parents"});
    if (nd.kind == NodeKind::Sum) {
      const auto& first = circuit.node(nd.children.front()).scope;
      for (NodeId c : nd.children) {
        if (circuit.node(c).scope != first) {
          report.violations.push_back({ViolationKind::NonSmooth, id, "child " + std::to_string(c) + " scope differs"});
          break;
        }
      }
    } else if (nd.kind == NodeKind::Product) {
      std::size_t total = 0;
      for (NodeId c : nd.children) total += circuit.node(c).scope.size();
      if (total != nd.scope.size())
        report.violations.push_back({ViolationKind::NonDecomposable, id, "children scopes overlap"});
    }
    if (nd.kind != NodeKind::Leaf) {
      for (NodeId c : nd.children) {
        if (circuit.node(c).kind == nd.kind) {
          report.violations.push_back({ViolationKind::NonAlternating, id, "child " + std::to_string(c) + " has same kind"});
          break;
        }
      }
    }
  }
  return report;
}

PairClass classify_pair(const Circuit& circuit, EdgeId e1, EdgeId e2) {
  if (!circuit.is_tree()) throw Error(ErrorKind::NotATree, "pair classification needs a tree-structured circuit");
  if (e1 == e2) throw Error(ErrorKind::InvalidArgument, "pair classification needs distinct edges");
  const SumEdge& a = circuit.edge(e1);
  const SumEdge& b = circuit.edge(e2);

  PairClass out;
  // Edge (n, c) is on the root path of (n', c') iff c is an ancestor of n'.
  if (circuit.is_ancestor(a.child, b.sum)) {
    out.kind = PairKind::PathPair;
    out.deeper = e2;
    out.shallower = e1;
    return out;
  }
  if (circuit.is_ancestor(b.child, a.sum)) {
    out.kind = PairKind::PathPair;
    out.deeper = e1;
    out.shallower = e2;
    return out;
  }
  const NodeId q = circuit.lowest_common_ancestor(a.sum, b.sum);
  if (circuit.node(q).kind == NodeKind::Sum) {
    out.kind = PairKind::SumPair;
    out.ancestor = q;
    return out;
  }
  out.kind = PairKind::ProductPair;
  out.ancestor = q;
  if (q != circuit.root()) {
    const EdgeId above = circuit.tree_parent_edge(q);
    if (above != kNoEdge) out.weight_above = above;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text format

namespace {

void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

[[noreturn]] void malformed(std::size_t line, const std::string& what) {
  throw Error(ErrorKind::MalformedFile, "line " + std::to_string(line) + ": " + what);
}

class LineTokens {
 public:
  LineTokens(const std::string& line, std::size_t number) : number_(number) {
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) tokens_.push_back(tok);
  }
  bool done() const { return pos_ >= tokens_.size(); }
  std::size_t remaining() const { return tokens_.size() - pos_; }
  const std::string& word() {
    if (done()) malformed(number_, "unexpected end of line");
    return tokens_[pos_++];
  }
  template <typename T>
  T number() {
    const std::string& tok = word();
    T value{};
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) malformed(number_, "bad number '" + tok + "'");
    return value;
  }
  void expect_end() {
    if (!done()) malformed(number_, "trailing tokens");
  }

 private:
  std::vector<std::string> tokens_;
  std::size_t pos_ = 0;
  std::size_t number_;
};

}  // namespace

std::string serialize(const Circuit& circuit, const ParamSet& params) {
  std::string out = "pc v1 " + std::to_string(circuit.num_nodes()) + " " + std::to_string(circuit.root()) + "\n";
  for (NodeId id = 0; id < circuit.num_nodes(); ++id) {
    const Node& nd = circuit.node(id);
    out += std::to_string(id);
    if (nd.kind == NodeKind::Leaf) {
      out += " L " + std::to_string(nd.variable) + " ";
      std::visit(
          [&out](const auto& d) {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Bernoulli>) {
              out += "bern ";
              append_double(out, d.p);
            } else if constexpr (std::is_same_v<T, Categorical>) {
              out += "cat " + std::to_string(d.probs.size());
              for (double p : d.probs) {
                out += ' ';
                append_double(out, p);
              }
            } else {
              out += "gauss ";
              append_double(out, d.mean);
              out += ' ';
              append_double(out, d.stddev);
            }
          },
          params.leaves[circuit.leaf_ordinal(id)]);
    } else {
      out += nd.kind == NodeKind::Sum ? " S" : " P";
      for (NodeId c : nd.children) out += " " + std::to_string(c);
    }
    out += '\n';
  }
  for (NodeId id = 0; id < circuit.num_nodes(); ++id) {
    const Node& nd = circuit.node(id);
    if (nd.kind != NodeKind::Sum) continue;
    out += "w " + std::to_string(id);
    for (std::size_t s = 0; s < nd.children.size(); ++s) {
      out += ' ';
      append_double(out, params.weights[circuit.edge_begin(id) + s]);
    }
    out += '\n';
  }
  return out;
}

Model deserialize(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  bool have_header = false;
  std::size_t num_nodes = 0;
  NodeId root = 0;
  CircuitBuilder builder;
  std::vector<bool> seen;
  std::vector<bool> weighted;

  while (std::getline(in, line)) {
    ++number;
    LineTokens tok(line, number);
    if (tok.done()) continue;
    if (!have_header) {
      if (tok.word() != "pc") malformed(number, "missing 'pc' header");
      if (tok.word() != "v1") malformed(number, "unsupported version");
      num_nodes = tok.number<std::size_t>();
      root = tok.number<NodeId>();
      tok.expect_end();
      if (num_nodes == 0) malformed(number, "circuit has no nodes");
      if (root >= num_nodes) malformed(number, "root id out of range");
      seen.assign(num_nodes, false);
      weighted.assign(num_nodes, false);
      have_header = true;
      continue;
    }
    const std::string& first = tok.word();
    if (first == "w") {
      const auto id = tok.number<NodeId>();
      if (id >= num_nodes || !seen[id]) malformed(number, "weights for unknown node");
      std::vector<double> w;
      while (!tok.done()) w.push_back(tok.number<double>());
      weighted[id] = true;
      builder.set_weights(id, std::move(w));
      continue;
    }
    NodeId id{};
    {
      auto res = std::from_chars(first.data(), first.data() + first.size(), id);
      if (res.ec != std::errc() || res.ptr != first.data() + first.size()) malformed(number, "bad node id");
    }
    if (id >= num_nodes) malformed(number, "node id out of range");
    if (seen[id]) malformed(number, "duplicate node id");
    seen[id] = true;
    const std::string& type = tok.word();
    try {
      if (type == "S" || type == "P") {
        std::vector<NodeId> children;
        while (!tok.done()) children.push_back(tok.number<NodeId>());
        if (children.empty()) malformed(number, "internal node without children");
        for (NodeId c : children)
          if (c >= num_nodes) malformed(number, "child id out of range");
        builder.place(id, type == "S" ? NodeKind::Sum : NodeKind::Product, std::move(children), -1, {});
      } else if (type == "L") {
        const int var = tok.number<int>();
        if (var < 0) malformed(number, "negative variable index");
        const std::string& family = tok.word();
        LeafDistribution dist;
        if (family == "bern") {
          dist = Bernoulli{tok.number<double>()};
        } else if (family == "cat") {
          const auto k = tok.number<std::size_t>();
          Categorical cat;
          for (std::size_t i = 0; i < k; ++i) cat.probs.push_back(tok.number<double>());
          dist = std::move(cat);
        } else if (family == "gauss") {
          const double mu = tok.number<double>();
          const double sigma = tok.number<double>();
          dist = Gaussian{mu, sigma};
        } else {
          malformed(number, "unknown leaf family '" + family + "'");
        }
        tok.expect_end();
        check_leaf(dist);
        builder.place(id, NodeKind::Leaf, {}, var, std::move(dist));
      } else {
        malformed(number, "unknown node type '" + type + "'");
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::MalformedFile) throw;
      malformed(number, e.what());
    }
  }
  if (!have_header) throw Error(ErrorKind::MalformedFile, "line 0: empty file");
  for (std::size_t id = 0; id < num_nodes; ++id)
    if (!seen[id]) malformed(number, "node " + std::to_string(id) + " missing");
  try {
    Model model = builder.build(root);
    for (NodeId id = 0; id < num_nodes; ++id)
      if (model.circuit.node(id).kind == NodeKind::Sum && !weighted[id])
        malformed(number, "sum node " + std::to_string(id) + " has no weights line");
    return model;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::CyclicGraph || e.kind() == ErrorKind::MalformedFile) throw;
    malformed(number, e.what());
  }
}

void save_model(const std::string& path, const Circuit& circuit, const ParamSet& params) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path);
  out << serialize(circuit, params);
}

Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace pcsharp
