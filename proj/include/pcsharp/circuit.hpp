#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace pcsharp {

using NodeId = std::uint32_t;
using EdgeId = std::uint32_t;

inline constexpr NodeId kNoNode = static_cast<NodeId>(-1);
inline constexpr EdgeId kNoEdge = static_cast<EdgeId>(-1);

enum class NodeKind : std::uint8_t { Sum, Product, Leaf };

struct Bernoulli {
  double p = 0.5;
  bool operator==(const Bernoulli&) const = default;
};

struct Categorical {
  std::vector<double> probs;
  bool operator==(const Categorical&) const = default;
};

struct Gaussian {
  double mean = 0.0;
  double stddev = 1.0;
  bool operator==(const Gaussian&) const = default;
};

using LeafDistribution = std::variant<Bernoulli, Categorical, Gaussian>;

/// Log density (or log mass) of a univariate leaf at value x.
double leaf_log_density(const LeafDistribution& dist, double x);

/// Throws InvalidArgument unless the distribution parameters are legal:
/// Bernoulli p in [0,1] (the endpoints act as indicators), Categorical
/// probabilities non-negative and summing to 1 within 1e-12, Gaussian stddev > 0.
void check_leaf(const LeafDistribution& dist);

struct Node {
  NodeKind kind = NodeKind::Leaf;
  std::vector<NodeId> children;
  int variable = -1;       // leaves only
  std::vector<int> scope;  // sorted, unique
};

/// A sum edge: child slot `slot` of sum node `sum`.
struct SumEdge {
  NodeId sum = kNoNode;
  std::uint32_t slot = 0;
  NodeId child = kNoNode;
};

struct ParentRef {
  NodeId parent = kNoNode;
  std::uint32_t slot = 0;
};

/// Immutable circuit structure. Parameters live in ParamSet.
///
/// Sum edges are numbered contiguously per sum node in node-id order, so the
/// weights of sum node n occupy [edge_begin(n), edge_begin(n) + arity).
class Circuit {
 public:
  Circuit() = default;
  /// Throws CyclicGraph when no topological order exists and
  /// InvalidArgument for dangling child ids, childless internal nodes,
  /// leaves without a variable, or a root that has parents.
  Circuit(std::vector<Node> nodes, NodeId root);

  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  std::size_t num_vars() const noexcept { return nodes_.empty() ? 0 : nodes_[root_].scope.size(); }
  NodeId root() const noexcept { return root_; }
  const Node& node(NodeId id) const { return nodes_[id]; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }

  /// Children before parents.
  const std::vector<NodeId>& topo_order() const noexcept { return topo_; }
  const std::vector<ParentRef>& parents(NodeId id) const { return parents_[id]; }

  const std::vector<SumEdge>& edges() const noexcept { return edges_; }
  const SumEdge& edge(EdgeId e) const { return edges_[e]; }
  EdgeId edge_begin(NodeId sum) const { return edge_begin_[sum]; }
  EdgeId edge_id(NodeId sum, std::uint32_t slot) const { return edge_begin_[sum] + slot; }

  /// Number of sum nodes strictly above the edge's owning sum node on the
  /// longest root path.
  int layer_of_edge(EdgeId e) const { return layer_of_edge_[e]; }
  int num_layers() const noexcept { return num_layers_; }

  const std::vector<NodeId>& leaves() const noexcept { return leaves_; }
  /// Index of a leaf node into ParamSet::leaves.
  std::uint32_t leaf_ordinal(NodeId leaf) const { return leaf_ordinal_[leaf]; }

  bool is_tree() const noexcept { return is_tree_; }

  // Tree-only navigation (valid when is_tree()).
  NodeId tree_parent(NodeId id) const { return tree_parent_[id]; }
  /// Sum edge entering `id` from its parent, or kNoEdge when the parent is a
  /// product node or `id` is the root.
  EdgeId tree_parent_edge(NodeId id) const { return tree_parent_edge_[id]; }
  int depth(NodeId id) const { return depth_[id]; }
  /// True when `ancestor` lies on the root path of `node` (inclusive).
  bool is_ancestor(NodeId ancestor, NodeId node) const;
  NodeId lowest_common_ancestor(NodeId a, NodeId b) const;

 private:
  std::vector<Node> nodes_;
  NodeId root_ = kNoNode;
  std::vector<NodeId> topo_;
  std::vector<std::vector<ParentRef>> parents_;
  std::vector<SumEdge> edges_;
  std::vector<EdgeId> edge_begin_;
  std::vector<int> layer_of_edge_;
  int num_layers_ = 0;
  std::vector<NodeId> leaves_;
  std::vector<std::uint32_t> leaf_ordinal_;
  bool is_tree_ = false;
  std::vector<NodeId> tree_parent_;
  std::vector<EdgeId> tree_parent_edge_;
  std::vector<int> depth_;
  std::vector<std::uint32_t> tin_, tout_;
};

/// Sum weights indexed by EdgeId plus leaf distributions indexed by leaf ordinal.
struct ParamSet {
  std::vector<double> weights;
  std::vector<LeafDistribution> leaves;

  bool operator==(const ParamSet&) const = default;
};

/// Throws InvalidArgument if shapes disagree with the circuit, any sum weight
/// lies outside (0,1], a sum node's weights do not sum to 1 within `tol`, or a
/// leaf distribution is illegal.
void check_params(const Circuit& circuit, const ParamSet& params, double tol = 1e-10);

struct Model {
  Circuit circuit;
  ParamSet params;
};

/// Accumulates nodes and parameters, then assembles a Model. Sum nodes with
/// sum children and product nodes with product children get a unary
/// pass-through node of the other kind spliced in (appended after all
/// explicitly added nodes, so existing ids stay stable).
class CircuitBuilder {
 public:
  NodeId add_leaf(int variable, LeafDistribution dist);
  /// Empty `weights` means uniform.
  NodeId add_sum(std::vector<NodeId> children, std::vector<double> weights = {});
  NodeId add_product(std::vector<NodeId> children);

  /// Placement at an explicit id; used by the file reader. Ids must be dense
  /// once build() is called.
  void place(NodeId id, NodeKind kind, std::vector<NodeId> children, int variable,
             LeafDistribution dist);
  void set_weights(NodeId sum, std::vector<double> weights);

  std::size_t size() const noexcept { return raw_.size(); }

  Model build(NodeId root) const;

 private:
  struct RawNode {
    bool placed = false;
    NodeKind kind = NodeKind::Leaf;
    std::vector<NodeId> children;
    std::vector<double> weights;
    int variable = -1;
    LeafDistribution dist;
  };
  std::vector<RawNode> raw_;
};

enum class ViolationKind { NonSmooth, NonDecomposable, MultipleRoots, NonAlternating };

struct Violation {
  ViolationKind kind;
  NodeId node;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const noexcept { return violations.empty(); }
  std::size_t count(ViolationKind kind) const;
};

ValidationReport validate(const Circuit& circuit);

enum class PairKind { SumPair, ProductPair, PathPair };

struct PairClass {
  PairKind kind = PairKind::SumPair;
  /// ProductPair: the deepest common (product) ancestor.
  NodeId ancestor = kNoNode;
  /// ProductPair: sum edge entering `ancestor`; absent when it is the root.
  std::optional<EdgeId> weight_above;
  /// PathPair: the edge further from the root and the one on its root path.
  EdgeId deeper = kNoEdge;
  EdgeId shallower = kNoEdge;
};

/// Relationship of two distinct sum edges in a tree-structured circuit.
/// Throws NotATree for DAGs and InvalidArgument when e1 == e2.
PairClass classify_pair(const Circuit& circuit, EdgeId e1, EdgeId e2);

/// Text format: header `pc v1 <num_nodes> <root>`, one line per node, then
/// one `w <sum_id> <weights...>` line per sum node. Doubles are written in
/// shortest round-trip form.
std::string serialize(const Circuit& circuit, const ParamSet& params);
/// Throws MalformedFile (with line number) or CyclicGraph.
Model deserialize(const std::string& text);

void save_model(const std::string& path, const Circuit& circuit, const ParamSet& params);
Model load_model(const std::string& path);

}  // namespace pcsharp
