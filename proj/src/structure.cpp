#include "pcsharp/structure.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>

#include "pcsharp/error.hpp"
#include "pcsharp/parallel.hpp"

namespace pcsharp {

namespace {

class RatBuilder {
 public:
  RatBuilder(const RatConfig& config) : cfg_(config), rng_(config.seed) {}

  LeafDistribution make_leaf() {
    if (cfg_.leaf_family == LeafFamily::Gaussian) {
      std::uniform_real_distribution<double> mean(-1.0, 1.0);
      return Gaussian{mean(rng_), 0.5};
    }
    std::uniform_real_distribution<double> p(0.3, 0.7);
    return Bernoulli{p(rng_)};
  }

  std::vector<int> shuffled_vars() {
    std::vector<int> vars(cfg_.num_vars);
    std::iota(vars.begin(), vars.end(), 0);
    std::shuffle(vars.begin(), vars.end(), rng_);
    return vars;
  }

  std::vector<NodeId> region(const std::vector<int>& vars, int level) {
    std::vector<NodeId> out;
    if (level == cfg_.depth) {
      for (int k = 0; k < cfg_.num_input_distributions; ++k) {
        if (vars.size() == 1) {
          out.push_back(b_.add_leaf(vars[0], make_leaf()));
        } else {
          std::vector<NodeId> factors;
          for (int v : vars) factors.push_back(b_.add_leaf(v, make_leaf()));
          out.push_back(b_.add_product(std::move(factors)));
        }
      }
      return out;
    }
    const std::size_t half = (vars.size() + 1) / 2;
    const std::vector<int> left(vars.begin(), vars.begin() + half);
    const std::vector<int> right(vars.begin() + half, vars.end());
    for (int k = 0; k < cfg_.num_sums; ++k) {
      const NodeId a = b_.add_sum(region(left, level + 1));
      const NodeId c = b_.add_sum(region(right, level + 1));
      out.push_back(b_.add_product({a, c}));
    }
    return out;
  }

  Model build() {
    std::vector<NodeId> top;
    for (int r = 0; r < cfg_.num_repetitions; ++r) {
      // A fresh shuffle per repetition gives a fresh random partition.
      auto part = region(shuffled_vars(), 0);
      top.insert(top.end(), part.begin(), part.end());
    }
    return b_.build(b_.add_sum(std::move(top)));
  }

 private:
  RatConfig cfg_;
  std::mt19937_64 rng_;
  CircuitBuilder b_;
};

}  // namespace

Model build_rat(const RatConfig& config) {
  if (config.num_vars < 1 || config.num_input_distributions < 1 || config.num_sums < 1 ||
      config.num_repetitions < 1 || config.depth < 0)
    throw Error(ErrorKind::InvalidArgument, "RAT counts must be >= 1 and depth >= 0");
  const int max_depth = std::bit_width(static_cast<unsigned>(config.num_vars)) - 1;
  if (config.depth > max_depth)
    throw Error(ErrorKind::DepthTooLarge, "depth " + std::to_string(config.depth) + " exceeds floor(log2(" +
                                              std::to_string(config.num_vars) + ")) = " + std::to_string(max_depth));
  return RatBuilder(config).build();
}

Matrix mutual_information(const Matrix& data, double pseudo_count) {
  const std::size_t n = data.rows(), d = data.cols();
  if (!(pseudo_count >= 0.0)) throw Error(ErrorKind::InvalidArgument, "pseudo count must be >= 0");
  const std::size_t words = (n + 63) / 64;
  std::vector<std::uint64_t> bits(d * words, 0);
  std::vector<double> ones(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const double x = data(r, c);
      if (x != 0.0 && x != 1.0) throw Error(ErrorKind::InvalidArgument, "mutual information needs binary data");
      if (x == 1.0) {
        bits[c * words + r / 64] |= std::uint64_t{1} << (r % 64);
        ones[c] += 1.0;
      }
    }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) pairs.emplace_back(i, j);
  Matrix mi(d, d, 0.0);
  const double total = static_cast<double>(n) + 4.0 * pseudo_count;
  parallel_chunks(pairs.size(), [&](int, std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      const auto [i, j] = pairs[p];
      std::size_t both = 0;
      for (std::size_t w = 0; w < words; ++w) both += std::popcount(bits[i * words + w] & bits[j * words + w]);
      const double n11 = static_cast<double>(both);
      const double n10 = ones[i] - n11, n01 = ones[j] - n11;
      const double n00 = static_cast<double>(n) - n11 - n10 - n01;
      const double cell[2][2] = {{n00 + pseudo_count, n01 + pseudo_count}, {n10 + pseudo_count, n11 + pseudo_count}};
      const double pi[2] = {(cell[0][0] + cell[0][1]) / total, (cell[1][0] + cell[1][1]) / total};
      const double pj[2] = {(cell[0][0] + cell[1][0]) / total, (cell[0][1] + cell[1][1]) / total};
      double v = 0.0;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const double pab = cell[a][b] / total;
          if (pab > 0.0) v += pab * std::log(pab / (pi[a] * pj[b]));
        }
      mi(i, j) = mi(j, i) = std::max(v, 0.0);
    }
  });
  return mi;
}

SpanningTree chow_liu_tree(const Matrix& data, double pseudo_count) {
  if (data.cols() < 2 || data.rows() < 1)
    throw Error(ErrorKind::InvalidArgument, "Chow-Liu needs at least two variables and one row");
  const Matrix mi = mutual_information(data, pseudo_count);
  const int d = static_cast<int>(data.cols());
  std::vector<std::tuple<double, int, int>> cand;
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) cand.emplace_back(mi(i, j), i, j);
  std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    return std::tie(std::get<1>(a), std::get<2>(a)) < std::tie(std::get<1>(b), std::get<2>(b));
  });
  std::vector<int> uf(d);
  std::iota(uf.begin(), uf.end(), 0);
  auto find = [&](int x) {
    while (uf[x] != x) x = uf[x] = uf[uf[x]];
    return x;
  };
  SpanningTree tree{d, {}};
  for (const auto& [w, i, j] : cand) {
    const int a = find(i), b = find(j);
    if (a == b) continue;
    uf[a] = b;
    tree.edges.emplace_back(i, j);
    if (static_cast<int>(tree.edges.size()) == d - 1) break;
  }
  std::sort(tree.edges.begin(), tree.edges.end());
  return tree;
}

Model build_hclt(const SpanningTree& tree, const HcltConfig& config, const Matrix* data) {
  const int d = tree.num_vars;
  const int h = config.num_latents;
  if (d < 1) throw Error(ErrorKind::InvalidArgument, "HCLT needs at least one variable");
  if (h < 1) throw Error(ErrorKind::InvalidArgument, "HCLT needs at least one latent state");
  if (static_cast<int>(tree.edges.size()) != d - 1)
    throw Error(ErrorKind::InvalidArgument, "spanning tree must have num_vars - 1 edges");
  if (data && static_cast<int>(data->cols()) != d)
    throw Error(ErrorKind::ShapeMismatch, "data columns do not match the tree");

  std::vector<std::vector<int>> adj(d);
  for (auto [i, j] : tree.edges) {
    if (i < 0 || j < 0 || i >= d || j >= d || i == j) throw Error(ErrorKind::InvalidArgument, "bad tree edge");
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  // BFS from variable 0; reverse BFS order visits children first.
  std::vector<int> order{0}, parent(d, -2);
  parent[0] = -1;
  for (std::size_t k = 0; k < order.size(); ++k)
    for (int nb : adj[order[k]])
      if (parent[nb] == -2) {
        parent[nb] = order[k];
        order.push_back(nb);
      }
  if (static_cast<int>(order.size()) != d) throw Error(ErrorKind::InvalidArgument, "edges do not span the variables");
  std::vector<std::vector<int>> children(d);
  for (int v : order)
    if (parent[v] >= 0) children[parent[v]].push_back(v);

  std::vector<double> marginal(d, 0.5);
  if (data) {
    for (int v = 0; v < d; ++v) {
      double ones = 0.0;
      for (std::size_t r = 0; r < data->rows(); ++r) ones += (*data)(r, v);
      marginal[v] = (ones + config.pseudo_count) / (static_cast<double>(data->rows()) + 2.0 * config.pseudo_count);
    }
  }

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto random_weights = [&](int k) {
    std::vector<double> w(k);
    double s = 0.0;
    for (auto& x : w) s += (x = 0.1 + unit(rng));
    for (auto& x : w) x /= s;
    return w;
  };

  CircuitBuilder b;
  std::vector<std::vector<NodeId>> node_of(d);  // N_i^z
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int v = *it;
    // M_j^z for each child j
    std::vector<std::vector<NodeId>> messages;
    for (int c : children[v]) {
      std::vector<NodeId> m(h);
      for (int z = 0; z < h; ++z) m[z] = b.add_sum(node_of[c], random_weights(h));
      messages.push_back(std::move(m));
    }
    node_of[v].resize(h);
    for (int z = 0; z < h; ++z) {
      double p = data ? 0.5 * marginal[v] + 0.5 * (0.05 + 0.9 * unit(rng)) : 0.05 + 0.9 * unit(rng);
      const NodeId leaf = b.add_leaf(v, Bernoulli{p});
      if (messages.empty()) {
        node_of[v][z] = leaf;
      } else {
        std::vector<NodeId> factors{leaf};
        for (const auto& m : messages) factors.push_back(m[z]);
        node_of[v][z] = b.add_product(std::move(factors));
      }
    }
  }
  return b.build(b.add_sum(node_of[0], random_weights(h)));
}

}  // namespace pcsharp
