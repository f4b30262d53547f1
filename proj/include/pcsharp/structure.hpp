#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "pcsharp/circuit.hpp"
#include "pcsharp/matrix.hpp"

namespace pcsharp {

enum class LeafFamily { Bernoulli, Gaussian };

struct RatConfig {
  int num_vars = 2;
  int num_input_distributions = 10;
  int num_sums = 10;
  int num_repetitions = 10;
  int depth = 1;
  LeafFamily leaf_family = LeafFamily::Gaussian;
  std::uint64_t seed = 0;
};

/// Random binary-partition circuit, unrolled top-down so every node has a
/// single parent (the result is always tree-structured). Each repetition
/// recursively halves a shuffled variable set `depth` times; a region above
/// the leaf level contributes `num_sums` products, each joining one fresh
/// sum per half; a leaf-level region contributes `num_input_distributions`
/// fresh leaves (or factorized leaf products for several variables). The root
/// sums over every repetition's top-level products. Weights start uniform;
/// Gaussian leaves draw mean ~ U(-1,1) with stddev 0.5, Bernoulli leaves
/// p ~ U(0.3,0.7). Throws DepthTooLarge when depth > floor(log2(num_vars)),
/// InvalidArgument on nonpositive counts.
Model build_rat(const RatConfig& config);

struct SpanningTree {
  int num_vars = 0;
  std::vector<std::pair<int, int>> edges;  // (i, j) with i < j, sorted
};

/// Pairwise mutual information (nats) of binary columns with `pseudo_count`
/// added to every joint cell. Symmetric, zero diagonal.
Matrix mutual_information(const Matrix& data, double pseudo_count = 0.1);

/// Maximum spanning tree under mutual_information(). Ties are broken toward
/// the lexicographically smaller (i, j). Throws InvalidArgument for fewer
/// than two variables or no rows.
SpanningTree chow_liu_tree(const Matrix& data, double pseudo_count = 0.1);

struct HcltConfig {
  int num_latents = 100;
  std::uint64_t seed = 0;
  double pseudo_count = 0.1;
};

/// Latent tree compiled to a circuit, rooted at variable 0. For variable i
/// with tree children C(i) and latent state z:
///   N_i^z = Bernoulli leaf L_i^z times M_j^z for j in C(i)
///   M_j^z = sum over z' of N_j^{z'}
/// and the root sums over N_0^z. Weights are random; leaves are random, or
/// when `data` is given, centred on the pseudo-count smoothed marginals.
Model build_hclt(const SpanningTree& tree, const HcltConfig& config, const Matrix* data = nullptr);

}  // namespace pcsharp
