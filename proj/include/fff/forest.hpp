#pragma once

// Tree-routed sparse feed-forward layer.
//
// A layer holds P perfect binary trees of depth D. Every node carries a
// routing vector (w_in, b_in) and an output vector w_out. An input visits one
// root-to-leaf path per tree; every visited node contributes its activation
// times w_out to the output.
//
// Nodes are stored in level order: node (level l, slot s) has flat index
// n = 2^l - 1 + s, its children are 2n+1 (logit < 0) and 2n+2 (logit >= 0).
// Parameter rows are indexed by p·N + n with N = 2^(D+1) - 1.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fff/kernels.hpp"
#include "fff/numeric.hpp"

namespace fff {

enum class Variant : std::uint32_t {
  PreGelu = 0,   ///< GELU on each node's logit before the output projection
  PostGelu = 1,  ///< one GELU on the summed output (bias included)
};

enum class InitScheme {
  ScaledGaussian,  ///< w_in ~ N(0, 1/d_in), w_out ~ N(0, 1/(P(D+1))), zero biases
  ScaledUniform,   ///< same variances, uniform distribution
};

constexpr std::size_t nodes_per_tree(std::size_t depth) { return (std::size_t{2} << depth) - 1; }
constexpr std::size_t leaves_per_tree(std::size_t depth) { return std::size_t{1} << depth; }
constexpr std::size_t node_index(std::size_t level, std::size_t slot) {
  return (std::size_t{1} << level) - 1 + slot;
}
/// Level of a flat node index.
std::size_t node_level(std::size_t node);

struct ForestParams {
  std::size_t trees = 0;
  std::size_t depth = 0;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  Variant variant = Variant::PreGelu;

  Matrix w_in;   ///< (P·N) × d_in
  Matrix b_in;   ///< P × N
  Matrix w_out;  ///< (P·N) × d_out
  Matrix b_out;  ///< 1 × d_out

  std::size_t nodes() const noexcept { return nodes_per_tree(depth); }
  std::size_t leaves() const noexcept { return leaves_per_tree(depth); }
  /// Zero-initialized parameters of the given shape.
  static ForestParams zeros(std::size_t trees, std::size_t depth, std::size_t d_in,
                            std::size_t d_out, Variant variant);

  std::vector<Matrix*> tensors() { return {&w_in, &b_in, &w_out, &b_out}; }
  std::vector<const Matrix*> tensors() const { return {&w_in, &b_in, &w_out, &b_out}; }
  kernels::ForestView<double> view() const;
  void validate() const;

  friend bool operator==(const ForestParams&, const ForestParams&) = default;
};

/// One root-to-leaf path per (sample, tree), stored as the visited flat node
/// index at each level.
class RouteMask {
 public:
  RouteMask() = default;
  RouteMask(std::size_t batch, std::size_t trees, std::size_t depth);

  std::size_t batch() const noexcept { return batch_; }
  std::size_t trees() const noexcept { return trees_; }
  std::size_t depth() const noexcept { return depth_; }

  std::uint32_t node(std::size_t b, std::size_t p, std::size_t level) const {
    return path_[(b * trees_ + p) * (depth_ + 1) + level];
  }
  std::uint32_t& node(std::size_t b, std::size_t p, std::size_t level) {
    return path_[(b * trees_ + p) * (depth_ + 1) + level];
  }
  /// Leaf-path id in [0, 2^D).
  std::size_t leaf(std::size_t b, std::size_t p) const {
    return node(b, p, depth_) - (leaves_per_tree(depth_) - 1);
  }
  bool active(std::size_t b, std::size_t p, std::size_t n) const;
  /// B × (P·N) binary matrix.
  Matrix dense() const;
  std::span<std::uint32_t> raw() noexcept { return path_; }
  std::span<const std::uint32_t> raw() const noexcept { return path_; }

  friend bool operator==(const RouteMask&, const RouteMask&) = default;

 private:
  std::size_t batch_ = 0;
  std::size_t trees_ = 0;
  std::size_t depth_ = 0;
  std::vector<std::uint32_t> path_;
};

/// True when every (sample, tree) path starts at the root and each step goes
/// to a child of the previous node.
bool is_valid_route(const RouteMask& mask);

enum class CacheMode { Masked, Sequential };

struct ForwardCache {
  CacheMode mode = CacheMode::Masked;
  std::size_t trees = 0, depth = 0, d_in = 0, d_out = 0;
  Variant variant = Variant::PreGelu;
  Matrix x;
  /// Masked: B × (P·N) all logits. Sequential: B × (P·(D+1)) visited logits.
  Matrix logits;
  RouteMask mask;
  /// Post-GELU variant: B × d_out pre-activation. Empty otherwise.
  Matrix pre_activation;
};

struct LayerGradients {
  Matrix w_in, b_in, w_out, b_out;
  Matrix x;

  std::vector<const Matrix*> tensors() const { return {&w_in, &b_in, &w_out, &b_out}; }
};

struct ForestOutput {
  Matrix y;
  ForwardCache cache;
};

ForestParams init_forest(Rng& rng, std::size_t trees, std::size_t depth, std::size_t d_in,
                         std::size_t d_out, Variant variant,
                         InitScheme scheme = InitScheme::ScaledGaussian);

/// Z = X·W_inᵀ + b_in for every node, B × (P·N).
Matrix all_logits(const ForestParams& params, const Matrix& x);

/// Hard routing of a full logit tensor (B × (P·N)).
RouteMask compute_mask(const Matrix& logits, std::size_t trees, std::size_t depth);

/// Evaluates only the visited nodes.
ForestOutput forward_sequential(const ForestParams& params, const Matrix& x);
/// Evaluates every node, then masks.
ForestOutput forward_masked(const ForestParams& params, const Matrix& x);

/// Explicit backward pass. The routing mask is treated as a constant.
/// Works for caches from either forward.
LayerGradients backward(const ForestParams& params, const ForwardCache& cache,
                        const Matrix& upstream);

std::size_t active_node_count(const ForestParams& params);
std::size_t total_node_count(const ForestParams& params);
/// Parameters touched by one input (visited node vectors plus b_out).
std::size_t active_param_count(const ForestParams& params);
std::size_t total_param_count(const ForestParams& params);

}  // namespace fff
