#pragma once

// Routing statistics: visit ledgers, branch probabilities, mean-logit drift
// probes and leaf-distribution priors.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "fff/forest.hpp"

namespace fff {

/// Visit counts per node and per leaf path for every tree of one layer.
class UtilizationLedger {
 public:
  UtilizationLedger() = default;
  UtilizationLedger(std::size_t trees, std::size_t depth);

  std::size_t trees() const noexcept { return trees_; }
  std::size_t depth() const noexcept { return depth_; }
  std::uint64_t total() const noexcept { return total_; }

  std::uint64_t node_count(std::size_t p, std::size_t n) const {
    return node_counts_[p * nodes_per_tree(depth_) + n];
  }
  std::uint64_t leaf_count(std::size_t p, std::size_t leaf) const {
    return leaf_counts_[p * leaves_per_tree(depth_) + leaf];
  }
  std::span<const std::uint64_t> leaf_counts(std::size_t p) const {
    return {leaf_counts_.data() + p * leaves_per_tree(depth_), leaves_per_tree(depth_)};
  }

  void record_batch(const RouteMask& mask);
  /// Elementwise sum.
  void merge(const UtilizationLedger& other);

  /// Level sums and parent = sum of children, for every tree.
  bool conserved() const;

  friend bool operator==(const UtilizationLedger&, const UtilizationLedger&) = default;

 private:
  std::size_t trees_ = 0;
  std::size_t depth_ = 0;
  std::uint64_t total_ = 0;
  std::vector<std::uint64_t> node_counts_;
  std::vector<std::uint64_t> leaf_counts_;
};

/// Fraction of (tree, leaf) paths visited at most `threshold` times.
double dead_leaf_fraction(const UtilizationLedger& ledger, std::uint64_t threshold = 0);
/// Largest per-tree leaf share over all trees.
double max_path_share(const UtilizationLedger& ledger);
/// Per-tree leaf shares, each tree sorted in decreasing order.
std::vector<std::vector<double>> path_histogram(const UtilizationLedger& ledger);

/// JSON object {depth, trees, leaf_counts, node_counts, total}.
void write_utilization_json(std::ostream& out, const UtilizationLedger& ledger);
/// CSV "tree,rank,leaf,count,share" with leaves ordered by decreasing count.
void write_histogram_csv(std::ostream& out, const UtilizationLedger& ledger);

/// P(z > 0) = Φ(μ/σ) for z ~ N(μ, σ²).
double positive_branch_prob(double mu, double sigma);

/// Accumulates what is needed to predict the per-step change of one node's
/// mean logit under SGD. Each recorded batch stores Σᵢ gᵢhᵢ and Σᵢ gᵢ, where gᵢ
/// is the batch-loss gradient w.r.t. sample i's logit and hᵢ its input.
class DriftProbe {
 public:
  DriftProbe() = default;
  DriftProbe(std::size_t tree, std::size_t node, std::size_t d_in);

  std::size_t tree() const noexcept { return tree_; }
  std::size_t node() const noexcept { return node_; }

  /// `h` is batch × d_in; `logit_grads` and `logits` have one entry per row.
  void record(const Matrix& h, std::span<const double> logit_grads, std::span<const double> logits);

  std::size_t batches() const noexcept { return grad_h_.size(); }
  /// Running mean of the node inputs.
  const std::vector<double>& input_mean() const noexcept { return m_; }
  double logit_mean() const noexcept { return z_mean_; }
  double logit_std() const;
  double grad_mean() const;
  /// Φ(μ/σ) from the running logit moments.
  double branch_prob() const;

  std::span<const double> last_grad_h() const { return grad_h_.back(); }
  double last_grad_sum() const { return grad_sum_.back(); }

  friend double predict_drift(const DriftProbe& probe, double lr);

 private:
  std::size_t tree_ = 0, node_ = 0, d_in_ = 0;
  std::uint64_t samples_ = 0;
  std::vector<double> m_;
  double z_mean_ = 0.0, z_m2_ = 0.0, g_total_ = 0.0;
  std::vector<std::vector<double>> grad_h_;
  std::vector<double> grad_sum_;
};

struct NodeLogits {
  std::vector<double> z;     ///< logit of the node for every sample
  std::vector<double> grad;  ///< dL/dz, zero for samples that did not visit the node
};

/// Per-sample logits and logit gradients of one node, from a forward cache
/// and the upstream gradient dL/dy.
NodeLogits node_logit_gradients(const ForestParams& params, const ForwardCache& cache,
                                const Matrix& upstream, std::size_t tree, std::size_t node);

/// −η · mean over recorded batches of (mᵀ Σᵢ gᵢhᵢ + Σᵢ gᵢ), with m the running
/// input mean.
double predict_drift(const DriftProbe& probe, double lr);

/// Branch weights of one tree: q(n) is the probability of taking the
/// higher-index child at internal node n.
struct TreePrior {
  std::size_t depth = 0;
  std::vector<double> q;  ///< 2^D − 1 entries in level order

  std::vector<double> leaf_distribution() const;
};

TreePrior build_tree_prior(std::span<const double> target);
/// Leaf counts of n paths drawn by walking the branch weights.
std::vector<std::uint64_t> sample_prior_paths(const TreePrior& prior, Rng& rng, std::size_t n);

enum class LeafOrder {
  DepthFirst,    ///< rank i on leaf i
  BreadthFirst,  ///< rank i on the leaf whose index is i with its D bits reversed
};

/// Pareto(α) with x_m = 1 discretized onto 2^D ranks by CDF differences over
/// [i+1, i+2), renormalized, then laid out on leaves by `order`.
std::vector<double> pareto_leaf_distribution(std::size_t depth, double alpha,
                                             LeafOrder order = LeafOrder::DepthFirst);

enum class PriorAlignment {
  Positional,   ///< compare leaf i with leaf i
  RankMatched,  ///< compare both distributions sorted in decreasing order
};

/// Total-variation distance between each tree's empirical leaf distribution
/// and the prior, averaged over trees.
double prior_distance(const UtilizationLedger& ledger, const TreePrior& prior,
                      PriorAlignment alignment = PriorAlignment::Positional);

}  // namespace fff
