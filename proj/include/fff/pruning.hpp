#pragma once

// Utilization-based path pruning, analytic sparsity/FLOP accounting and a
// layer-level timing harness.

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "fff/baselines.hpp"
#include "fff/forest.hpp"
#include "fff/routing.hpp"

namespace fff {

/// Permanently disabled leaf paths per tree. A node is disabled when every
/// leaf below it is.
class PruneMask {
 public:
  PruneMask() = default;
  PruneMask(std::size_t trees, std::size_t depth);

  std::size_t trees() const noexcept { return trees_; }
  std::size_t depth() const noexcept { return depth_; }

  void disable_leaf(std::size_t p, std::size_t leaf);
  bool leaf_disabled(std::size_t p, std::size_t leaf) const {
    return node_disabled(p, node_index(depth_, leaf));
  }
  bool node_disabled(std::size_t p, std::size_t n) const {
    return disabled_[p * nodes_per_tree(depth_) + n] != 0;
  }
  std::size_t disabled_leaf_count(std::size_t p) const;
  bool empty() const;

  friend bool operator==(const PruneMask&, const PruneMask&) = default;

 private:
  std::size_t trees_ = 0;
  std::size_t depth_ = 0;
  std::vector<std::uint8_t> disabled_;  // P × N
};

/// Disables the ⌊fraction·2^D⌋ least-visited leaves of every tree, ties going
/// to the lower leaf index.
PruneMask build_prune_mask(const UtilizationLedger& ledger, double fraction);

enum class PruneMode {
  Reroute,           ///< a step into a disabled subtree goes to its sibling instead
  ZeroContribution,  ///< traversal stops; the rest of the path contributes nothing
};

struct PrunedOutput {
  Matrix y;
  RouteMask mask;  ///< with ZeroContribution, levels after the stop repeat the last node
  std::vector<std::uint8_t> stopped;  ///< B × P, 1 where traversal stopped early
};

PrunedOutput forward_pruned(const ForestParams& params, const Matrix& x, const PruneMask& mask,
                            PruneMode mode = PruneMode::Reroute);

struct SparsityReport {
  std::size_t depth = 0, trees = 0, d_model = 0, d_ff_dense = 0;
  double mlp_block_sparsity = 0.0;
  std::uint64_t fff_flops = 0;    ///< per token, 2·P·(D+1)·(d_in + d_out)
  std::uint64_t dense_flops = 0;  ///< per token, 2·(d_in·d_ff + d_ff·d_out)
  double attention_flops = 0.0;   ///< per token, supplied by the caller
  double layer_relative_flops = 0.0;  ///< fff / dense
  double model_relative_flops = 0.0;  ///< (attention + fff) / (attention + dense)
  double overall_model_sparsity = 0.0;  ///< 1 − model_relative_flops
};

/// 1 − (D+1)/(2^(D+1) − 1).
double mlp_block_sparsity(std::size_t depth);

SparsityReport sparsity_report(std::size_t trees, std::size_t depth, std::size_t d_model,
                               std::size_t d_ff_dense, double attention_flops_per_token);

struct BenchConfig {
  std::size_t trees = 1;
  std::size_t depth = 6;
  std::size_t width = 512;  ///< d_in = d_out
  std::size_t batch = 64;
  std::size_t repeats = 5;
  std::size_t warmup = 1;
  bool parallel = false;  ///< OpenMP kernels instead of the single-threaded reference
  std::uint64_t seed = 0;
};

struct TimingStats {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  std::vector<double> samples_ms;
};

struct BenchResult {
  BenchConfig config;
  std::size_t dense_hidden = 0;  ///< P·(2^(D+1) − 1), matching the tree node count
  TimingStats sparse;
  TimingStats dense;
  double speedup = 0.0;  ///< dense mean / sparse mean
  std::uint64_t executed_flops = 0;  ///< counted while running one batch through the sparse kernel
  std::uint64_t analytic_flops = 0;  ///< batch · 2·P·(D+1)·(d_in + d_out)
  std::uint64_t dense_flops = 0;     ///< batch · 2·(d_in·h + h·d_out)
};

/// Times the sparse tree kernel against a dense FF block with the same
/// number of hidden units (and therefore the same parameter count).
BenchResult bench_layer(const BenchConfig& config);

/// CSV "depth,sparsity,rel_flops,mean_ms,std_ms,speedup", one row per result.
void write_bench_csv(std::ostream& out, const std::vector<BenchResult>& rows);

}  // namespace fff
