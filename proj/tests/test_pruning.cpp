#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "fff/error.hpp"
#include "fff/pruning.hpp"

using namespace fff;

namespace {

UtilizationLedger random_ledger(Rng& rng, const ForestParams& f, std::size_t n) {
  UtilizationLedger l(f.trees, f.depth);
  l.record_batch(forward_sequential(f, gaussian_matrix(rng, n, f.d_in, 1.0)).cache.mask);
  return l;
}

// Independent pruned traversal of one (sample, tree) written recursively over
// leaf sets: a child is usable when any leaf below it is still enabled.
bool subtree_alive(const PruneMask& m, std::size_t p, std::size_t n, std::size_t depth) {
  if (node_level(n) == depth) return !m.leaf_disabled(p, n - (leaves_per_tree(depth) - 1));
  return subtree_alive(m, p, 2 * n + 1, depth) || subtree_alive(m, p, 2 * n + 2, depth);
}

Matrix oracle_pruned(const ForestParams& f, const Matrix& x, const PruneMask& m, PruneMode mode) {
  Matrix y(x.rows(), f.d_out);
  for (std::size_t b = 0; b < x.rows(); ++b) {
    std::vector<double> acc(f.d_out);
    for (std::size_t j = 0; j < f.d_out; ++j) acc[j] = f.b_out(0, j);
    for (std::size_t p = 0; p < f.trees; ++p) {
      std::size_t n = 0;
      for (std::size_t level = 0; level <= f.depth; ++level) {
        const std::size_t row = p * f.nodes() + n;
        double z = f.b_in(p, n);
        for (std::size_t i = 0; i < f.d_in; ++i) z += x(b, i) * f.w_in(row, i);
        const double g = f.variant == Variant::PreGelu ? gelu(z) : z;
        for (std::size_t j = 0; j < f.d_out; ++j) acc[j] += g * f.w_out(row, j);
        if (level == f.depth) break;
        std::size_t next = z >= 0 ? 2 * n + 2 : 2 * n + 1;
        if (!subtree_alive(m, p, next, f.depth)) {
          if (mode == PruneMode::ZeroContribution) break;
          next = next == 2 * n + 2 ? 2 * n + 1 : 2 * n + 2;
        }
        n = next;
      }
    }
    for (std::size_t j = 0; j < f.d_out; ++j)
      y(b, j) = f.variant == Variant::PreGelu ? acc[j] : gelu(acc[j]);
  }
  return y;
}

}  // namespace

TEST(PruneMask, DisablingBothChildrenDisablesParent) {
  PruneMask m(1, 3);
  EXPECT_TRUE(m.empty());
  m.disable_leaf(0, 0);
  EXPECT_FALSE(m.node_disabled(0, node_index(2, 0)));
  m.disable_leaf(0, 1);
  EXPECT_TRUE(m.node_disabled(0, node_index(2, 0)));
  EXPECT_FALSE(m.node_disabled(0, node_index(1, 0)));
  m.disable_leaf(0, 3);
  m.disable_leaf(0, 2);
  EXPECT_TRUE(m.node_disabled(0, node_index(1, 0)));
  EXPECT_FALSE(m.node_disabled(0, 0));
  EXPECT_EQ(m.disabled_leaf_count(0), 4u);
  EXPECT_THROW(m.disable_leaf(0, 8), std::out_of_range);
}

TEST(BuildPruneMask, MatchesSortOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const ForestParams f = init_forest(rng, 3, 4, 3, 2, Variant::PreGelu);
    const UtilizationLedger l = random_ledger(rng, f, 1 + rng.below(200));
    const double frac = rng.uniform(0.0, 0.99);
    const PruneMask m = build_prune_mask(l, frac);
    const std::size_t k = static_cast<std::size_t>(frac * 16);
    for (std::size_t p = 0; p < 3; ++p) {
      std::vector<std::pair<std::uint64_t, std::size_t>> order;
      for (std::size_t leaf = 0; leaf < 16; ++leaf) order.push_back({l.leaf_count(p, leaf), leaf});
      std::sort(order.begin(), order.end());
      for (std::size_t i = 0; i < 16; ++i)
        EXPECT_EQ(m.leaf_disabled(p, order[i].second), i < k) << "tree " << p << " rank " << i;
      EXPECT_EQ(m.disabled_leaf_count(p), k);
    }
  }
  UtilizationLedger l(1, 2);
  EXPECT_THROW(build_prune_mask(l, 0.5), std::invalid_argument);
}

TEST(ForwardPruned, EmptyMaskIsBitwiseUnpruned) {
  Rng rng(2);
  for (Variant v : {Variant::PreGelu, Variant::PostGelu}) {
    const ForestParams f = init_forest(rng, 4, 5, 6, 3, v);
    const Matrix x = gaussian_matrix(rng, 40, 6, 1.0);
    const ForestOutput ref = forward_sequential(f, x);
    for (PruneMode mode : {PruneMode::Reroute, PruneMode::ZeroContribution}) {
      const PrunedOutput out = forward_pruned(f, x, PruneMask(4, 5), mode);
      EXPECT_EQ(out.y, ref.y);
      EXPECT_EQ(out.mask, ref.cache.mask);
      EXPECT_TRUE(std::none_of(out.stopped.begin(), out.stopped.end(), [](auto s) { return s; }));
    }
  }
}

TEST(ForwardPruned, MatchesRecursiveOracle) {
  Rng rng(3);
  for (Variant v : {Variant::PreGelu, Variant::PostGelu}) {
    const ForestParams f = init_forest(rng, 2, 4, 5, 3, v);
    const Matrix x = gaussian_matrix(rng, 60, 5, 1.0);
    const PruneMask m = build_prune_mask(random_ledger(rng, f, 300), 0.75);
    for (PruneMode mode : {PruneMode::Reroute, PruneMode::ZeroContribution}) {
      const PrunedOutput out = forward_pruned(f, x, m, mode);
      const Matrix want = oracle_pruned(f, x, m, mode);
      for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(out.y[i], want[i], 1e-12);
      if (mode == PruneMode::Reroute) {
        EXPECT_TRUE(is_valid_route(out.mask));
        for (std::size_t b = 0; b < 60; ++b)
          for (std::size_t p = 0; p < 2; ++p) EXPECT_FALSE(m.leaf_disabled(p, out.mask.leaf(b, p)));
      }
    }
  }
}

TEST(ForwardPruned, SingleSurvivingLeafTakesEverySample) {
  Rng rng(4);
  const ForestParams f = init_forest(rng, 1, 3, 2, 1, Variant::PreGelu);
  PruneMask m(1, 3);
  for (std::size_t leaf = 0; leaf < 8; ++leaf)
    if (leaf != 5) m.disable_leaf(0, leaf);
  const PrunedOutput out = forward_pruned(f, gaussian_matrix(rng, 30, 2, 1.0), m);
  for (std::size_t b = 0; b < 30; ++b) EXPECT_EQ(out.mask.leaf(b, 0), 5u);
  EXPECT_THROW(forward_pruned(f, Matrix(1, 2), PruneMask(1, 2)), DimensionError);
}

TEST(Sparsity, BlockAndModelAccounting) {
  EXPECT_DOUBLE_EQ(mlp_block_sparsity(0), 0.0);
  EXPECT_DOUBLE_EQ(mlp_block_sparsity(3), 1.0 - 4.0 / 15.0);
  EXPECT_NEAR(mlp_block_sparsity(11), 0.99707, 1e-5);
  const SparsityReport r = sparsity_report(2, 3, 16, 64, 1000.0);
  EXPECT_EQ(r.fff_flops, 2u * 2 * 4 * 32);
  EXPECT_EQ(r.dense_flops, 2u * (16 * 64 + 64 * 16));
  EXPECT_DOUBLE_EQ(r.layer_relative_flops, 512.0 / 4096.0);
  EXPECT_DOUBLE_EQ(r.model_relative_flops, 1512.0 / 5096.0);
  EXPECT_DOUBLE_EQ(r.overall_model_sparsity, 1.0 - 1512.0 / 5096.0);
}

TEST(Bench, ExecutedFlopsEqualAnalyticCount) {
  BenchConfig c;
  c.trees = 3;
  c.depth = 4;
  c.width = 32;
  c.batch = 8;
  c.repeats = 2;
  c.warmup = 0;
  for (bool parallel : {false, true}) {
    c.parallel = parallel;
    const BenchResult r = bench_layer(c);
    EXPECT_EQ(r.executed_flops, r.analytic_flops);
    EXPECT_EQ(r.analytic_flops, 8u * 2 * 3 * 5 * 64);
    EXPECT_EQ(r.dense_hidden, 3u * 31);
    EXPECT_EQ(r.dense_flops, 8u * 2 * (32 * 93 + 93 * 32));
    EXPECT_EQ(r.sparse.samples_ms.size(), 2u);
    EXPECT_GT(r.speedup, 0.0);
  }
  std::ostringstream csv;
  write_bench_csv(csv, {bench_layer(c)});
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "depth,sparsity,rel_flops,mean_ms,std_ms,speedup");
}
