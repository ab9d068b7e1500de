#include "fff/pruning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "fff/error.hpp"
#include "fff/kernels.hpp"

namespace fff {

PruneMask::PruneMask(std::size_t trees, std::size_t depth)
    : trees_(trees), depth_(depth), disabled_(trees * nodes_per_tree(depth), 0) {}

void PruneMask::disable_leaf(std::size_t p, std::size_t leaf) {
  if (p >= trees_ || leaf >= leaves_per_tree(depth_))
    throw std::out_of_range("PruneMask::disable_leaf: leaf out of range");
  const std::size_t base = p * nodes_per_tree(depth_);
  std::size_t n = node_index(depth_, leaf);
  disabled_[base + n] = 1;
  // Walk up while both children of the parent are disabled.
  while (n > 0) {
    const std::size_t parent = (n - 1) / 2;
    if (!(disabled_[base + 2 * parent + 1] && disabled_[base + 2 * parent + 2])) break;
    disabled_[base + parent] = 1;
    n = parent;
  }
}

std::size_t PruneMask::disabled_leaf_count(std::size_t p) const {
  std::size_t c = 0;
  for (std::size_t k = 0; k < leaves_per_tree(depth_); ++k) c += leaf_disabled(p, k);
  return c;
}

bool PruneMask::empty() const {
  return std::none_of(disabled_.begin(), disabled_.end(), [](std::uint8_t v) { return v != 0; });
}

PruneMask build_prune_mask(const UtilizationLedger& ledger, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw std::invalid_argument("build_prune_mask: fraction must lie in [0, 1)");
  if (ledger.total() == 0) throw std::invalid_argument("build_prune_mask: empty ledger");
  const std::size_t leaves = leaves_per_tree(ledger.depth());
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(leaves)));
  PruneMask mask(ledger.trees(), ledger.depth());
  for (std::size_t p = 0; p < ledger.trees(); ++p) {
    const auto lc = ledger.leaf_counts(p);
    std::vector<std::size_t> order(leaves);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return lc[a] < lc[b]; });
    for (std::size_t i = 0; i < count; ++i) mask.disable_leaf(p, order[i]);
  }
  return mask;
}

PrunedOutput forward_pruned(const ForestParams& params, const Matrix& x, const PruneMask& mask,
                            PruneMode mode) {
  params.validate();
  if (x.cols() != params.d_in)
    throw DimensionError("forward_pruned: input has " + std::to_string(x.cols()) +
                         " columns, layer expects " + std::to_string(params.d_in));
  if (mask.trees() != params.trees || mask.depth() != params.depth)
    throw DimensionError("forward_pruned: prune mask shape does not match the layer");
  const auto f = params.view();
  const std::size_t batch = x.rows(), nodes = f.nodes();
  PrunedOutput out{Matrix(batch, f.d_out), RouteMask(batch, f.trees, f.depth),
                   std::vector<std::uint8_t>(batch * f.trees, 0)};
  const auto rows = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < rows; ++b) {
    const double* xr = x.data() + b * f.d_in;
    double* y = out.y.data() + b * f.d_out;
    for (std::size_t j = 0; j < f.d_out; ++j) y[j] = f.b_out[j];
    for (std::size_t p = 0; p < f.trees; ++p) {
      std::size_t n = 0;
      bool stopped = false;
      for (std::size_t level = 0; level <= f.depth; ++level) {
        if (stopped) {
          out.mask.node(b, p, level) = out.mask.node(b, p, level - 1);
          continue;
        }
        const std::size_t flat = p * nodes + n;
        const double* w = f.w_in + flat * f.d_in;
        double s = 0;
        for (std::size_t i = 0; i < f.d_in; ++i) s += xr[i] * w[i];
        const double z = s + f.b_in[flat];
        const double g = f.post_gelu ? z : kernels::gelu_of(z);
        const double* wo = f.w_out + flat * f.d_out;
        for (std::size_t j = 0; j < f.d_out; ++j) y[j] += g * wo[j];
        out.mask.node(b, p, level) = static_cast<std::uint32_t>(n);
        if (level == f.depth) break;
        std::size_t next = 2 * n + (z >= 0.0 ? 2 : 1);
        if (mask.node_disabled(p, next)) {
          if (mode == PruneMode::Reroute) {
            next = next % 2 == 1 ? next + 1 : next - 1;
          } else {
            stopped = true;
            out.stopped[b * f.trees + p] = 1;
          }
        }
        n = next;
      }
    }
    if (f.post_gelu)
      for (std::size_t j = 0; j < f.d_out; ++j) y[j] = kernels::gelu_of(y[j]);
  }
  return out;
}

double mlp_block_sparsity(std::size_t depth) {
  return 1.0 - static_cast<double>(depth + 1) / static_cast<double>(nodes_per_tree(depth));
}

SparsityReport sparsity_report(std::size_t trees, std::size_t depth, std::size_t d_model,
                               std::size_t d_ff_dense, double attention_flops_per_token) {
  if (trees == 0 || d_model == 0 || d_ff_dense == 0)
    throw DimensionError("sparsity_report: dimensions must be positive");
  SparsityReport r;
  r.depth = depth;
  r.trees = trees;
  r.d_model = d_model;
  r.d_ff_dense = d_ff_dense;
  r.mlp_block_sparsity = mlp_block_sparsity(depth);
  r.fff_flops = 2ULL * trees * (depth + 1) * (2 * d_model);
  r.dense_flops = 2ULL * (d_model * d_ff_dense + d_ff_dense * d_model);
  r.attention_flops = attention_flops_per_token;
  r.layer_relative_flops = static_cast<double>(r.fff_flops) / static_cast<double>(r.dense_flops);
  r.model_relative_flops = (attention_flops_per_token + static_cast<double>(r.fff_flops)) /
                           (attention_flops_per_token + static_cast<double>(r.dense_flops));
  r.overall_model_sparsity = 1.0 - r.model_relative_flops;
  return r;
}

namespace {

template <class F>
TimingStats time_calls(std::size_t warmup, std::size_t repeats, F&& call) {
  for (std::size_t i = 0; i < warmup; ++i) call();
  TimingStats s;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    call();
    const auto t1 = std::chrono::steady_clock::now();
    s.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  const double n = static_cast<double>(s.samples_ms.size());
  for (double v : s.samples_ms) s.mean_ms += v / n;
  if (s.samples_ms.size() > 1) {
    double ss = 0.0;
    for (double v : s.samples_ms) ss += (v - s.mean_ms) * (v - s.mean_ms);
    s.std_ms = std::sqrt(ss / (n - 1));
  }
  return s;
}

}  // namespace

BenchResult bench_layer(const BenchConfig& config) {
  if (config.repeats == 0) throw std::invalid_argument("bench_layer: repeats must be at least 1");
  Rng rng(config.seed);
  const std::size_t w = config.width;
  const ForestParams forest =
      init_forest(rng, config.trees, config.depth, w, w, Variant::PreGelu);
  BenchResult r;
  r.config = config;
  r.dense_hidden = config.trees * nodes_per_tree(config.depth);
  const DenseFFParams dense = init_dense(rng, w, r.dense_hidden, w);
  const Matrix x = gaussian_matrix(rng, config.batch, w, 1.0);
  Matrix y(config.batch, w), hidden(config.batch, r.dense_hidden);

  const auto fv = forest.view();
  const auto dv = dense.view();
  if (config.parallel) {
    r.sparse = time_calls(config.warmup, config.repeats, [&] {
      kernels::sparse_forward_parallel(fv, x.data(), config.batch, y.data());
    });
    r.dense = time_calls(config.warmup, config.repeats, [&] {
      kernels::dense_forward_parallel(dv, x.data(), config.batch, y.data(), hidden.data());
    });
  } else {
    r.sparse = time_calls(config.warmup, config.repeats, [&] {
      kernels::sparse_forward_serial(fv, x.data(), config.batch, y.data());
    });
    r.dense = time_calls(config.warmup, config.repeats, [&] {
      kernels::dense_forward_serial(dv, x.data(), config.batch, y.data(), hidden.data());
    });
  }
  kernels::sparse_forward_serial(fv, x.data(), config.batch, y.data(), {}, &r.executed_flops);
  r.analytic_flops = config.batch * fv.flops_per_row();
  r.dense_flops = config.batch * dv.flops_per_row();
  r.speedup = r.sparse.mean_ms > 0 ? r.dense.mean_ms / r.sparse.mean_ms : 0.0;
  return r;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchResult>& rows) {
  out << "depth,sparsity,rel_flops,mean_ms,std_ms,speedup\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.config.depth << ',' << mlp_block_sparsity(r.config.depth) << ','
        << static_cast<double>(r.analytic_flops) / static_cast<double>(r.dense_flops) << ','
        << r.sparse.mean_ms << ',' << r.sparse.std_ms << ',' << r.speedup << '\n';
}

}  // namespace fff
