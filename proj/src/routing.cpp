#include "fff/routing.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "fff/error.hpp"

namespace fff {

UtilizationLedger::UtilizationLedger(std::size_t trees, std::size_t depth)
    : trees_(trees),
      depth_(depth),
      node_counts_(trees * nodes_per_tree(depth)),
      leaf_counts_(trees * leaves_per_tree(depth)) {}

void UtilizationLedger::record_batch(const RouteMask& mask) {
  if (mask.trees() != trees_ || mask.depth() != depth_)
    throw DimensionError("record_batch: mask has " + std::to_string(mask.trees()) +
                         " trees of depth " + std::to_string(mask.depth()) + ", ledger expects " +
                         std::to_string(trees_) + " of depth " + std::to_string(depth_));
  const std::size_t nodes = nodes_per_tree(depth_), leaves = leaves_per_tree(depth_);
  for (std::size_t b = 0; b < mask.batch(); ++b) {
    for (std::size_t p = 0; p < trees_; ++p) {
      for (std::size_t l = 0; l <= depth_; ++l) ++node_counts_[p * nodes + mask.node(b, p, l)];
      ++leaf_counts_[p * leaves + mask.leaf(b, p)];
    }
  }
  total_ += mask.batch();
}

void UtilizationLedger::merge(const UtilizationLedger& other) {
  if (other.trees_ != trees_ || other.depth_ != depth_)
    throw DimensionError("UtilizationLedger::merge: ledger shapes differ");
  for (std::size_t i = 0; i < node_counts_.size(); ++i) node_counts_[i] += other.node_counts_[i];
  for (std::size_t i = 0; i < leaf_counts_.size(); ++i) leaf_counts_[i] += other.leaf_counts_[i];
  total_ += other.total_;
}

bool UtilizationLedger::conserved() const {
  const std::size_t nodes = nodes_per_tree(depth_);
  for (std::size_t p = 0; p < trees_; ++p) {
    const auto leaves = leaf_counts(p);
    if (std::accumulate(leaves.begin(), leaves.end(), std::uint64_t{0}) != total_) return false;
    for (std::size_t l = 0; l <= depth_; ++l) {
      std::uint64_t s = 0;
      for (std::size_t k = 0; k < (std::size_t{1} << l); ++k) s += node_count(p, node_index(l, k));
      if (s != total_) return false;
    }
    for (std::size_t n = 0; 2 * n + 2 < nodes; ++n)
      if (node_count(p, 2 * n + 1) + node_count(p, 2 * n + 2) != node_count(p, n)) return false;
    for (std::size_t k = 0; k < leaves.size(); ++k)
      if (leaves[k] != node_count(p, node_index(depth_, k))) return false;
  }
  return true;
}

namespace {

void require_samples(const UtilizationLedger& ledger, const char* who) {
  if (ledger.total() == 0 || ledger.trees() == 0)
    throw std::invalid_argument(std::string(who) + ": ledger has no recorded samples");
}

}  // namespace

double dead_leaf_fraction(const UtilizationLedger& ledger, std::uint64_t threshold) {
  require_samples(ledger, "dead_leaf_fraction");
  std::size_t dead = 0, all = 0;
  for (std::size_t p = 0; p < ledger.trees(); ++p)
    for (auto c : ledger.leaf_counts(p)) {
      dead += c <= threshold;
      ++all;
    }
  return static_cast<double>(dead) / static_cast<double>(all);
}

double max_path_share(const UtilizationLedger& ledger) {
  require_samples(ledger, "max_path_share");
  std::uint64_t best = 0;
  for (std::size_t p = 0; p < ledger.trees(); ++p)
    for (auto c : ledger.leaf_counts(p)) best = std::max(best, c);
  return static_cast<double>(best) / static_cast<double>(ledger.total());
}

std::vector<std::vector<double>> path_histogram(const UtilizationLedger& ledger) {
  require_samples(ledger, "path_histogram");
  std::vector<std::vector<double>> out;
  for (std::size_t p = 0; p < ledger.trees(); ++p) {
    std::vector<double> shares;
    for (auto c : ledger.leaf_counts(p))
      shares.push_back(static_cast<double>(c) / static_cast<double>(ledger.total()));
    std::sort(shares.begin(), shares.end(), std::greater<>());
    out.push_back(std::move(shares));
  }
  return out;
}

void write_utilization_json(std::ostream& out, const UtilizationLedger& ledger) {
  nlohmann::json leaves = nlohmann::json::array(), nodes = nlohmann::json::array();
  for (std::size_t p = 0; p < ledger.trees(); ++p) {
    const auto lc = ledger.leaf_counts(p);
    leaves.push_back(std::vector<std::uint64_t>(lc.begin(), lc.end()));
    std::vector<std::uint64_t> nc;
    for (std::size_t n = 0; n < nodes_per_tree(ledger.depth()); ++n)
      nc.push_back(ledger.node_count(p, n));
    nodes.push_back(std::move(nc));
  }
  nlohmann::json j{{"depth", ledger.depth()},
                   {"trees", ledger.trees()},
                   {"leaf_counts", std::move(leaves)},
                   {"node_counts", std::move(nodes)},
                   {"total", ledger.total()}};
  out << j.dump(1) << '\n';
}

void write_histogram_csv(std::ostream& out, const UtilizationLedger& ledger) {
  out << "tree,rank,leaf,count,share\n";
  out.precision(17);
  for (std::size_t p = 0; p < ledger.trees(); ++p) {
    const auto lc = ledger.leaf_counts(p);
    std::vector<std::size_t> order(lc.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return lc[a] > lc[b]; });
    for (std::size_t r = 0; r < order.size(); ++r) {
      const double share = ledger.total() ? static_cast<double>(lc[order[r]]) /
                                                static_cast<double>(ledger.total())
                                          : 0.0;
      out << p << ',' << r << ',' << order[r] << ',' << lc[order[r]] << ',' << share << '\n';
    }
  }
}

double positive_branch_prob(double mu, double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("positive_branch_prob: sigma must be positive");
  return std_normal_cdf(mu / sigma);
}

DriftProbe::DriftProbe(std::size_t tree, std::size_t node, std::size_t d_in)
    : tree_(tree), node_(node), d_in_(d_in), m_(d_in, 0.0) {}

void DriftProbe::record(const Matrix& h, std::span<const double> logit_grads,
                        std::span<const double> logits) {
  if (h.cols() != d_in_ || logit_grads.size() != h.rows() || logits.size() != h.rows())
    throw DimensionError("DriftProbe::record: expected batch x " + std::to_string(d_in_) +
                         " inputs with one gradient and one logit per row");
  std::vector<double> gh(d_in_, 0.0);
  double gs = 0.0;
  for (std::size_t i = 0; i < h.rows(); ++i) {
    const auto row = h.row(i);
    const double g = logit_grads[i];
    for (std::size_t k = 0; k < d_in_; ++k) gh[k] += g * row[k];
    gs += g;
    ++samples_;
    const double inv = 1.0 / static_cast<double>(samples_);
    for (std::size_t k = 0; k < d_in_; ++k) m_[k] += (row[k] - m_[k]) * inv;
    const double delta = logits[i] - z_mean_;
    z_mean_ += delta * inv;
    z_m2_ += delta * (logits[i] - z_mean_);
    g_total_ += g;
  }
  grad_h_.push_back(std::move(gh));
  grad_sum_.push_back(gs);
}

double DriftProbe::logit_std() const {
  return samples_ > 1 ? std::sqrt(z_m2_ / static_cast<double>(samples_ - 1)) : 0.0;
}

double DriftProbe::grad_mean() const {
  return samples_ ? g_total_ / static_cast<double>(samples_) : 0.0;
}

double DriftProbe::branch_prob() const { return positive_branch_prob(z_mean_, logit_std()); }

double predict_drift(const DriftProbe& probe, double lr) {
  if (probe.grad_h_.empty()) throw std::invalid_argument("predict_drift: probe has no batches");
  double s = 0.0;
  for (std::size_t b = 0; b < probe.grad_h_.size(); ++b) {
    double mg = 0.0;
    for (std::size_t k = 0; k < probe.d_in_; ++k) mg += probe.m_[k] * probe.grad_h_[b][k];
    s += mg + probe.grad_sum_[b];
  }
  return -lr * s / static_cast<double>(probe.grad_h_.size());
}

NodeLogits node_logit_gradients(const ForestParams& params, const ForwardCache& cache,
                                const Matrix& upstream, std::size_t tree, std::size_t node) {
  if (tree >= params.trees || node >= params.nodes())
    throw std::out_of_range("node_logit_gradients: node out of range");
  const std::size_t batch = cache.x.rows(), level = node_level(node);
  if (upstream.rows() != batch || upstream.cols() != params.d_out || cache.x.cols() != params.d_in)
    throw DimensionError("node_logit_gradients: cache and upstream do not match the layer");
  const std::size_t row = tree * params.nodes() + node;
  const auto w = params.w_in.row(row);
  const auto wo = params.w_out.row(row);
  NodeLogits out{std::vector<double>(batch), std::vector<double>(batch, 0.0)};
  for (std::size_t b = 0; b < batch; ++b) {
    const auto x = cache.x.row(b);
    double s = 0;
    for (std::size_t i = 0; i < params.d_in; ++i) s += x[i] * w[i];
    const double z = s + params.b_in(tree, node);
    out.z[b] = z;
    if (cache.mask.node(b, tree, level) != node) continue;
    double g = 0.0;
    if (params.variant == Variant::PreGelu) {
      for (std::size_t j = 0; j < params.d_out; ++j) g += upstream(b, j) * wo[j];
      g *= gelu_prime(z);
    } else {
      for (std::size_t j = 0; j < params.d_out; ++j)
        g += upstream(b, j) * gelu_prime(cache.pre_activation(b, j)) * wo[j];
    }
    out.grad[b] = g;
  }
  return out;
}

std::vector<double> TreePrior::leaf_distribution() const {
  const std::size_t leaves = leaves_per_tree(depth);
  std::vector<double> out(leaves);
  for (std::size_t leaf = 0; leaf < leaves; ++leaf) {
    double prob = 1.0;
    std::size_t n = 0;
    for (std::size_t l = 0; l < depth; ++l) {
      const bool high = (leaf >> (depth - 1 - l)) & 1u;
      prob *= high ? q[n] : 1.0 - q[n];
      n = 2 * n + (high ? 2 : 1);
    }
    out[leaf] = prob;
  }
  return out;
}

TreePrior build_tree_prior(std::span<const double> target) {
  const std::size_t leaves = target.size();
  if (leaves == 0 || (leaves & (leaves - 1)) != 0)
    throw DimensionError("build_tree_prior: target size must be a power of two");
  double total = 0.0;
  for (double t : target) {
    if (!(t >= 0) || !std::isfinite(t))
      throw std::invalid_argument("build_tree_prior: target must be finite and nonnegative");
    total += t;
  }
  if (!(total > 0)) throw std::invalid_argument("build_tree_prior: target has zero mass");
  TreePrior prior;
  prior.depth = static_cast<std::size_t>(std::countr_zero(leaves));
  const std::size_t nodes = nodes_per_tree(prior.depth);
  std::vector<double> mass(nodes, 0.0);
  for (std::size_t k = 0; k < leaves; ++k) mass[node_index(prior.depth, k)] = target[k] / total;
  for (std::size_t n = nodes - leaves; n-- > 0;) mass[n] = mass[2 * n + 1] + mass[2 * n + 2];
  prior.q.resize(nodes - leaves);
  for (std::size_t n = 0; n < prior.q.size(); ++n)
    prior.q[n] = mass[n] > 0 ? mass[2 * n + 2] / mass[n] : 0.5;
  return prior;
}

std::vector<std::uint64_t> sample_prior_paths(const TreePrior& prior, Rng& rng, std::size_t n) {
  std::vector<std::uint64_t> counts(leaves_per_tree(prior.depth), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t node = 0;
    for (std::size_t l = 0; l < prior.depth; ++l)
      node = 2 * node + (rng.uniform() < prior.q[node] ? 2 : 1);
    ++counts[node - (leaves_per_tree(prior.depth) - 1)];
  }
  return counts;
}

std::vector<double> pareto_leaf_distribution(std::size_t depth, double alpha, LeafOrder order) {
  if (!(alpha > 0)) throw std::invalid_argument("pareto_leaf_distribution: alpha must be positive");
  const std::size_t leaves = leaves_per_tree(depth);
  std::vector<double> rank(leaves);
  double total = 0.0;
  for (std::size_t i = 0; i < leaves; ++i) {
    rank[i] = std::pow(double(i + 1), -alpha) - std::pow(double(i + 2), -alpha);
    total += rank[i];
  }
  std::vector<double> out(leaves);
  for (std::size_t i = 0; i < leaves; ++i) {
    std::size_t leaf = i;
    if (order == LeafOrder::BreadthFirst) {
      leaf = 0;
      for (std::size_t b = 0; b < depth; ++b)
        if (i >> b & 1u) leaf |= std::size_t{1} << (depth - 1 - b);
    }
    out[leaf] = rank[i] / total;
  }
  return out;
}

double prior_distance(const UtilizationLedger& ledger, const TreePrior& prior,
                      PriorAlignment alignment) {
  if (ledger.depth() != prior.depth)
    throw DimensionError("prior_distance: ledger depth " + std::to_string(ledger.depth()) +
                         " != prior depth " + std::to_string(prior.depth));
  require_samples(ledger, "prior_distance");
  std::vector<double> want = prior.leaf_distribution();
  if (alignment == PriorAlignment::RankMatched) std::sort(want.begin(), want.end(), std::greater<>());
  double sum = 0.0;
  for (std::size_t p = 0; p < ledger.trees(); ++p) {
    std::vector<double> got;
    for (auto c : ledger.leaf_counts(p))
      got.push_back(static_cast<double>(c) / static_cast<double>(ledger.total()));
    if (alignment == PriorAlignment::RankMatched) std::sort(got.begin(), got.end(), std::greater<>());
    double tv = 0.0;
    for (std::size_t k = 0; k < got.size(); ++k) tv += std::abs(got[k] - want[k]);
    sum += 0.5 * tv;
  }
  return sum / static_cast<double>(ledger.trees());
}

}  // namespace fff
