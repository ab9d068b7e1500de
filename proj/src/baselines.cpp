#include "fff/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fff/error.hpp"

namespace fff {

DenseFFParams DenseFFParams::zeros(std::size_t d_in, std::size_t d_hidden, std::size_t d_out) {
  return {Matrix(d_in, d_hidden), Matrix(1, d_hidden), Matrix(d_hidden, d_out),
          Matrix(1, d_out)};
}

kernels::DenseView<double> DenseFFParams::view() const {
  return {d_in(), d_hidden(), d_out(), w1.data(), b1.data(), w2.data(), b2.data()};
}

void DenseFFParams::validate() const {
  if (d_in() == 0 || d_hidden() == 0 || d_out() == 0)
    throw DimensionError("dense ff: dims must be >= 1");
  if (b1.rows() != 1 || b1.cols() != d_hidden() || w2.rows() != d_hidden() || b2.rows() != 1 ||
      b2.cols() != d_out()) {
    throw DimensionError("dense ff: inconsistent parameter shapes");
  }
}

DenseFFParams init_dense(Rng& rng, std::size_t d_in, std::size_t d_hidden, std::size_t d_out) {
  if (d_in == 0 || d_hidden == 0 || d_out == 0) throw DimensionError("init_dense: dims must be >= 1");
  DenseFFParams p = DenseFFParams::zeros(d_in, d_hidden, d_out);
  for (auto& v : p.w1.values()) v = rng.gaussian() / std::sqrt(static_cast<double>(d_in));
  for (auto& v : p.w2.values()) v = rng.gaussian() / std::sqrt(static_cast<double>(d_hidden));
  return p;
}

Matrix dense_ff_forward(const DenseFFParams& params, const Matrix& x, DenseCache* cache) {
  if (x.cols() != params.d_in()) {
    throw DimensionError("dense ff: input has " + std::to_string(x.cols()) +
                         " columns, expected " + std::to_string(params.d_in()));
  }
  Matrix pre = matmul(x, params.w1);
  add_row_inplace(pre, params.b1);
  Matrix hidden(pre.rows(), pre.cols());
  for (std::size_t i = 0; i < pre.size(); ++i) hidden[i] = gelu(pre[i]);
  Matrix y = matmul(hidden, params.w2);
  add_row_inplace(y, params.b2);
  if (cache) *cache = {x, std::move(pre), std::move(hidden)};
  return y;
}

DenseGradients dense_ff_backward(const DenseFFParams& params, const DenseCache& cache,
                                 const Matrix& upstream) {
  if (upstream.rows() != cache.x.rows() || upstream.cols() != params.d_out())
    throw DimensionError("dense ff backward: upstream shape mismatch");
  DenseGradients g;
  g.params.w2 = matmul_at(cache.hidden, upstream);
  g.params.b2 = column_sums(upstream);
  Matrix gh = matmul_bt(upstream, params.w2);
  for (std::size_t i = 0; i < gh.size(); ++i) gh[i] *= gelu_prime(cache.pre[i]);
  g.params.w1 = matmul_at(cache.x, gh);
  g.params.b1 = column_sums(gh);
  g.x = matmul_bt(gh, params.w1);
  return g;
}

std::vector<Matrix*> MoEParams::tensors() {
  std::vector<Matrix*> t{&router};
  for (auto& e : experts)
    for (auto* m : e.tensors()) t.push_back(m);
  return t;
}

std::vector<const Matrix*> MoEParams::tensors() const {
  std::vector<const Matrix*> t{&router};
  for (const auto& e : experts)
    for (const auto* m : e.tensors()) t.push_back(m);
  return t;
}

std::size_t MoEParams::param_count() const {
  std::size_t n = router.size();
  for (const auto& e : experts) n += e.param_count();
  return n;
}

void MoEParams::validate() const {
  if (experts.empty()) throw DimensionError("moe: needs at least one expert");
  if (top_k < 1 || top_k > experts.size())
    throw DimensionError("moe: top_k must be in [1, E], got " + std::to_string(top_k));
  if (router.cols() != experts.size()) throw DimensionError("moe: router width != E");
  for (const auto& e : experts) {
    e.validate();
    if (e.d_in() != d_in() || e.d_out() != d_out() || e.d_hidden() != d_expert())
      throw DimensionError("moe: experts must share one shape");
  }
}

std::vector<std::size_t> top_k_indices(std::span<const double> logits, std::size_t k) {
  std::vector<std::size_t> idx(logits.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

MoEParams init_moe(Rng& rng, std::size_t d_in, std::size_t num_experts, std::size_t top_k,
                   std::size_t d_expert, std::size_t d_out) {
  if (num_experts == 0 || top_k == 0 || top_k > num_experts)
    throw DimensionError("init_moe: need 1 <= top_k <= num_experts");
  MoEParams p;
  p.top_k = top_k;
  p.router = gaussian_matrix(rng, d_in, num_experts, 1.0 / std::sqrt(static_cast<double>(d_in)));
  p.experts.reserve(num_experts);
  for (std::size_t e = 0; e < num_experts; ++e)
    p.experts.push_back(init_dense(rng, d_in, d_expert, d_out));
  return p;
}

Matrix moe_forward(const MoEParams& params, const Matrix& x, MoECache* cache) {
  params.validate();
  if (x.cols() != params.d_in())
    throw DimensionError("moe: input has " + std::to_string(x.cols()) + " columns, expected " +
                         std::to_string(params.d_in()));
  const std::size_t batch = x.rows(), k = params.top_k, experts = params.num_experts();
  MoECache local;
  MoECache& c = cache ? *cache : local;
  c.x = x;
  c.logits = matmul(x, params.router);
  c.selected.assign(batch * k, 0);
  c.weights.assign(batch * k, 0.0);
  c.rows.assign(experts, {});
  for (std::size_t b = 0; b < batch; ++b) {
    const auto top = top_k_indices(c.logits.row(b), k);
    // Softmax over the selected logits; top[0] holds the maximum.
    const double mx = c.logits(b, top[0]);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      c.weights[b * k + j] = std::exp(c.logits(b, top[j]) - mx);
      denom += c.weights[b * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) {
      c.weights[b * k + j] /= denom;
      c.selected[b * k + j] = top[j];
      c.rows[top[j]].push_back(b * k + j);
    }
  }
  c.expert_caches.assign(experts, {});
  c.expert_outputs.assign(experts, {});
  Matrix y(batch, params.d_out());
  for (std::size_t e = 0; e < experts; ++e) {
    const auto& rows = c.rows[e];
    if (rows.empty()) continue;
    Matrix xe(rows.size(), params.d_in());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto src = x.row(rows[r] / k);
      std::copy(src.begin(), src.end(), xe.row(r).begin());
    }
    c.expert_outputs[e] = dense_ff_forward(params.experts[e], xe, &c.expert_caches[e]);
  }
  // Combine in (sample, rank) order so the sum order is fixed.
  std::vector<std::size_t> position(batch * k);
  for (std::size_t e = 0; e < experts; ++e)
    for (std::size_t r = 0; r < c.rows[e].size(); ++r) position[c.rows[e][r]] = r;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t e = c.selected[b * k + j];
      const auto out = c.expert_outputs[e].row(position[b * k + j]);
      const double w = c.weights[b * k + j];
      for (std::size_t o = 0; o < params.d_out(); ++o) y(b, o) += w * out[o];
    }
  }
  return y;
}

MoEGradients moe_backward(const MoEParams& params, const MoECache& cache, const Matrix& upstream) {
  const std::size_t batch = cache.x.rows(), k = params.top_k, experts = params.num_experts();
  if (upstream.rows() != batch || upstream.cols() != params.d_out() ||
      cache.selected.size() != batch * k)
    throw DimensionError("moe backward: upstream or cache shape mismatch");
  MoEGradients g;
  g.params.top_k = k;
  g.params.router = Matrix(params.d_in(), experts);
  g.x = Matrix(batch, params.d_in());

  std::vector<std::size_t> position(batch * k);
  for (std::size_t e = 0; e < experts; ++e)
    for (std::size_t r = 0; r < cache.rows[e].size(); ++r) position[cache.rows[e][r]] = r;

  // Softmax-weight gradients, then router-logit gradients.
  Matrix glogits(batch, experts);
  std::vector<double> gw(k);
  for (std::size_t b = 0; b < batch; ++b) {
    double dot = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t e = cache.selected[b * k + j];
      const auto out = cache.expert_outputs[e].row(position[b * k + j]);
      double s = 0.0;
      for (std::size_t o = 0; o < params.d_out(); ++o) s += upstream(b, o) * out[o];
      gw[j] = s;
      dot += cache.weights[b * k + j] * s;
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double w = cache.weights[b * k + j];
      glogits(b, cache.selected[b * k + j]) = w * (gw[j] - dot);
    }
  }
  g.params.router = matmul_at(cache.x, glogits);
  g.x = matmul_bt(glogits, params.router);

  g.params.experts.reserve(experts);
  for (std::size_t e = 0; e < experts; ++e) {
    const auto& rows = cache.rows[e];
    const auto& ex = params.experts[e];
    if (rows.empty()) {
      g.params.experts.push_back(DenseFFParams::zeros(ex.d_in(), ex.d_hidden(), ex.d_out()));
      continue;
    }
    Matrix ge(rows.size(), params.d_out());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double w = cache.weights[rows[r]];
      for (std::size_t o = 0; o < params.d_out(); ++o) ge(r, o) = w * upstream(rows[r] / k, o);
    }
    DenseGradients de = dense_ff_backward(ex, cache.expert_caches[e], ge);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto gx = g.x.row(rows[r] / k);
      const auto src = de.x.row(r);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += src[i];
    }
    g.params.experts.push_back(std::move(de.params));
  }
  return g;
}

std::size_t match_sparsity(double target_sparsity, std::size_t top_k) {
  if (!(target_sparsity > 0.0 && target_sparsity < 1.0))
    throw std::invalid_argument("match_sparsity: sparsity must be in (0, 1)");
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(top_k) / (1.0 - target_sparsity)));
}

std::size_t dense_param_count(std::size_t d_in, std::size_t d_hidden, std::size_t d_out) {
  return d_in * d_hidden + d_hidden + d_hidden * d_out + d_out;
}

std::size_t moe_param_count(std::size_t d_in, std::size_t num_experts, std::size_t d_expert,
                            std::size_t d_out) {
  return d_in * num_experts + num_experts * dense_param_count(d_in, d_expert, d_out);
}

std::size_t matched_expert_width(std::size_t d_in, std::size_t d_hidden, std::size_t d_out,
                                 std::size_t num_experts) {
  const double target = static_cast<double>(dense_param_count(d_in, d_hidden, d_out));
  const double fixed = static_cast<double>(num_experts * (d_in + d_out));
  const double per_unit = static_cast<double>(num_experts * (d_in + 1 + d_out));
  const double w = (target - fixed) / per_unit;
  return static_cast<std::size_t>(std::max(1.0, std::round(w)));
}

}  // namespace fff
