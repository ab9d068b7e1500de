#include "fff/forest.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "fff/error.hpp"

namespace fff {

namespace {

std::string node_location(std::size_t p, std::size_t node) {
  const std::size_t level = node_level(node);
  const std::size_t slot = node - node_index(level, 0);
  return "(tree " + std::to_string(p) + ", level " + std::to_string(level) + ", slot " +
         std::to_string(slot) + ")";
}

void check_input(const ForestParams& params, const Matrix& x) {
  if (x.cols() != params.d_in) {
    throw DimensionError("forest: input has " + std::to_string(x.cols()) +
                         " columns, layer expects d_in = " + std::to_string(params.d_in));
  }
}

// Finds the first visited node whose logit or contribution is non-finite and
// reports it; falls back to the output location.
[[noreturn]] void report_non_finite(const ForestParams& params, const Matrix& x,
                                    const Matrix& y) {
  const std::size_t nodes = params.nodes();
  for (std::size_t b = 0; b < x.rows(); ++b) {
    for (std::size_t p = 0; p < params.trees; ++p) {
      std::size_t n = 0;
      for (std::size_t level = 0; level <= params.depth; ++level) {
        const std::size_t flat = p * nodes + n;
        double z = params.b_in[flat];
        for (std::size_t i = 0; i < params.d_in; ++i) z += x(b, i) * params.w_in(flat, i);
        bool bad = !std::isfinite(z);
        for (std::size_t j = 0; j < params.d_out && !bad; ++j)
          bad = !std::isfinite(params.w_out(flat, j));
        if (bad) {
          throw NumericError("forest: non-finite value at sample " + std::to_string(b) + " " +
                             node_location(p, n));
        }
        n = 2 * n + (z >= 0.0 ? 2 : 1);
      }
    }
  }
  require_finite(y, "forest output");
  throw NumericError("forest: non-finite output");
}

void check_cache(const ForestParams& params, const ForwardCache& cache, const Matrix& upstream) {
  if (cache.trees != params.trees || cache.depth != params.depth || cache.d_in != params.d_in ||
      cache.d_out != params.d_out || cache.variant != params.variant) {
    throw std::invalid_argument("forest backward: cache was produced by a different layer");
  }
  if (upstream.rows() != cache.x.rows() || upstream.cols() != params.d_out) {
    throw DimensionError("forest backward: upstream gradient shape does not match cache");
  }
  const std::size_t per_row = cache.mode == CacheMode::Masked
                                  ? params.trees * params.nodes()
                                  : params.trees * (params.depth + 1);
  if (cache.logits.rows() != cache.x.rows() || cache.logits.cols() != per_row ||
      cache.mask.batch() != cache.x.rows()) {
    throw std::invalid_argument("forest backward: cache is incomplete or stale");
  }
}

LayerGradients zero_gradients(const ForestParams& params, std::size_t batch) {
  LayerGradients g;
  g.w_in = Matrix(params.w_in.rows(), params.w_in.cols());
  g.b_in = Matrix(params.b_in.rows(), params.b_in.cols());
  g.w_out = Matrix(params.w_out.rows(), params.w_out.cols());
  g.b_out = Matrix(1, params.d_out);
  g.x = Matrix(batch, params.d_in);
  return g;
}

// dL/dU for the post-GELU variant, dL/dY otherwise.
Matrix output_gradient(const ForwardCache& cache, const Matrix& upstream) {
  if (cache.variant == Variant::PreGelu) return upstream;
  Matrix gu(upstream.rows(), upstream.cols());
  for (std::size_t i = 0; i < gu.size(); ++i)
    gu[i] = upstream[i] * gelu_prime(cache.pre_activation[i]);
  return gu;
}

LayerGradients backward_masked(const ForestParams& params, const ForwardCache& cache,
                               const Matrix& upstream) {
  const std::size_t batch = cache.x.rows();
  const Matrix mask = cache.mask.dense();
  const Matrix& z = cache.logits;
  const bool pre = params.variant == Variant::PreGelu;

  Matrix a(batch, z.cols());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = mask[i] * (pre ? gelu(z[i]) : z[i]);

  const Matrix gy = output_gradient(cache, upstream);
  LayerGradients g;
  g.w_out = matmul_at(a, gy);
  g.b_out = column_sums(gy);
  Matrix gz = matmul_bt(gy, params.w_out);  // ∇A
  for (std::size_t i = 0; i < gz.size(); ++i) {
    gz[i] *= mask[i];
    if (pre) gz[i] *= gelu_prime(z[i]);
  }
  g.w_in = matmul_at(gz, cache.x);
  g.b_in = column_sums(gz);
  g.b_in = Matrix(params.trees, params.nodes(),
                  std::vector<double>(g.b_in.values().begin(), g.b_in.values().end()));
  g.x = matmul(gz, params.w_in);
  return g;
}

LayerGradients backward_sequential(const ForestParams& params, const ForwardCache& cache,
                                   const Matrix& upstream) {
  const std::size_t batch = cache.x.rows();
  const std::size_t nodes = params.nodes();
  const std::size_t path_len = params.depth + 1;
  const bool pre = params.variant == Variant::PreGelu;
  const Matrix gy = output_gradient(cache, upstream);
  LayerGradients g = zero_gradients(params, batch);

  // ∂L/∂z for every visited node.
  Matrix gz(batch, params.trees * path_len);
  const auto trees = static_cast<std::ptrdiff_t>(params.trees);
  // Trees own disjoint parameter rows; inside a tree samples are reduced in
  // ascending order.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < trees; ++p) {
    for (std::size_t b = 0; b < batch; ++b) {
      const auto gyb = gy.row(b);
      const auto xb = cache.x.row(b);
      for (std::size_t level = 0; level < path_len; ++level) {
        const std::size_t n = cache.mask.node(b, p, level);
        const std::size_t flat = p * nodes + n;
        const std::size_t k = p * path_len + level;
        const double zv = cache.logits(b, k);
        const double act = pre ? gelu(zv) : zv;
        double ga = 0.0;
        auto wo = params.w_out.row(flat);
        auto gwo = g.w_out.row(flat);
        for (std::size_t j = 0; j < params.d_out; ++j) {
          ga += gyb[j] * wo[j];
          gwo[j] += act * gyb[j];
        }
        const double dz = pre ? ga * gelu_prime(zv) : ga;
        gz(b, k) = dz;
        auto gwi = g.w_in.row(flat);
        for (std::size_t i = 0; i < params.d_in; ++i) gwi[i] += dz * xb[i];
        g.b_in[flat] += dz;
      }
    }
  }
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < params.d_out; ++j) g.b_out[j] += gy(b, j);

  const auto rows = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < rows; ++b) {
    auto gx = g.x.row(b);
    for (std::size_t p = 0; p < params.trees; ++p) {
      for (std::size_t level = 0; level < path_len; ++level) {
        const std::size_t flat = p * nodes + cache.mask.node(b, p, level);
        const double dz = gz(b, p * path_len + level);
        auto wi = params.w_in.row(flat);
        for (std::size_t i = 0; i < params.d_in; ++i) gx[i] += dz * wi[i];
      }
    }
  }
  return g;
}

}  // namespace

std::size_t node_level(std::size_t node) {
  return static_cast<std::size_t>(std::bit_width(node + 1)) - 1;
}

ForestParams ForestParams::zeros(std::size_t trees, std::size_t depth, std::size_t d_in,
                                 std::size_t d_out, Variant variant) {
  ForestParams f;
  f.trees = trees;
  f.depth = depth;
  f.d_in = d_in;
  f.d_out = d_out;
  f.variant = variant;
  const std::size_t n = nodes_per_tree(depth);
  f.w_in = Matrix(trees * n, d_in);
  f.b_in = Matrix(trees, n);
  f.w_out = Matrix(trees * n, d_out);
  f.b_out = Matrix(1, d_out);
  return f;
}

kernels::ForestView<double> ForestParams::view() const {
  return {trees,       depth,       d_in,         d_out,       variant == Variant::PostGelu,
          w_in.data(), b_in.data(), w_out.data(), b_out.data()};
}

void ForestParams::validate() const {
  const std::size_t n = nodes();
  if (trees == 0 || d_in == 0 || d_out == 0) throw DimensionError("forest: dims must be >= 1");
  if (depth > 30) throw DimensionError("forest: depth must be <= 30");
  if (w_in.rows() != trees * n || w_in.cols() != d_in || b_in.rows() != trees ||
      b_in.cols() != n || w_out.rows() != trees * n || w_out.cols() != d_out ||
      b_out.rows() != 1 || b_out.cols() != d_out) {
    throw DimensionError("forest: parameter shapes do not match (P, D, d_in, d_out)");
  }
}

RouteMask::RouteMask(std::size_t batch, std::size_t trees, std::size_t depth)
    : batch_(batch), trees_(trees), depth_(depth), path_(batch * trees * (depth + 1), 0) {}

bool RouteMask::active(std::size_t b, std::size_t p, std::size_t n) const {
  const std::size_t level = node_level(n);
  return level <= depth_ && node(b, p, level) == n;
}

Matrix RouteMask::dense() const {
  const std::size_t nodes = nodes_per_tree(depth_);
  Matrix m(batch_, trees_ * nodes);
  for (std::size_t b = 0; b < batch_; ++b)
    for (std::size_t p = 0; p < trees_; ++p)
      for (std::size_t level = 0; level <= depth_; ++level) m(b, p * nodes + node(b, p, level)) = 1.0;
  return m;
}

bool is_valid_route(const RouteMask& mask) {
  for (std::size_t b = 0; b < mask.batch(); ++b) {
    for (std::size_t p = 0; p < mask.trees(); ++p) {
      if (mask.node(b, p, 0) != 0) return false;
      for (std::size_t level = 1; level <= mask.depth(); ++level) {
        const std::uint32_t parent = mask.node(b, p, level - 1);
        const std::uint32_t child = mask.node(b, p, level);
        if (child != 2 * parent + 1 && child != 2 * parent + 2) return false;
      }
    }
  }
  return true;
}

ForestParams init_forest(Rng& rng, std::size_t trees, std::size_t depth, std::size_t d_in,
                         std::size_t d_out, Variant variant, InitScheme scheme) {
  if (trees == 0 || d_in == 0 || d_out == 0) {
    throw DimensionError("init_forest: trees, d_in and d_out must be >= 1");
  }
  if (depth > 30) throw DimensionError("init_forest: depth must be <= 30");
  ForestParams f = ForestParams::zeros(trees, depth, d_in, d_out, variant);
  const double std_in = 1.0 / std::sqrt(static_cast<double>(d_in));
  const double std_out = 1.0 / std::sqrt(static_cast<double>(trees * (depth + 1)));
  auto draw = [&](Matrix& m, double std) {
    if (scheme == InitScheme::ScaledGaussian) {
      for (auto& v : m.values()) v = std * rng.gaussian();
    } else {
      const double a = std * std::sqrt(3.0);
      for (auto& v : m.values()) v = rng.uniform(-a, a);
    }
  };
  draw(f.w_in, std_in);
  draw(f.w_out, std_out);
  return f;
}

Matrix all_logits(const ForestParams& params, const Matrix& x) {
  check_input(params, x);
  Matrix z = matmul_bt(x, params.w_in);
  for (std::size_t b = 0; b < z.rows(); ++b)
    for (std::size_t k = 0; k < z.cols(); ++k) z(b, k) += params.b_in[k];
  return z;
}

RouteMask compute_mask(const Matrix& logits, std::size_t trees, std::size_t depth) {
  const std::size_t nodes = nodes_per_tree(depth);
  if (logits.cols() != trees * nodes) {
    throw DimensionError("compute_mask: logits need P·N = " + std::to_string(trees * nodes) +
                         " columns");
  }
  RouteMask mask(logits.rows(), trees, depth);
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    for (std::size_t p = 0; p < trees; ++p) {
      std::uint32_t n = 0;
      for (std::size_t level = 0; level <= depth; ++level) {
        mask.node(b, p, level) = n;
        n = 2 * n + (logits(b, p * nodes + n) >= 0.0 ? 2 : 1);
      }
    }
  }
  return mask;
}

ForestOutput forward_sequential(const ForestParams& params, const Matrix& x) {
  check_input(params, x);
  const std::size_t batch = x.rows();
  const auto view = params.view();
  ForestOutput out;
  out.y = Matrix(batch, params.d_out);
  ForwardCache& c = out.cache;
  c.mode = CacheMode::Sequential;
  c.trees = params.trees;
  c.depth = params.depth;
  c.d_in = params.d_in;
  c.d_out = params.d_out;
  c.variant = params.variant;
  c.x = x;
  c.logits = Matrix(batch, view.path_len());
  c.mask = RouteMask(batch, params.trees, params.depth);
  if (params.variant == Variant::PostGelu) c.pre_activation = Matrix(batch, params.d_out);
  kernels::RowTrace<double> trace{c.mask.raw().data(), c.logits.data(),
                                  c.pre_activation.empty() ? nullptr : c.pre_activation.data()};
  kernels::sparse_forward_parallel(view, x.data(), batch, out.y.data(), trace);
  if (!out.y.all_finite()) report_non_finite(params, x, out.y);
  return out;
}

ForestOutput forward_masked(const ForestParams& params, const Matrix& x) {
  check_input(params, x);
  const std::size_t batch = x.rows();
  const std::size_t width = params.trees * params.nodes();
  ForestOutput out;
  ForwardCache& c = out.cache;
  c.mode = CacheMode::Masked;
  c.trees = params.trees;
  c.depth = params.depth;
  c.d_in = params.d_in;
  c.d_out = params.d_out;
  c.variant = params.variant;
  c.x = x;
  c.logits = all_logits(params, x);
  c.mask = compute_mask(c.logits, params.trees, params.depth);
  const Matrix mask = c.mask.dense();
  const bool pre = params.variant == Variant::PreGelu;

  Matrix& y = out.y;
  y = Matrix(batch, params.d_out);
  const auto rows = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < rows; ++b) {
    auto yb = y.row(b);
    for (std::size_t j = 0; j < params.d_out; ++j) yb[j] = params.b_out[j];
    for (std::size_t k = 0; k < width; ++k) {
      const double zv = c.logits(b, k);
      const double a = mask(b, k) * (pre ? gelu(zv) : zv);
      auto wo = params.w_out.row(k);
      for (std::size_t j = 0; j < params.d_out; ++j) yb[j] += a * wo[j];
    }
  }
  if (!pre) {
    c.pre_activation = y;
    for (auto& v : y.values()) v = gelu(v);
  }
  if (!y.all_finite()) report_non_finite(params, x, y);
  return out;
}

LayerGradients backward(const ForestParams& params, const ForwardCache& cache,
                        const Matrix& upstream) {
  check_cache(params, cache, upstream);
  return cache.mode == CacheMode::Masked ? backward_masked(params, cache, upstream)
                                         : backward_sequential(params, cache, upstream);
}

std::size_t active_node_count(const ForestParams& params) {
  return params.trees * (params.depth + 1);
}

std::size_t total_node_count(const ForestParams& params) {
  return params.trees * params.nodes();
}

std::size_t active_param_count(const ForestParams& params) {
  return active_node_count(params) * (params.d_in + 1 + params.d_out) + params.d_out;
}

std::size_t total_param_count(const ForestParams& params) {
  return total_node_count(params) * (params.d_in + 1 + params.d_out) + params.d_out;
}

}  // namespace fff
