#pragma once

// Inference kernels for the tree layer and the dense baseline.
//
// Each kernel exists twice: a serial reference and an OpenMP version that
// splits the batch across threads. Rows are independent and every per-row
// accumulation runs in the same order in both versions, so their outputs are
// bitwise identical. The kernels are templated on the scalar type so the
// benchmark can run them in single precision.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>

namespace fff::kernels {

template <typename Real>
inline Real gelu_of(Real z) {
  return z * (Real(0.5) * std::erfc(-z / std::numbers::sqrt2_v<Real>));
}

template <typename Real>
struct ForestView {
  std::size_t trees = 0;
  std::size_t depth = 0;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  bool post_gelu = false;
  const Real* w_in = nullptr;   // (trees·nodes) × d_in
  const Real* b_in = nullptr;   // trees·nodes
  const Real* w_out = nullptr;  // (trees·nodes) × d_out
  const Real* b_out = nullptr;  // d_out

  std::size_t nodes() const noexcept { return (std::size_t{2} << depth) - 1; }
  std::size_t path_len() const noexcept { return trees * (depth + 1); }
  /// Multiply-adds of one sample, counted as two FLOPs each.
  std::uint64_t flops_per_row() const noexcept {
    return 2ULL * trees * (depth + 1) * (d_in + d_out);
  }
};

/// Optional per-row side outputs. Any pointer may be null.
///   path:    trees·(depth+1) visited flat node indices (within the tree)
///   visited: trees·(depth+1) visited logits
///   pre:     d_out pre-activation (post-GELU variant only)
template <typename Real>
struct RowTrace {
  std::uint32_t* path = nullptr;
  Real* visited = nullptr;
  Real* pre = nullptr;
};

/// Hard-routed traversal of one sample: exactly depth+1 nodes per tree.
/// Node n at level l goes to 2n+2 when its logit is >= 0, else to 2n+1.
template <typename Real>
inline void sparse_forward_row(const ForestView<Real>& f, const Real* x, Real* y,
                               RowTrace<Real> trace = {}, std::uint64_t* flops = nullptr) {
  const std::size_t nodes = f.nodes();
  for (std::size_t j = 0; j < f.d_out; ++j) y[j] = f.b_out[j];
  for (std::size_t p = 0; p < f.trees; ++p) {
    std::size_t n = 0;
    for (std::size_t level = 0; level <= f.depth; ++level) {
      const std::size_t flat = p * nodes + n;
      const Real* w = f.w_in + flat * f.d_in;
      Real s = 0;
      for (std::size_t i = 0; i < f.d_in; ++i) s += x[i] * w[i];
      const Real z = s + f.b_in[flat];
      const Real g = f.post_gelu ? z : gelu_of(z);
      const Real* wo = f.w_out + flat * f.d_out;
      for (std::size_t j = 0; j < f.d_out; ++j) y[j] += g * wo[j];
      if (flops) *flops += 2 * (f.d_in + f.d_out);
      const std::size_t k = p * (f.depth + 1) + level;
      if (trace.path) trace.path[k] = static_cast<std::uint32_t>(n);
      if (trace.visited) trace.visited[k] = z;
      n = 2 * n + (z >= Real(0) ? 2 : 1);
    }
  }
  if (f.post_gelu) {
    for (std::size_t j = 0; j < f.d_out; ++j) {
      if (trace.pre) trace.pre[j] = y[j];
      y[j] = gelu_of(y[j]);
    }
  }
}

template <typename Real>
void sparse_forward_serial(const ForestView<Real>& f, const Real* x, std::size_t batch, Real* y,
                           RowTrace<Real> trace = {}, std::uint64_t* flops = nullptr) {
  for (std::size_t b = 0; b < batch; ++b) {
    RowTrace<Real> t{trace.path ? trace.path + b * f.path_len() : nullptr,
                     trace.visited ? trace.visited + b * f.path_len() : nullptr,
                     trace.pre ? trace.pre + b * f.d_out : nullptr};
    sparse_forward_row(f, x + b * f.d_in, y + b * f.d_out, t, flops);
  }
}

template <typename Real>
void sparse_forward_parallel(const ForestView<Real>& f, const Real* x, std::size_t batch, Real* y,
                             RowTrace<Real> trace = {}, std::uint64_t* flops = nullptr) {
  const auto rows = static_cast<std::ptrdiff_t>(batch);
  std::uint64_t executed = 0;
#pragma omp parallel for schedule(static) reduction(+ : executed)
  for (std::ptrdiff_t b = 0; b < rows; ++b) {
    RowTrace<Real> t{trace.path ? trace.path + b * f.path_len() : nullptr,
                     trace.visited ? trace.visited + b * f.path_len() : nullptr,
                     trace.pre ? trace.pre + b * f.d_out : nullptr};
    sparse_forward_row(f, x + b * f.d_in, y + b * f.d_out, t, flops ? &executed : nullptr);
  }
  if (flops) *flops += executed;
}

template <typename Real>
struct DenseView {
  std::size_t d_in = 0;
  std::size_t d_hidden = 0;
  std::size_t d_out = 0;
  const Real* w1 = nullptr;  // d_in × d_hidden
  const Real* b1 = nullptr;
  const Real* w2 = nullptr;  // d_hidden × d_out
  const Real* b2 = nullptr;

  std::uint64_t flops_per_row() const noexcept {
    return 2ULL * (d_in * d_hidden + d_hidden * d_out);
  }
};

/// y = GELU(x·W1 + b1)·W2 + b2 for one sample. `hidden` is scratch of
/// length d_hidden and holds the post-GELU activations on return.
template <typename Real>
inline void dense_forward_row(const DenseView<Real>& f, const Real* x, Real* y, Real* hidden) {
  for (std::size_t h = 0; h < f.d_hidden; ++h) hidden[h] = f.b1[h];
  for (std::size_t i = 0; i < f.d_in; ++i) {
    const Real xi = x[i];
    const Real* w = f.w1 + i * f.d_hidden;
    for (std::size_t h = 0; h < f.d_hidden; ++h) hidden[h] += xi * w[h];
  }
  for (std::size_t h = 0; h < f.d_hidden; ++h) hidden[h] = gelu_of(hidden[h]);
  for (std::size_t j = 0; j < f.d_out; ++j) y[j] = f.b2[j];
  for (std::size_t h = 0; h < f.d_hidden; ++h) {
    const Real a = hidden[h];
    const Real* w = f.w2 + h * f.d_out;
    for (std::size_t j = 0; j < f.d_out; ++j) y[j] += a * w[j];
  }
}

/// `hidden` is batch × d_hidden scratch.
template <typename Real>
void dense_forward_serial(const DenseView<Real>& f, const Real* x, std::size_t batch, Real* y,
                          Real* hidden) {
  for (std::size_t b = 0; b < batch; ++b)
    dense_forward_row(f, x + b * f.d_in, y + b * f.d_out, hidden + b * f.d_hidden);
}

template <typename Real>
void dense_forward_parallel(const DenseView<Real>& f, const Real* x, std::size_t batch, Real* y,
                            Real* hidden) {
  const auto rows = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < rows; ++b)
    dense_forward_row(f, x + b * f.d_in, y + b * f.d_out, hidden + b * f.d_hidden);
}

}  // namespace fff::kernels
