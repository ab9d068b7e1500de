#pragma once

// Comparison blocks: the dense feed-forward block and a top-k mixture of
// experts built from dense experts.

#include <cstddef>
#include <vector>

#include "fff/kernels.hpp"
#include "fff/numeric.hpp"

namespace fff {

struct DenseFFParams {
  Matrix w1;  ///< d_in × d_hidden
  Matrix b1;  ///< 1 × d_hidden
  Matrix w2;  ///< d_hidden × d_out
  Matrix b2;  ///< 1 × d_out

  std::size_t d_in() const noexcept { return w1.rows(); }
  std::size_t d_hidden() const noexcept { return w1.cols(); }
  std::size_t d_out() const noexcept { return w2.cols(); }

  static DenseFFParams zeros(std::size_t d_in, std::size_t d_hidden, std::size_t d_out);
  std::vector<Matrix*> tensors() { return {&w1, &b1, &w2, &b2}; }
  std::vector<const Matrix*> tensors() const { return {&w1, &b1, &w2, &b2}; }
  std::size_t param_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
  kernels::DenseView<double> view() const;
  void validate() const;

  friend bool operator==(const DenseFFParams&, const DenseFFParams&) = default;
};

struct DenseCache {
  Matrix x;
  Matrix pre;     ///< B × d_hidden before GELU
  Matrix hidden;  ///< B × d_hidden after GELU
};

struct DenseGradients {
  DenseFFParams params;  ///< gradients, same layout as the parameters
  Matrix x;
};

/// Gaussian init: w1 ~ N(0, 1/d_in), w2 ~ N(0, 1/d_hidden), zero biases.
DenseFFParams init_dense(Rng& rng, std::size_t d_in, std::size_t d_hidden, std::size_t d_out);
Matrix dense_ff_forward(const DenseFFParams& params, const Matrix& x, DenseCache* cache = nullptr);
DenseGradients dense_ff_backward(const DenseFFParams& params, const DenseCache& cache,
                                 const Matrix& upstream);

struct MoEParams {
  std::size_t top_k = 1;
  Matrix router;  ///< d_in × E, no bias
  std::vector<DenseFFParams> experts;

  std::size_t num_experts() const noexcept { return experts.size(); }
  std::size_t d_in() const noexcept { return router.rows(); }
  std::size_t d_out() const noexcept { return experts.empty() ? 0 : experts.front().d_out(); }
  std::size_t d_expert() const noexcept {
    return experts.empty() ? 0 : experts.front().d_hidden();
  }

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::size_t param_count() const;
  void validate() const;

  friend bool operator==(const MoEParams&, const MoEParams&) = default;
};

struct MoECache {
  Matrix x;
  Matrix logits;                           ///< B × E router logits
  std::vector<std::size_t> selected;       ///< B × k expert ids, best first
  std::vector<double> weights;             ///< B × k combination weights
  std::vector<std::vector<std::size_t>> rows;  ///< per expert: (sample, slot) pairs flattened
  std::vector<DenseCache> expert_caches;
  std::vector<Matrix> expert_outputs;      ///< per expert: outputs for its rows
};

struct MoEGradients {
  MoEParams params;
  Matrix x;
};

/// Indices of the k largest logits, largest first; ties go to the lower index.
std::vector<std::size_t> top_k_indices(std::span<const double> logits, std::size_t k);

MoEParams init_moe(Rng& rng, std::size_t d_in, std::size_t num_experts, std::size_t top_k,
                   std::size_t d_expert, std::size_t d_out);
Matrix moe_forward(const MoEParams& params, const Matrix& x, MoECache* cache = nullptr);
/// Expert selection is held constant; gradients reach the router through the
/// softmax weights of the selected experts.
MoEGradients moe_backward(const MoEParams& params, const MoECache& cache, const Matrix& upstream);

/// E = round(k / (1 − target_sparsity)).
std::size_t match_sparsity(double target_sparsity, std::size_t top_k);
/// Expert hidden width whose total MoE parameter count is closest to a dense
/// block of width d_hidden.
std::size_t matched_expert_width(std::size_t d_in, std::size_t d_hidden, std::size_t d_out,
                                 std::size_t num_experts);
std::size_t dense_param_count(std::size_t d_in, std::size_t d_hidden, std::size_t d_out);
std::size_t moe_param_count(std::size_t d_in, std::size_t num_experts, std::size_t d_expert,
                            std::size_t d_out);

}  // namespace fff
