#pragma once

// Small pre-norm decoder-only transformer for character-level next-token
// prediction. Single-head causal attention, no dropout. The feed-forward
// sublayer of every block is a FeedForward of any kind.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fff/block.hpp"

namespace fff {

struct TinyLMConfig {
  std::size_t vocab = 0;
  std::size_t context = 32;  ///< maximum sequence length T
  std::size_t d_model = 32;
  std::size_t layers = 2;
  BlockSpec ff;  ///< d_in and d_out are forced to d_model
  bool tied = false;  ///< reuse the token embedding as the output projection
};

struct TinyLMLayer {
  Matrix ln1_gain, ln1_bias;  // 1 × d
  Matrix wq, wk, wv, wo;      // d × d
  Matrix ln2_gain, ln2_bias;
  FeedForward ff;

  friend bool operator==(const TinyLMLayer&, const TinyLMLayer&) = default;
};

struct TinyLM {
  TinyLMConfig config;
  Matrix tok_emb;  // V × d
  Matrix pos_emb;  // T × d
  std::vector<TinyLMLayer> layers;
  Matrix lnf_gain, lnf_bias;
  Matrix head;  // d × V, empty when tied

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::size_t param_count() const;
  /// Counts every embedding and attention weight plus the feed-forward
  /// parameters one token touches.
  std::size_t active_param_count() const;

  friend bool operator==(const TinyLM& a, const TinyLM& b) {
    return a.tok_emb == b.tok_emb && a.pos_emb == b.pos_emb && a.layers == b.layers &&
           a.lnf_gain == b.lnf_gain && a.lnf_bias == b.lnf_bias && a.head == b.head;
  }
};

TinyLM init_tiny_lm(Rng& rng, const TinyLMConfig& config);

struct LayerNormCache {
  Matrix xhat;
  std::vector<double> rstd;
};

struct TinyLMLayerCache {
  Matrix x;  // block input (residual stream)
  LayerNormCache ln1;
  Matrix a, q, k, v;
  std::vector<Matrix> probs;  // per sequence, t × t, zero above the diagonal
  Matrix o;
  LayerNormCache ln2;
  Matrix f_in;
  BlockCache ff;
};

struct LMCache {
  std::size_t batch = 0, length = 0;
  std::vector<std::uint32_t> tokens;
  std::vector<TinyLMLayerCache> layers;
  LayerNormCache lnf;
  Matrix h;  // final normalized stream
};

/// Replaces the feed-forward call of one layer (used for pruned evaluation).
using FeedForwardHook =
    std::function<Matrix(std::size_t layer, const FeedForward& ff, const Matrix& x)>;

/// `tokens` holds `batch` sequences of equal length, concatenated. Returns
/// (batch·length) × V next-token logits, row b·length + t for position t.
Matrix lm_forward(const TinyLM& model, std::span<const std::uint32_t> tokens, std::size_t batch,
                  LMCache* cache = nullptr, const FeedForwardHook& hook = {});

/// Gradients aligned with model.tensors().
std::vector<Matrix> lm_backward(const TinyLM& model, const LMCache& cache,
                                const Matrix& grad_logits);

}  // namespace fff
