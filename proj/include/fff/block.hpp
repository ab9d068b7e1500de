#pragma once

// Type-erased feed-forward block used by the model assemblies: dense FF,
// tree layer (either variant) or top-k MoE behind one interface.

#include <string>
#include <variant>
#include <vector>

#include "fff/baselines.hpp"
#include "fff/forest.hpp"

namespace fff {

enum class BlockKind { Dense, Forest, MoE };

std::string to_string(BlockKind kind);
BlockKind parse_block_kind(const std::string& name);

struct BlockSpec {
  BlockKind kind = BlockKind::Forest;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  // dense
  std::size_t d_hidden = 64;
  // forest
  std::size_t trees = 1;
  std::size_t depth = 3;
  Variant variant = Variant::PreGelu;
  // moe
  std::size_t experts = 8;
  std::size_t top_k = 2;
  std::size_t d_expert = 0;  ///< 0: sized to match the dense block's parameter count
};

using BlockCache = std::variant<DenseCache, ForwardCache, MoECache>;

struct BlockGradients {
  std::vector<Matrix> params;  ///< aligned with FeedForward::tensors()
  Matrix x;
};

class FeedForward {
 public:
  FeedForward() = default;
  explicit FeedForward(DenseFFParams p) : params_(std::move(p)) {}
  explicit FeedForward(ForestParams p) : params_(std::move(p)) {}
  explicit FeedForward(MoEParams p) : params_(std::move(p)) {}

  static FeedForward init(Rng& rng, const BlockSpec& spec);

  BlockKind kind() const noexcept { return static_cast<BlockKind>(params_.index()); }
  Matrix forward(const Matrix& x, BlockCache* cache = nullptr) const;
  BlockGradients backward(const BlockCache& cache, const Matrix& upstream) const;

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::size_t param_count() const;
  /// Parameters touched per input.
  std::size_t active_param_count() const;

  const ForestParams* forest() const { return std::get_if<ForestParams>(&params_); }
  ForestParams* forest() { return std::get_if<ForestParams>(&params_); }
  const DenseFFParams* dense() const { return std::get_if<DenseFFParams>(&params_); }
  const MoEParams* moe() const { return std::get_if<MoEParams>(&params_); }

  friend bool operator==(const FeedForward&, const FeedForward&) = default;

 private:
  std::variant<DenseFFParams, ForestParams, MoEParams> params_;
};

}  // namespace fff
