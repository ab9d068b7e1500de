#include "fff/block.hpp"

#include "fff/error.hpp"

namespace fff {

namespace {

template <class Params>
std::vector<Matrix> copy_tensors(const Params& p) {
  std::vector<Matrix> out;
  for (const Matrix* m : p.tensors()) out.push_back(*m);
  return out;
}

}  // namespace

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::Dense: return "dense";
    case BlockKind::Forest: return "fff";
    case BlockKind::MoE: return "moe";
  }
  return "?";
}

BlockKind parse_block_kind(const std::string& name) {
  if (name == "dense") return BlockKind::Dense;
  if (name == "fff") return BlockKind::Forest;
  if (name == "moe") return BlockKind::MoE;
  throw ConfigError("unknown block kind '" + name + "' (expected dense, fff or moe)");
}

FeedForward FeedForward::init(Rng& rng, const BlockSpec& s) {
  switch (s.kind) {
    case BlockKind::Dense:
      return FeedForward(init_dense(rng, s.d_in, s.d_hidden, s.d_out));
    case BlockKind::Forest:
      return FeedForward(init_forest(rng, s.trees, s.depth, s.d_in, s.d_out, s.variant));
    case BlockKind::MoE: {
      const std::size_t width =
          s.d_expert ? s.d_expert : matched_expert_width(s.d_in, s.d_hidden, s.d_out, s.experts);
      return FeedForward(init_moe(rng, s.d_in, s.experts, s.top_k, width, s.d_out));
    }
  }
  throw ConfigError("unknown block kind");
}

Matrix FeedForward::forward(const Matrix& x, BlockCache* cache) const {
  return std::visit(
      [&](const auto& p) -> Matrix {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, DenseFFParams>) {
          DenseCache c;
          Matrix y = dense_ff_forward(p, x, cache ? &c : nullptr);
          if (cache) *cache = std::move(c);
          return y;
        } else if constexpr (std::is_same_v<P, ForestParams>) {
          ForestOutput out = forward_sequential(p, x);
          if (cache) *cache = std::move(out.cache);
          return std::move(out.y);
        } else {
          MoECache c;
          Matrix y = moe_forward(p, x, cache ? &c : nullptr);
          if (cache) *cache = std::move(c);
          return y;
        }
      },
      params_);
}

BlockGradients FeedForward::backward(const BlockCache& cache, const Matrix& upstream) const {
  if (cache.index() != params_.index())
    throw std::invalid_argument("FeedForward::backward: cache is from a different block kind");
  return std::visit(
      [&](const auto& p) -> BlockGradients {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, DenseFFParams>) {
          DenseGradients g = dense_ff_backward(p, std::get<DenseCache>(cache), upstream);
          return {copy_tensors(g.params), std::move(g.x)};
        } else if constexpr (std::is_same_v<P, ForestParams>) {
          LayerGradients g = fff::backward(p, std::get<ForwardCache>(cache), upstream);
          return {{g.w_in, g.b_in, g.w_out, g.b_out}, std::move(g.x)};
        } else {
          MoEGradients g = moe_backward(p, std::get<MoECache>(cache), upstream);
          return {copy_tensors(g.params), std::move(g.x)};
        }
      },
      params_);
}

std::vector<Matrix*> FeedForward::tensors() {
  return std::visit([](auto& p) { return p.tensors(); }, params_);
}

std::vector<const Matrix*> FeedForward::tensors() const {
  return std::visit([](const auto& p) { return p.tensors(); }, params_);
}

std::size_t FeedForward::param_count() const {
  std::size_t n = 0;
  for (const Matrix* m : tensors()) n += m->size();
  return n;
}

std::size_t FeedForward::active_param_count() const {
  return std::visit(
      [](const auto& p) -> std::size_t {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, DenseFFParams>) {
          return p.param_count();
        } else if constexpr (std::is_same_v<P, ForestParams>) {
          return fff::active_param_count(p);
        } else {
          return p.router.size() + p.top_k * p.experts.front().param_count();
        }
      },
      params_);
}

}  // namespace fff
