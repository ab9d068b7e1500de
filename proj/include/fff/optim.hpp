#pragma once

// First-order optimizers over a flat list of parameter tensors.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fff/numeric.hpp"

namespace fff {

enum class OptimizerKind { Sgd, AdamW };

OptimizerKind parse_optimizer(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdamW;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  OptimizerConfig config;
  std::vector<Matrix> m;  ///< first moments, AdamW only
  std::vector<Matrix> v;  ///< second moments, AdamW only
  std::uint64_t step = 0;
};

OptimizerState make_optimizer_state(const OptimizerConfig& config,
                                    std::span<const Matrix* const> params);

/// p ← p − lr·g.
void sgd_step(std::span<Matrix* const> params, std::span<const Matrix> grads, double lr);

/// Adam with bias correction and decoupled weight decay:
/// p ← p − lr·wd·p, then p ← p − lr·m̂/(√v̂ + eps).
void adamw_step(std::span<Matrix* const> params, std::span<const Matrix> grads,
                OptimizerState& state, double lr);

/// Dispatches on state.config.kind.
void optimizer_step(std::span<Matrix* const> params, std::span<const Matrix> grads,
                    OptimizerState& state, double lr);

double global_grad_norm(std::span<const Matrix> grads);

/// Rescales grads so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(std::span<Matrix> grads, double max_norm);

enum class Schedule { Constant, Cosine };

Schedule parse_schedule(const std::string& name);

/// Linear warm-up over `warmup` steps, then constant or cosine decay to zero
/// at `total` steps.
double learning_rate_at(Schedule schedule, double base_lr, std::uint64_t step,
                        std::uint64_t total, std::uint64_t warmup);

}  // namespace fff
