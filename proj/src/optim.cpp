#include "fff/optim.hpp"

#include <cmath>
#include <numbers>

#include "fff/error.hpp"

namespace fff {

namespace {

void check_shapes(std::span<Matrix* const> params, std::span<const Matrix> grads) {
  if (params.size() != grads.size())
    throw DimensionError("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!params[i]->same_shape(grads[i]))
      throw DimensionError("optimizer: gradient " + std::to_string(i) + " has shape " +
                           std::to_string(grads[i].rows()) + "x" +
                           std::to_string(grads[i].cols()) + ", parameter has " +
                           std::to_string(params[i]->rows()) + "x" +
                           std::to_string(params[i]->cols()));
}

}  // namespace

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adamw") return OptimizerKind::AdamW;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adamw)");
}

Schedule parse_schedule(const std::string& name) {
  if (name == "constant") return Schedule::Constant;
  if (name == "cosine") return Schedule::Cosine;
  throw ConfigError("unknown schedule '" + name + "' (expected constant or cosine)");
}

OptimizerState make_optimizer_state(const OptimizerConfig& config,
                                    std::span<const Matrix* const> params) {
  OptimizerState s;
  s.config = config;
  if (config.kind == OptimizerKind::AdamW) {
    for (const Matrix* p : params) {
      s.m.emplace_back(p->rows(), p->cols());
      s.v.emplace_back(p->rows(), p->cols());
    }
  }
  return s;
}

void sgd_step(std::span<Matrix* const> params, std::span<const Matrix> grads, double lr) {
  check_shapes(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * grads[i][j];
  }
}

void adamw_step(std::span<Matrix* const> params, std::span<const Matrix> grads,
                OptimizerState& state, double lr) {
  check_shapes(params, grads);
  if (state.m.size() != params.size())
    throw DimensionError("adamw_step: optimizer state tracks " + std::to_string(state.m.size()) +
                         " tensors, got " + std::to_string(params.size()));
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    if (!m.same_shape(p)) throw DimensionError("adamw_step: moment shape mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = grads[i][j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * c.weight_decay * p[j];
      p[j] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

void optimizer_step(std::span<Matrix* const> params, std::span<const Matrix> grads,
                    OptimizerState& state, double lr) {
  if (state.config.kind == OptimizerKind::Sgd) {
    sgd_step(params, grads, lr);
    ++state.step;
  } else {
    adamw_step(params, grads, state, lr);
  }
}

double global_grad_norm(std::span<const Matrix> grads) {
  double s = 0.0;
  for (const Matrix& g : grads) s += frobenius_norm_sq(g);
  return std::sqrt(s);
}

double clip_grad_norm(std::span<Matrix> grads, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  const double norm = global_grad_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Matrix& g : grads) scale_inplace(g, s);
  }
  return norm;
}

double learning_rate_at(Schedule schedule, double base_lr, std::uint64_t step,
                        std::uint64_t total, std::uint64_t warmup) {
  if (warmup > 0 && step < warmup)
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (schedule == Schedule::Constant || total <= warmup) return base_lr;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

}  // namespace fff
