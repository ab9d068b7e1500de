#pragma once

// The two trainable assemblies behind one type: a single feed-forward block
// classifying checkerboard points, and the tiny character LM.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fff/config.hpp"
#include "fff/pruning.hpp"
#include "fff/tasks.hpp"
#include "fff/tiny_lm.hpp"

namespace fff {

enum class TaskKind { Checkerboard, CharLM };

TaskKind task_kind(const TrainConfig& c);

/// Data shared by training and evaluation, fully determined by the config.
struct TaskData {
  TaskKind kind = TaskKind::Checkerboard;
  CheckerboardSpec spec;
  LabeledPoints eval_points;
  CharVocab vocab;
  std::vector<std::uint32_t> train_ids;
  std::vector<std::uint32_t> eval_ids;
};

TaskData make_task_data(const TrainConfig& config);

/// Checkerboard points are fed to the block as u = 2x − 1.
inline constexpr double kCheckerboardScale = 2.0;
inline constexpr double kCheckerboardShift = -1.0;
Matrix checkerboard_inputs(const Matrix& x);

struct Model {
  TaskKind kind = TaskKind::Checkerboard;
  FeedForward classifier;  ///< checkerboard: 2 → 2 logits
  TinyLM lm;

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::size_t param_count() const;

  /// The feed-forward block of every layer (one for the classifier).
  std::vector<const FeedForward*> blocks() const;

  friend bool operator==(const Model&, const Model&) = default;
};

Model init_model(const TrainConfig& config, const TaskData& data);

/// A batch of model inputs with one target per output row.
struct Batch {
  Matrix points;                       ///< checkerboard, raw coordinates
  std::vector<std::uint32_t> tokens;   ///< LM, sequences × length
  std::size_t sequences = 0;
  std::vector<std::uint32_t> targets;  ///< one per logit row
};

struct ModelCache {
  BlockCache block;  ///< checkerboard
  LMCache lm;
};

/// Optional per-layer prune masks used instead of the plain block forward.
struct PruneSpec {
  std::vector<PruneMask> masks;  ///< one per layer; layers that are not trees ignore theirs
  PruneMode mode = PruneMode::Reroute;
};

Matrix model_forward(const Model& model, const Batch& batch, ModelCache* cache = nullptr,
                     const PruneSpec* prune = nullptr);
std::vector<Matrix> model_backward(const Model& model, const ModelCache& cache,
                                   const Matrix& grad_logits);

/// Routing masks of every tree layer in a cache, in layer order.
std::vector<const RouteMask*> cached_route_masks(const Model& model, const ModelCache& cache);

/// Sliding windows of length context + 1 from `ids`, starting at `starts`.
Batch lm_batch(const std::vector<std::uint32_t>& ids, const std::vector<std::size_t>& starts,
               std::size_t context);

namespace checkpoint {

inline constexpr std::uint32_t kModelVersion = 1;

/// "FFFM", version, resolved config JSON, then the parameter records.
void write_model(std::ostream& out, const Model& model, const TrainConfig& config);
/// Returns the stored config; `model` is rebuilt from it and filled in.
TrainConfig read_model(std::istream& in, Model& model);
void save_model(const std::string& path, const Model& model, const TrainConfig& config);
TrainConfig load_model(const std::string& path, Model& model);

}  // namespace checkpoint

}  // namespace fff
