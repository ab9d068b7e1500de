#pragma once

// Seeded training loop and evaluation for both tasks.

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fff/model.hpp"
#include "fff/routing.hpp"

namespace fff {

struct MetricsRow {
  std::size_t step = 0;
  std::string split;  ///< "train" or "eval"
  double loss = 0.0;
  double acc = 0.0;
  double ppl = 0.0;
  std::optional<double> max_path_share;  ///< eval rows of models with tree layers
  std::optional<double> dead_leaf_frac;
};

struct Evaluation {
  double loss = 0.0;  ///< mean NLL
  double acc = 0.0;
  double ppl = 0.0;
  double total_nll = 0.0;
  std::size_t count = 0;  ///< predictions scored
  std::vector<UtilizationLedger> ledgers;  ///< one per tree layer; empty under pruning
};

/// Scores the fixed evaluation split.
Evaluation evaluate(const Model& model, const TrainConfig& config, const TaskData& data,
                    const PruneSpec* prune = nullptr);

/// Utilization-derived columns: max over layers of the max path share, mean
/// over layers of the dead-leaf fraction.
void fill_routing_columns(MetricsRow& row, const std::vector<UtilizationLedger>& ledgers);

Batch sample_train_batch(const TrainConfig& config, const TaskData& data, Rng& rng);

struct StepInfo {
  std::size_t step = 0;  ///< 1-based index of the update just applied
  double loss = 0.0;
  double lr = 0.0;
  const Batch* batch = nullptr;
  const ModelCache* cache = nullptr;
  const std::vector<Matrix>* grads = nullptr;  ///< after clipping
  const Model* before = nullptr;
  const Model* after = nullptr;
};

using StepObserver = std::function<void(const StepInfo&)>;

struct TrainingRun {
  Model model;
  std::vector<MetricsRow> metrics;
  std::optional<Evaluation> final_eval;  ///< absent when steps = 0
};

/// Deterministic given the config. Throws DivergenceError on a non-finite
/// loss or logit.
TrainingRun run_training(const TrainConfig& config, const TaskData& data,
                         const StepObserver& observer = {});

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

/// Applies config.threads to the OpenMP runtime when it is nonzero.
void apply_thread_setting(const TrainConfig& config);

}  // namespace fff
