#pragma once

// Run configuration shared by every CLI verb. Serialized as one flat JSON
// object with snake_case keys.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fff/block.hpp"
#include "fff/optim.hpp"

namespace fff {

struct TrainConfig {
  std::uint64_t seed = 0;
  std::string task = "checkerboard";  ///< "checkerboard" or "lm"
  std::string block = "fff";          ///< "dense", "fff" or "moe"

  // Feed-forward block.
  std::size_t trees = 4;
  std::size_t depth = 3;
  std::string variant = "pre";  ///< "pre" or "post"
  std::size_t d_hidden = 64;
  std::size_t experts = 8;
  std::size_t top_k = 2;
  std::size_t d_expert = 0;

  // Optimization.
  std::size_t batch_size = 256;
  std::size_t steps = 2000;
  std::string optimizer = "adamw";
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::string schedule = "constant";
  std::size_t warmup_steps = 0;
  double clip_norm = 1.0;  ///< 0 disables clipping
  std::size_t eval_every = 100;
  std::size_t threads = 0;  ///< 0 keeps the OpenMP default

  // Checkerboard.
  std::size_t grid = 4;
  std::size_t eval_samples = 10000;

  // Character LM.
  std::string corpus;  ///< text file; empty selects the synthetic grammar
  std::uint64_t corpus_seed = 1;
  std::size_t corpus_chars = 40000;
  double eval_fraction = 0.1;
  std::size_t context = 32;
  std::size_t d_model = 32;
  std::size_t layers = 2;
  bool tied = false;

  // Analysis verbs.
  std::string checkpoint;  ///< empty: <out>/checkpoint.fff
  std::size_t analyze_samples = 100000;
  std::string analyze_input = "uniform";  ///< "uniform" or "data"
  std::vector<double> prune_fractions{0.0, 0.25, 0.5, 0.75, 0.9};
  std::string prune_mode = "reroute";  ///< "reroute" or "zero"
  std::vector<std::size_t> bench_depths{0, 2, 4, 6, 8, 10};
  std::size_t bench_nodes = 2048;  ///< minimum total tree nodes; P = ⌈nodes / (2^(D+1)−1)⌉
  std::size_t bench_width = 2048;
  std::size_t bench_batch = 32;
  std::size_t bench_repeats = 5;
  std::size_t bench_warmup = 1;
  bool bench_parallel = false;
  std::size_t boundary_resolution = 256;

  BlockSpec block_spec(std::size_t d_in, std::size_t d_out) const;
  OptimizerConfig optimizer_config() const;
  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Keys every config file has to set.
const std::vector<std::string>& required_config_keys();

/// Levenshtein distance, used to suggest the nearest valid key.
std::size_t edit_distance(const std::string& a, const std::string& b);

/// Applies `key=value` overrides. Values parse as JSON when possible and as a
/// plain string otherwise.
void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides);

/// Checks keys and value types against the schema, then converts.
TrainConfig config_from_json(const nlohmann::json& j, bool require_fields = true);

/// Reads a JSON file, applies overrides last, and validates.
TrainConfig parse_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace fff
