#include "fff/config.hpp"

#include <algorithm>
#include <fstream>

#include "fff/error.hpp"

namespace fff {

#define FFF_CONFIG_FIELDS(X)                                                                   \
  X(seed) X(task) X(block) X(trees) X(depth) X(variant) X(d_hidden) X(experts) X(top_k)       \
  X(d_expert) X(batch_size) X(steps) X(optimizer) X(lr) X(beta1) X(beta2) X(eps)              \
  X(weight_decay) X(schedule) X(warmup_steps) X(clip_norm) X(eval_every) X(threads) X(grid)   \
  X(eval_samples) X(corpus) X(corpus_seed) X(corpus_chars) X(eval_fraction) X(context)        \
  X(d_model) X(layers) X(tied) X(checkpoint) X(analyze_samples) X(analyze_input)              \
  X(prune_fractions) X(prune_mode) X(bench_depths) X(bench_nodes) X(bench_width)              \
  X(bench_batch) X(bench_repeats) X(bench_warmup) X(bench_parallel) X(boundary_resolution)

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json::object();
#define X(name) j[#name] = c.name;
  FFF_CONFIG_FIELDS(X)
#undef X
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
#define X(name) \
  if (j.contains(#name)) j.at(#name).get_to(c.name);
  FFF_CONFIG_FIELDS(X)
#undef X
}

#undef FFF_CONFIG_FIELDS

const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys{"task", "block"};
  return keys;
}

BlockSpec TrainConfig::block_spec(std::size_t d_in, std::size_t d_out) const {
  BlockSpec s;
  s.kind = parse_block_kind(block);
  s.d_in = d_in;
  s.d_out = d_out;
  s.d_hidden = d_hidden;
  s.trees = trees;
  s.depth = depth;
  if (variant == "pre")
    s.variant = Variant::PreGelu;
  else if (variant == "post")
    s.variant = Variant::PostGelu;
  else
    throw ConfigError("variant: expected \"pre\" or \"post\", got \"" + variant + "\"");
  s.experts = experts;
  s.top_k = top_k;
  s.d_expert = d_expert;
  return s;
}

OptimizerConfig TrainConfig::optimizer_config() const {
  return {parse_optimizer(optimizer), lr, beta1, beta2, eps, weight_decay};
}

void TrainConfig::validate() const {
  const auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (task != "checkerboard" && task != "lm")
    fail("task: expected \"checkerboard\" or \"lm\", got \"" + task + "\"");
  block_spec(1, 1);
  optimizer_config();
  parse_schedule(schedule);
  if (trees == 0) fail("trees: must be at least 1");
  if (depth > 20) fail("depth: must be at most 20");
  if (d_hidden == 0) fail("d_hidden: must be at least 1");
  if (top_k == 0 || top_k > experts) fail("top_k: must lie in [1, experts]");
  if (batch_size == 0) fail("batch_size: must be at least 1");
  if (!(lr >= 0)) fail("lr: must be nonnegative");
  if (!(clip_norm >= 0)) fail("clip_norm: must be nonnegative");
  if (eval_every == 0) fail("eval_every: must be at least 1");
  if (grid == 0) fail("grid: must be at least 1");
  if (eval_samples == 0) fail("eval_samples: must be at least 1");
  if (!(eval_fraction > 0 && eval_fraction < 1)) fail("eval_fraction: must lie in (0, 1)");
  if (context == 0 || d_model == 0) fail("context and d_model: must be at least 1");
  if (analyze_input != "uniform" && analyze_input != "data")
    fail("analyze_input: expected \"uniform\" or \"data\"");
  if (prune_mode != "reroute" && prune_mode != "zero")
    fail("prune_mode: expected \"reroute\" or \"zero\"");
  for (double f : prune_fractions)
    if (!(f >= 0 && f < 1)) fail("prune_fractions: every entry must lie in [0, 1)");
  if (bench_repeats == 0) fail("bench_repeats: must be at least 1");
  if (boundary_resolution == 0) fail("boundary_resolution: must be at least 1");
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override '" + o + "' is not of the form key=value");
    const std::string key = o.substr(0, eq), value = o.substr(eq + 1);
    auto parsed = nlohmann::json::parse(value, nullptr, false);
    j[key] = parsed.is_discarded() ? nlohmann::json(value) : std::move(parsed);
  }
}

namespace {

const char* type_name(const nlohmann::json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_unsigned()) return "nonnegative integer";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  return v.type_name();
}

bool compatible(const nlohmann::json& want, const nlohmann::json& got) {
  if (want.is_boolean()) return got.is_boolean();
  if (want.is_number_unsigned())
    return got.is_number_unsigned() || (got.is_number_integer() && got.get<std::int64_t>() >= 0);
  if (want.is_number_float()) return got.is_number();
  if (want.is_string()) return got.is_string();
  if (want.is_array()) {
    if (!got.is_array()) return false;
    if (want.empty()) return true;
    for (const auto& e : got)
      if (!compatible(want.front(), e)) return false;
    return true;
  }
  return want.type() == got.type();
}

}  // namespace

TrainConfig config_from_json(const nlohmann::json& j, bool require_fields) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const nlohmann::json schema = TrainConfig{};
  for (const auto& [key, value] : j.items()) {
    if (!schema.contains(key)) {
      std::string nearest;
      std::size_t best = SIZE_MAX;
      for (const auto& [k, _] : schema.items()) {
        const std::size_t d = edit_distance(key, k);
        if (d < best) best = d, nearest = k;
      }
      throw ConfigError("unknown config key \"" + key + "\" (did you mean \"" + nearest + "\"?)");
    }
    const auto& want = schema.at(key);
    if (!compatible(want, value))
      throw ConfigError("config key \"" + key + "\" expects a " + type_name(want) + ", got " +
                        value.dump());
  }
  if (require_fields)
    for (const auto& k : required_config_keys())
      if (!j.contains(k)) throw ConfigError("missing required config key \"" + k + "\"");
  TrainConfig c = j.get<TrainConfig>();
  c.validate();
  return c;
}

TrainConfig parse_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  apply_overrides(j, overrides);
  return config_from_json(j);
}

}  // namespace fff
