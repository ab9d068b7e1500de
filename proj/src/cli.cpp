#include "fff/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fff/boundaries.hpp"
#include "fff/error.hpp"
#include "fff/seeds.hpp"
#include "fff/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fff {

namespace {

struct Options {
  std::string verb;
  std::string config_path;
  std::string out_dir = "run/default";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  return f;
}

void write_json(const fs::path& p, const json& j) { open_out(p) << j.dump(2) << '\n'; }

std::vector<std::string> all_overrides(const Options& o) {
  auto v = o.overrides;
  if (o.seed) v.push_back("seed=" + std::to_string(*o.seed));
  return v;
}

TrainConfig load_config(const Options& o) {
  if (!o.config_path.empty()) return parse_config(o.config_path, all_overrides(o));
  const fs::path resolved = fs::path(o.out_dir) / "resolved.json";
  if (fs::exists(resolved)) return parse_config(resolved.string(), all_overrides(o));
  throw ConfigError("no --config given and no resolved.json in '" + o.out_dir + "'");
}

fs::path checkpoint_path(const TrainConfig& c, const Options& o) {
  return c.checkpoint.empty() ? fs::path(o.out_dir) / "checkpoint.fff" : fs::path(c.checkpoint);
}

json utilization_json(const std::vector<UtilizationLedger>& ledgers) {
  json layers = json::array();
  for (const auto& l : ledgers) {
    std::ostringstream ss;
    write_utilization_json(ss, l);
    layers.push_back(json::parse(ss.str()));
  }
  return {{"layers", layers}};
}

json eval_json(const Evaluation& ev) {
  MetricsRow row;
  fill_routing_columns(row, ev.ledgers);
  json j{{"loss", ev.loss}, {"acc", ev.acc}, {"ppl", ev.ppl}, {"count", ev.count}};
  if (row.max_path_share) j["max_path_share"] = *row.max_path_share;
  if (row.dead_leaf_frac) j["dead_leaf_frac"] = *row.dead_leaf_frac;
  return j;
}

double attention_flops_per_token(const TrainConfig& c) {
  const double d = static_cast<double>(c.d_model), t = static_cast<double>(c.context);
  return 8.0 * d * d + 4.0 * t * d;
}

json sparsity_json(const SparsityReport& r) {
  return {{"depth", r.depth},
          {"trees", r.trees},
          {"d_model", r.d_model},
          {"d_ff_dense", r.d_ff_dense},
          {"mlp_block_sparsity", r.mlp_block_sparsity},
          {"fff_flops_per_token", r.fff_flops},
          {"dense_flops_per_token", r.dense_flops},
          {"attention_flops_per_token", r.attention_flops},
          {"layer_relative_flops", r.layer_relative_flops},
          {"model_relative_flops", r.model_relative_flops},
          {"overall_model_sparsity", r.overall_model_sparsity}};
}

json model_json(const Model& m, const TrainConfig& c) {
  json j{{"param_count", m.param_count()}};
  std::size_t active = 0;
  if (m.kind == TaskKind::CharLM) {
    active = m.lm.active_param_count();
  } else {
    active = m.classifier.active_param_count();
  }
  j["active_param_count"] = active;
  if (c.block == "fff") {
    const std::size_t d = m.kind == TaskKind::CharLM ? c.d_model : 2;
    j["sparsity"] = sparsity_json(sparsity_report(
        c.trees, c.depth, d, c.trees * nodes_per_tree(c.depth),
        m.kind == TaskKind::CharLM ? attention_flops_per_token(c) : 0.0));
  }
  return j;
}

int cmd_train(const Options& o, std::ostream& out) {
  const TrainConfig cfg = load_config(o);
  const TaskData data = make_task_data(cfg);
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  write_json(dir / "resolved.json", json(cfg));
  TrainingRun run = run_training(cfg, data);
  checkpoint::save_model((dir / "checkpoint.fff").string(), run.model, cfg);
  {
    auto f = open_out(dir / "metrics.csv");
    write_metrics_csv(f, run.metrics);
  }
  const Evaluation ev = run.final_eval ? *run.final_eval : evaluate(run.model, cfg, data);
  write_json(dir / "utilization.json", utilization_json(ev.ledgers));
  json report = model_json(run.model, cfg);
  report["steps"] = cfg.steps;
  report["final_eval"] = eval_json(ev);
  write_json(dir / "report.json", report);
  char buf[128];
  std::snprintf(buf, sizeof buf, "eval loss %.17g acc %.6f ppl %.6f\n", ev.loss, ev.acc, ev.ppl);
  out << "trained " << cfg.steps << " steps -> " << dir.string() << '\n' << buf;
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  TrainConfig cfg = load_config(o);
  Model model;
  const TrainConfig stored = checkpoint::load_model(checkpoint_path(cfg, o).string(), model);
  if (stored.task != cfg.task || stored.block != cfg.block)
    throw ConfigError("checkpoint was trained with task/block " + stored.task + "/" +
                      stored.block + ", config says " + cfg.task + "/" + cfg.block);
  const TaskData data = make_task_data(cfg);
  const Evaluation ev = evaluate(model, cfg, data);
  fs::create_directories(o.out_dir);
  write_json(fs::path(o.out_dir) / "eval.json", eval_json(ev));
  char buf[128];
  std::snprintf(buf, sizeof buf, "eval loss %.17g acc %.6f ppl %.6f\n", ev.loss, ev.acc, ev.ppl);
  out << buf;
  return 0;
}

Model load_or_init(const TrainConfig& cfg, const Options& o, const TaskData& data, bool& loaded) {
  Model model;
  const fs::path ck = checkpoint_path(cfg, o);
  loaded = fs::exists(ck);
  if (loaded)
    checkpoint::load_model(ck.string(), model);
  else
    model = init_model(cfg, data);
  return model;
}

// Ledger of the first tree layer over uniform inputs in [-1, 1]^d_in.
UtilizationLedger uniform_input_ledger(const ForestParams& f, std::size_t samples, Rng& rng) {
  UtilizationLedger ledger(f.trees, f.depth);
  constexpr std::size_t chunk = 8192;
  for (std::size_t done = 0; done < samples; done += chunk) {
    const std::size_t n = std::min(chunk, samples - done);
    const Matrix x = uniform_matrix(rng, n, f.d_in, -1.0, 1.0);
    ledger.record_batch(forward_sequential(f, x).cache.mask);
  }
  return ledger;
}

int cmd_analyze(const Options& o, std::ostream& out) {
  const TrainConfig cfg = load_config(o);
  const TaskData data = make_task_data(cfg);
  bool loaded = false;
  const Model model = load_or_init(cfg, o, data, loaded);
  std::vector<UtilizationLedger> ledgers;
  if (cfg.analyze_input == "uniform") {
    Rng rng(derive_seed(cfg.seed, SeedStream::Analysis));
    for (const FeedForward* b : model.blocks())
      if (const ForestParams* f = b->forest()) {
        ledgers.push_back(uniform_input_ledger(*f, cfg.analyze_samples, rng));
        break;
      }
  } else {
    ledgers = evaluate(model, cfg, data).ledgers;
  }
  if (ledgers.empty()) throw ConfigError("analyze: the model has no tree layers");
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  write_json(dir / "utilization.json", utilization_json(ledgers));
  {
    auto f = open_out(dir / "histogram.csv");
    for (std::size_t i = 0; i < ledgers.size(); ++i) {
      if (i) f << '\n';
      write_histogram_csv(f, ledgers[i]);
    }
  }
  json layers = json::array();
  for (const auto& l : ledgers) {
    const std::vector<double> uniform(leaves_per_tree(l.depth()), 1.0);
    const TreePrior flat = build_tree_prior(uniform);
    const TreePrior pareto = build_tree_prior(pareto_leaf_distribution(l.depth(), 2.0));
    layers.push_back({{"max_path_share", max_path_share(l)},
                      {"uniform_share", std::ldexp(1.0, -static_cast<int>(l.depth()))},
                      {"dead_leaf_frac", dead_leaf_fraction(l)},
                      {"tv_uniform_prior", prior_distance(l, flat, PriorAlignment::RankMatched)},
                      {"tv_pareto_prior", prior_distance(l, pareto, PriorAlignment::RankMatched)},
                      {"total", l.total()}});
  }
  write_json(dir / "report.json", {{"source", loaded ? "checkpoint" : "initialization"},
                                   {"input", cfg.analyze_input},
                                   {"layers", layers}});
  out << "analyzed " << (loaded ? "checkpoint" : "fresh model") << ": max path share "
      << layers.front()["max_path_share"].get<double>() << ", dead leaf fraction "
      << layers.front()["dead_leaf_frac"].get<double>() << '\n';
  return 0;
}

// Ledgers over training-distribution inputs, used to pick what to prune.
std::vector<UtilizationLedger> training_ledgers(const Model& model, const TrainConfig& cfg,
                                                const TaskData& data) {
  Rng rng(derive_seed(cfg.seed, SeedStream::Analysis));
  std::vector<UtilizationLedger> ledgers;
  for (const FeedForward* b : model.blocks())
    if (const ForestParams* f = b->forest()) ledgers.emplace_back(f->trees, f->depth);
  std::size_t seen = 0;
  while (seen < cfg.analyze_samples) {
    const Batch batch = sample_train_batch(cfg, data, rng);
    ModelCache cache;
    model_forward(model, batch, &cache);
    const auto masks = cached_route_masks(model, cache);
    for (std::size_t i = 0; i < masks.size(); ++i) ledgers[i].record_batch(*masks[i]);
    seen += batch.targets.size();
  }
  return ledgers;
}

int cmd_prune(const Options& o, std::ostream& out) {
  const TrainConfig cfg = load_config(o);
  const TaskData data = make_task_data(cfg);
  Model model;
  checkpoint::load_model(checkpoint_path(cfg, o).string(), model);
  const auto ledgers = training_ledgers(model, cfg, data);
  if (ledgers.empty()) throw ConfigError("prune: the model has no tree layers");
  const PruneMode mode = cfg.prune_mode == "zero" ? PruneMode::ZeroContribution : PruneMode::Reroute;
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  auto csv = open_out(dir / "prune.csv");
  csv << "fraction,disabled_leaves,loss,acc,ppl\n";
  json rows = json::array();
  for (double fraction : cfg.prune_fractions) {
    PruneSpec spec;
    spec.mode = mode;
    std::size_t disabled = 0;
    for (const auto& l : ledgers) {
      spec.masks.push_back(build_prune_mask(l, fraction));
      for (std::size_t p = 0; p < l.trees(); ++p) disabled += spec.masks.back().disabled_leaf_count(p);
    }
    // Layers without trees keep a slot so indices line up.
    std::vector<PruneMask> aligned;
    std::size_t next = 0;
    for (const FeedForward* b : model.blocks())
      aligned.push_back(b->forest() ? spec.masks[next++] : PruneMask());
    spec.masks = std::move(aligned);
    const Evaluation ev = evaluate(model, cfg, data, &spec);
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.17g,%zu,%.17g,%.17g,%.17g\n", fraction, disabled, ev.loss,
                  ev.acc, ev.ppl);
    csv << buf;
    rows.push_back({{"fraction", fraction},
                    {"disabled_leaves", disabled},
                    {"loss", ev.loss},
                    {"acc", ev.acc},
                    {"ppl", ev.ppl}});
    out << "prune " << fraction << ": acc " << ev.acc << " loss " << ev.loss << '\n';
  }
  write_json(dir / "report.json", {{"mode", cfg.prune_mode}, {"results", rows}});
  return 0;
}

int cmd_bench(const Options& o, std::ostream& out) {
  const TrainConfig cfg = load_config(o);
  std::vector<BenchResult> results;
  json rows = json::array();
  for (std::size_t depth : cfg.bench_depths) {
    BenchConfig b;
    b.depth = depth;
    b.trees = (cfg.bench_nodes + nodes_per_tree(depth) - 1) / nodes_per_tree(depth);
    b.width = cfg.bench_width;
    b.batch = cfg.bench_batch;
    b.repeats = cfg.bench_repeats;
    b.warmup = cfg.bench_warmup;
    b.parallel = cfg.bench_parallel;
    b.seed = cfg.seed;
    const BenchResult r = bench_layer(b);
    results.push_back(r);
    rows.push_back({{"depth", depth},
                    {"trees", b.trees},
                    {"dense_hidden", r.dense_hidden},
                    {"sparse_mean_ms", r.sparse.mean_ms},
                    {"sparse_std_ms", r.sparse.std_ms},
                    {"dense_mean_ms", r.dense.mean_ms},
                    {"dense_std_ms", r.dense.std_ms},
                    {"speedup", r.speedup},
                    {"executed_flops", r.executed_flops},
                    {"analytic_flops", r.analytic_flops},
                    {"dense_flops", r.dense_flops}});
    out << "depth " << depth << " trees " << b.trees << ": sparse " << r.sparse.mean_ms
        << " ms, dense " << r.dense.mean_ms << " ms, speedup " << r.speedup << '\n';
  }
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  {
    auto f = open_out(dir / "bench.csv");
    write_bench_csv(f, results);
  }
  // Single-A100 layer speedups for d = 4, 6, 13, kept for comparison only.
  const json reference{{"4", 2.8}, {"6", 8.7}, {"13", 5.3}};
  write_json(dir / "report.json", {{"parallel", cfg.bench_parallel},
                                   {"results", rows},
                                   {"reference_speedup", reference}});
  return 0;
}

int cmd_export_boundaries(const Options& o, std::ostream& out) {
  const TrainConfig cfg = load_config(o);
  Model model;
  checkpoint::load_model(checkpoint_path(cfg, o).string(), model);
  if (model.kind != TaskKind::Checkerboard || !model.classifier.forest())
    throw ConfigError("export-boundaries needs a checkerboard model with a tree block");
  const ForestParams& f = *model.classifier.forest();
  const BoundaryDomain domain{0.0, 1.0, kCheckerboardScale, kCheckerboardShift};
  const BoundaryExport e = export_boundaries(f, cfg.boundary_resolution, domain);
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  {
    auto csv = open_out(dir / "boundaries.csv");
    write_boundaries_csv(csv, e);
    auto pgm = open_out(dir / "boundaries.pgm");
    write_raster_pgm(pgm, e.raster, f.depth);
    auto pal = open_out(dir / "boundaries_palette.json");
    write_palette_json(pal, f.depth);
  }
  out << "exported " << e.segments.size() << " node boundaries to " << dir.string() << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tree-routed feed-forward experiments"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::pair<std::string, std::string>> verbs{
      {"train", "train a model and write a run directory"},
      {"eval", "score a checkpoint on the evaluation split"},
      {"analyze", "routing utilization statistics"},
      {"prune", "accuracy after disabling the least-visited leaves"},
      {"bench", "time sparse tree execution against a dense block"},
      {"export-boundaries", "split lines and leaf raster of a 2-D tree model"}};
  for (const auto& [name, help] : verbs) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "JSON config file");
    sub->add_option("--out", o.out_dir, "output directory");
    sub->add_option("--set", o.overrides, "override key=value (repeatable)");
    sub->add_option("--seed", o.seed, "shortcut for --set seed=N");
    sub->callback([&o, name = name] { o.verb = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream msg;
    const int code = app.exit(e, out, msg);
    err << msg.str();
    return code == 0 ? 0 : 1;
  }
  try {
    if (o.verb == "train") return cmd_train(o, out);
    if (o.verb == "eval") return cmd_eval(o, out);
    if (o.verb == "analyze") return cmd_analyze(o, out);
    if (o.verb == "prune") return cmd_prune(o, out);
    if (o.verb == "bench") return cmd_bench(o, out);
    return cmd_export_boundaries(o, out);
  } catch (const DivergenceError& e) {
    err << "error: training diverged at step " << e.step() << ": " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    err << "error: numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace fff
