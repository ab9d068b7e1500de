#include "fff/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include <omp.h>

#include "fff/error.hpp"
#include "fff/seeds.hpp"

namespace fff {

namespace {

constexpr std::size_t kEvalChunk = 4096;

std::vector<UtilizationLedger> empty_ledgers(const Model& model) {
  std::vector<UtilizationLedger> out;
  for (const FeedForward* b : model.blocks())
    if (const ForestParams* f = b->forest()) out.emplace_back(f->trees, f->depth);
  return out;
}

}  // namespace

Evaluation evaluate(const Model& model, const TrainConfig& config, const TaskData& data,
                    const PruneSpec* prune) {
  Evaluation ev;
  if (!prune) ev.ledgers = empty_ledgers(model);
  std::size_t hits = 0;
  const auto score = [&](const Batch& b) {
    ModelCache cache;
    const Matrix logits = model_forward(model, b, prune ? nullptr : &cache, prune);
    if (!logits.all_finite()) throw NumericError("evaluate: non-finite logits");
    for (double v : row_nll(logits, b.targets)) ev.total_nll += v;
    hits += static_cast<std::size_t>(std::llround(accuracy(logits, b.targets) *
                                                   static_cast<double>(b.targets.size())));
    ev.count += b.targets.size();
    if (!prune) {
      const auto masks = cached_route_masks(model, cache);
      for (std::size_t i = 0; i < masks.size(); ++i) ev.ledgers[i].record_batch(*masks[i]);
    }
  };
  if (data.kind == TaskKind::Checkerboard) {
    const auto& pts = data.eval_points;
    for (std::size_t first = 0; first < pts.labels.size(); first += kEvalChunk) {
      const std::size_t n = std::min(kEvalChunk, pts.labels.size() - first);
      Batch b;
      b.points = Matrix(n, 2);
      for (std::size_t i = 0; i < n; ++i) {
        b.points(i, 0) = pts.x(first + i, 0);
        b.points(i, 1) = pts.x(first + i, 1);
        b.targets.push_back(static_cast<std::uint32_t>(pts.labels[first + i]));
      }
      score(b);
    }
  } else {
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + config.context + 1 <= data.eval_ids.size(); s += config.context) {
      starts.push_back(s);
      if (starts.size() == config.batch_size) {
        score(lm_batch(data.eval_ids, starts, config.context));
        starts.clear();
      }
    }
    if (!starts.empty()) score(lm_batch(data.eval_ids, starts, config.context));
  }
  ev.loss = ev.total_nll / static_cast<double>(ev.count);
  ev.acc = static_cast<double>(hits) / static_cast<double>(ev.count);
  ev.ppl = perplexity(ev.total_nll, ev.count);
  return ev;
}

void fill_routing_columns(MetricsRow& row, const std::vector<UtilizationLedger>& ledgers) {
  if (ledgers.empty() || ledgers.front().total() == 0) return;
  double share = 0.0, dead = 0.0;
  for (const auto& l : ledgers) {
    share = std::max(share, max_path_share(l));
    dead += dead_leaf_fraction(l);
  }
  row.max_path_share = share;
  row.dead_leaf_frac = dead / static_cast<double>(ledgers.size());
}

Batch sample_train_batch(const TrainConfig& config, const TaskData& data, Rng& rng) {
  if (data.kind == TaskKind::Checkerboard) {
    LabeledPoints pts = gen_checkerboard(rng, config.batch_size, data.spec);
    Batch b;
    b.points = std::move(pts.x);
    for (int l : pts.labels) b.targets.push_back(static_cast<std::uint32_t>(l));
    return b;
  }
  std::vector<std::size_t> starts(config.batch_size);
  for (auto& s : starts) s = rng.below(data.train_ids.size() - config.context);
  return lm_batch(data.train_ids, starts, config.context);
}

void apply_thread_setting(const TrainConfig& config) {
  if (config.threads > 0) omp_set_num_threads(static_cast<int>(config.threads));
}

TrainingRun run_training(const TrainConfig& config, const TaskData& data,
                         const StepObserver& observer) {
  config.validate();
  apply_thread_setting(config);
  TrainingRun run;
  run.model = init_model(config, data);
  Model& model = run.model;
  const auto params = model.tensors();
  std::vector<const Matrix*> cparams(params.begin(), params.end());
  OptimizerState opt = make_optimizer_state(config.optimizer_config(), cparams);
  const Schedule schedule = parse_schedule(config.schedule);
  Rng rng(derive_seed(config.seed, SeedStream::TrainData));

  for (std::size_t s = 0; s < config.steps; ++s) {
    const std::size_t step = s + 1;
    const Batch batch = sample_train_batch(config, data, rng);
    ModelCache cache;
    Matrix logits;
    try {
      logits = model_forward(model, batch, &cache);
    } catch (const NumericError& e) {
      throw DivergenceError(static_cast<long>(step),
                            "step " + std::to_string(step) + ": " + e.what());
    }
    if (!logits.all_finite())
      throw DivergenceError(static_cast<long>(step),
                            "non-finite logits at step " + std::to_string(step));
    const LossAndGrad lg = cross_entropy(logits, batch.targets);
    if (!std::isfinite(lg.loss))
      throw DivergenceError(static_cast<long>(step),
                            "non-finite loss at step " + std::to_string(step));
    std::vector<Matrix> grads = model_backward(model, cache, lg.grad);
    if (config.clip_norm > 0) clip_grad_norm(grads, config.clip_norm);
    const double lr = learning_rate_at(schedule, config.lr, s, config.steps, config.warmup_steps);
    std::optional<Model> before;
    if (observer) before = model;
    optimizer_step(model.tensors(), grads, opt, lr);
    if (observer)
      observer({step, lg.loss, lr, &batch, &cache, &grads, &*before, &model});

    run.metrics.push_back({step, "train", lg.loss, accuracy(logits, batch.targets),
                           std::exp(lg.loss), std::nullopt, std::nullopt});
    if (step % config.eval_every == 0 || step == config.steps) {
      Evaluation ev = evaluate(model, config, data);
      MetricsRow row{step, "eval", ev.loss, ev.acc, ev.ppl, std::nullopt, std::nullopt};
      fill_routing_columns(row, ev.ledgers);
      run.metrics.push_back(row);
      if (step == config.steps) run.final_eval = std::move(ev);
    }
  }
  return run;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << "step,split,loss,acc,ppl,max_path_share,dead_leaf_frac\n";
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    out << r.step << ',' << r.split << ',' << num(r.loss) << ',' << num(r.acc) << ','
        << num(r.ppl) << ',' << (r.max_path_share ? num(*r.max_path_share) : "") << ','
        << (r.dead_leaf_frac ? num(*r.dead_leaf_frac) : "") << '\n';
  }
}

}  // namespace fff
