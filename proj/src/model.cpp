#include "fff/model.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "fff/checkpoint.hpp"
#include "fff/error.hpp"
#include "fff/seeds.hpp"

namespace fff {

TaskKind task_kind(const TrainConfig& c) {
  if (c.task == "checkerboard") return TaskKind::Checkerboard;
  if (c.task == "lm") return TaskKind::CharLM;
  throw ConfigError("task: expected \"checkerboard\" or \"lm\", got \"" + c.task + "\"");
}

TaskData make_task_data(const TrainConfig& config) {
  TaskData d;
  d.kind = task_kind(config);
  if (d.kind == TaskKind::Checkerboard) {
    d.spec.grid = config.grid;
    Rng rng(derive_seed(config.seed, SeedStream::EvalData));
    d.eval_points = gen_checkerboard(rng, config.eval_samples, d.spec);
    return d;
  }
  const std::string text = config.corpus.empty()
                               ? synthetic_grammar_corpus(config.corpus_seed, config.corpus_chars)
                               : read_text_file(config.corpus);
  d.vocab = CharVocab(text);
  const auto ids = d.vocab.encode(text);
  const auto split = static_cast<std::size_t>(static_cast<double>(ids.size()) *
                                              (1.0 - config.eval_fraction));
  d.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(split));
  d.eval_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(split), ids.end());
  if (d.train_ids.size() <= config.context || d.eval_ids.size() <= config.context)
    throw ConfigError("corpus is too short for context " + std::to_string(config.context) +
                      " (" + std::to_string(ids.size()) + " characters)");
  return d;
}

Matrix checkerboard_inputs(const Matrix& x) {
  Matrix u(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) u[i] = kCheckerboardScale * x[i] + kCheckerboardShift;
  return u;
}

std::vector<Matrix*> Model::tensors() {
  return kind == TaskKind::Checkerboard ? classifier.tensors() : lm.tensors();
}

std::vector<const Matrix*> Model::tensors() const {
  return kind == TaskKind::Checkerboard ? classifier.tensors() : lm.tensors();
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const Matrix* m : tensors()) n += m->size();
  return n;
}

std::vector<const FeedForward*> Model::blocks() const {
  if (kind == TaskKind::Checkerboard) return {&classifier};
  std::vector<const FeedForward*> out;
  for (const auto& l : lm.layers) out.push_back(&l.ff);
  return out;
}

namespace {

TinyLMConfig lm_config(const TrainConfig& c, std::size_t vocab) {
  TinyLMConfig lc;
  lc.vocab = vocab;
  lc.context = c.context;
  lc.d_model = c.d_model;
  lc.layers = c.layers;
  lc.ff = c.block_spec(c.d_model, c.d_model);
  lc.tied = c.tied;
  return lc;
}

Model init_model_with_vocab(const TrainConfig& config, std::size_t vocab) {
  Rng rng(derive_seed(config.seed, SeedStream::Init));
  Model m;
  m.kind = task_kind(config);
  if (m.kind == TaskKind::Checkerboard)
    m.classifier = FeedForward::init(rng, config.block_spec(2, 2));
  else
    m.lm = init_tiny_lm(rng, lm_config(config, vocab));
  return m;
}

}  // namespace

Model init_model(const TrainConfig& config, const TaskData& data) {
  return init_model_with_vocab(config, data.vocab.size());
}

Matrix model_forward(const Model& model, const Batch& batch, ModelCache* cache,
                     const PruneSpec* prune) {
  if (model.kind == TaskKind::Checkerboard) {
    const Matrix u = checkerboard_inputs(batch.points);
    if (prune && model.classifier.forest() && !prune->masks.empty())
      return forward_pruned(*model.classifier.forest(), u, prune->masks.front(), prune->mode).y;
    return model.classifier.forward(u, cache ? &cache->block : nullptr);
  }
  FeedForwardHook hook;
  if (prune)
    hook = [prune](std::size_t layer, const FeedForward& ff, const Matrix& x) {
      if (ff.forest() && layer < prune->masks.size())
        return forward_pruned(*ff.forest(), x, prune->masks[layer], prune->mode).y;
      return ff.forward(x);
    };
  return lm_forward(model.lm, batch.tokens, batch.sequences, cache ? &cache->lm : nullptr, hook);
}

std::vector<Matrix> model_backward(const Model& model, const ModelCache& cache,
                                   const Matrix& grad_logits) {
  if (model.kind == TaskKind::Checkerboard)
    return model.classifier.backward(cache.block, grad_logits).params;
  return lm_backward(model.lm, cache.lm, grad_logits);
}

std::vector<const RouteMask*> cached_route_masks(const Model& model, const ModelCache& cache) {
  std::vector<const RouteMask*> out;
  if (model.kind == TaskKind::Checkerboard) {
    if (const auto* c = std::get_if<ForwardCache>(&cache.block)) out.push_back(&c->mask);
    return out;
  }
  for (const auto& l : cache.lm.layers)
    if (const auto* c = std::get_if<ForwardCache>(&l.ff)) out.push_back(&c->mask);
  return out;
}

Batch lm_batch(const std::vector<std::uint32_t>& ids, const std::vector<std::size_t>& starts,
               std::size_t context) {
  Batch b;
  b.sequences = starts.size();
  for (std::size_t s : starts) {
    if (s + context + 1 > ids.size()) throw std::out_of_range("lm_batch: window past the end");
    b.tokens.insert(b.tokens.end(), ids.begin() + static_cast<std::ptrdiff_t>(s),
                    ids.begin() + static_cast<std::ptrdiff_t>(s + context));
    b.targets.insert(b.targets.end(), ids.begin() + static_cast<std::ptrdiff_t>(s + 1),
                     ids.begin() + static_cast<std::ptrdiff_t>(s + context + 1));
  }
  return b;
}

namespace checkpoint {

namespace {

constexpr char kModelMagic[5] = "FFFM";

// Records in file order: a plain tensor or a whole feed-forward block.
struct Record {
  Matrix* tensor = nullptr;
  FeedForward* block = nullptr;
};

std::vector<Record> record_plan(Model& m) {
  if (m.kind == TaskKind::Checkerboard) return {{nullptr, &m.classifier}};
  auto& lm = m.lm;
  std::vector<Record> plan{{&lm.tok_emb}, {&lm.pos_emb}};
  for (auto& l : lm.layers) {
    for (Matrix* t : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.wk, &l.wv, &l.wo, &l.ln2_gain,
                      &l.ln2_bias})
      plan.push_back({t});
    plan.push_back({nullptr, &l.ff});
  }
  plan.push_back({&lm.lnf_gain});
  plan.push_back({&lm.lnf_bias});
  if (!lm.config.tied) plan.push_back({&lm.head});
  return plan;
}

}  // namespace

void write_model(std::ostream& out, const Model& model, const TrainConfig& config) {
  write_magic(out, kModelMagic);
  write_u32(out, kModelVersion);
  nlohmann::json header{{"config", config},
                        {"vocab_size", model.kind == TaskKind::CharLM ? model.lm.config.vocab : 0}};
  const std::string text = header.dump();
  write_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto plan = record_plan(const_cast<Model&>(model));
  write_u32(out, static_cast<std::uint32_t>(plan.size()));
  for (const Record& r : plan) {
    if (r.block)
      write_block(out, *r.block);
    else
      write_tensor(out, *r.tensor);
  }
  if (!out) throw FormatError("write_model: stream error");
}

TrainConfig read_model(std::istream& in, Model& model) {
  const std::string magic = read_magic(in);
  if (magic != kModelMagic)
    throw FormatError("not a model checkpoint (magic '" + magic + "', expected 'FFFM')");
  const std::uint32_t version = read_u32(in);
  if (version != kModelVersion)
    throw FormatError("checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kModelVersion));
  const std::uint32_t len = read_u32(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw FormatError("read_model: truncated header");
  const auto header = nlohmann::json::parse(text, nullptr, false);
  if (header.is_discarded() || !header.contains("config"))
    throw FormatError("read_model: malformed header");
  const TrainConfig config = config_from_json(header.at("config"), false);
  Model m = init_model_with_vocab(config, header.value("vocab_size", std::size_t{0}));
  const auto plan = record_plan(m);
  if (read_u32(in) != plan.size()) throw FormatError("read_model: record count does not match config");
  for (const Record& r : plan) {
    if (r.block) {
      FeedForward b = read_block(in);
      if (b.kind() != r.block->kind() || b.param_count() != r.block->param_count())
        throw FormatError("read_model: block record does not match config");
      *r.block = std::move(b);
    } else {
      Matrix v = read_tensor(in);
      if (!v.same_shape(*r.tensor))
        throw FormatError("read_model: tensor shape does not match config");
      *r.tensor = std::move(v);
    }
  }
  model = std::move(m);
  return config;
}

void save_model(const std::string& path, const Model& model, const TrainConfig& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  write_model(out, model, config);
}

TrainConfig load_model(const std::string& path, Model& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return read_model(in, model);
}

}  // namespace checkpoint

}  // namespace fff
