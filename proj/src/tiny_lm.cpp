#include "fff/tiny_lm.hpp"

#include <cmath>

#include "fff/error.hpp"

namespace fff {

namespace {

constexpr double kLayerNormEps = 1e-5;

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache* cache) {
  const std::size_t n = x.rows(), d = x.cols();
  Matrix y(n, d), xhat(n, d);
  std::vector<double> rstd(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (row[c] - mean) * rstd[r];
      y(r, c) = gain[c] * xhat(r, c) + bias[c];
    }
  }
  if (cache) *cache = {std::move(xhat), std::move(rstd)};
  return y;
}

// Returns dx and accumulates into the gain/bias gradients.
Matrix layer_norm_backward(const LayerNormCache& c, const Matrix& gain, const Matrix& gy,
                           Matrix& g_gain, Matrix& g_bias) {
  const std::size_t n = gy.rows(), d = gy.cols();
  Matrix gx(n, d);
  std::vector<double> gxhat(d);
  for (std::size_t r = 0; r < n; ++r) {
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      g_gain[k] += gy(r, k) * c.xhat(r, k);
      g_bias[k] += gy(r, k);
      gxhat[k] = gy(r, k) * gain[k];
      m1 += gxhat[k];
      m2 += gxhat[k] * c.xhat(r, k);
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    for (std::size_t k = 0; k < d; ++k)
      gx(r, k) = c.rstd[r] * (gxhat[k] - m1 - c.xhat(r, k) * m2);
  }
  return gx;
}

Matrix ones_row(std::size_t d) { return Matrix(1, d, 1.0); }

}  // namespace

std::vector<Matrix*> TinyLM::tensors() {
  std::vector<Matrix*> out{&tok_emb, &pos_emb};
  for (auto& l : layers) {
    for (Matrix* m : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.wk, &l.wv, &l.wo, &l.ln2_gain,
                      &l.ln2_bias})
      out.push_back(m);
    for (Matrix* m : l.ff.tensors()) out.push_back(m);
  }
  out.push_back(&lnf_gain);
  out.push_back(&lnf_bias);
  if (!config.tied) out.push_back(&head);
  return out;
}

std::vector<const Matrix*> TinyLM::tensors() const {
  std::vector<const Matrix*> out;
  for (Matrix* m : const_cast<TinyLM*>(this)->tensors()) out.push_back(m);
  return out;
}

std::size_t TinyLM::param_count() const {
  std::size_t n = 0;
  for (const Matrix* m : tensors()) n += m->size();
  return n;
}

std::size_t TinyLM::active_param_count() const {
  std::size_t n = param_count();
  for (const auto& l : layers) n = n - l.ff.param_count() + l.ff.active_param_count();
  return n;
}

TinyLM init_tiny_lm(Rng& rng, const TinyLMConfig& config) {
  if (config.vocab == 0 || config.context == 0 || config.d_model == 0)
    throw DimensionError("init_tiny_lm: vocab, context and d_model must be positive");
  const std::size_t d = config.d_model;
  TinyLM m;
  m.config = config;
  m.config.ff.d_in = m.config.ff.d_out = d;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  m.tok_emb = gaussian_matrix(rng, config.vocab, d, 0.1);
  m.pos_emb = gaussian_matrix(rng, config.context, d, 0.1);
  for (std::size_t i = 0; i < config.layers; ++i) {
    TinyLMLayer l;
    l.ln1_gain = ones_row(d);
    l.ln1_bias = Matrix(1, d);
    l.wq = gaussian_matrix(rng, d, d, s);
    l.wk = gaussian_matrix(rng, d, d, s);
    l.wv = gaussian_matrix(rng, d, d, s);
    l.wo = gaussian_matrix(rng, d, d, s / std::sqrt(2.0 * static_cast<double>(config.layers)));
    l.ln2_gain = ones_row(d);
    l.ln2_bias = Matrix(1, d);
    l.ff = FeedForward::init(rng, m.config.ff);
    m.layers.push_back(std::move(l));
  }
  m.lnf_gain = ones_row(d);
  m.lnf_bias = Matrix(1, d);
  if (!config.tied) m.head = gaussian_matrix(rng, d, config.vocab, s);
  return m;
}

Matrix lm_forward(const TinyLM& model, std::span<const std::uint32_t> tokens, std::size_t batch,
                  LMCache* cache, const FeedForwardHook& hook) {
  const auto& cfg = model.config;
  const std::size_t d = cfg.d_model;
  if (batch == 0 || tokens.size() % batch != 0)
    throw DimensionError("lm_forward: token count is not a multiple of the batch size");
  const std::size_t t = tokens.size() / batch;
  if (t == 0 || t > cfg.context)
    throw DimensionError("lm_forward: sequence length " + std::to_string(t) +
                         " outside [1, " + std::to_string(cfg.context) + "]");
  const std::size_t n = batch * t;
  Matrix x(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    if (tokens[r] >= cfg.vocab)
      throw std::out_of_range("lm_forward: token id " + std::to_string(tokens[r]) +
                              " >= vocab size " + std::to_string(cfg.vocab));
    const auto e = model.tok_emb.row(tokens[r]);
    const auto p = model.pos_emb.row(r % t);
    for (std::size_t c = 0; c < d; ++c) x(r, c) = e[c] + p[c];
  }
  if (cache) {
    cache->batch = batch;
    cache->length = t;
    cache->tokens.assign(tokens.begin(), tokens.end());
    cache->layers.assign(model.layers.size(), {});
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const auto& L = model.layers[li];
    TinyLMLayerCache* lc = cache ? &cache->layers[li] : nullptr;
    if (lc) lc->x = x;
    Matrix a = layer_norm(x, L.ln1_gain, L.ln1_bias, lc ? &lc->ln1 : nullptr);
    Matrix q = matmul(a, L.wq), k = matmul(a, L.wk), v = matmul(a, L.wv);
    Matrix o(n, d);
    std::vector<Matrix> probs;
    for (std::size_t b = 0; b < batch; ++b) {
      Matrix p(t, t);
      for (std::size_t i = 0; i < t; ++i) {
        const auto qi = q.row(b * t + i);
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          const auto kj = k.row(b * t + j);
          double s = 0.0;
          for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
          p(i, j) = s * scale;
          mx = std::max(mx, p(i, j));
        }
        double sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) sum += p(i, j) = std::exp(p(i, j) - mx);
        for (std::size_t j = 0; j <= i; ++j) p(i, j) /= sum;
        auto oi = o.row(b * t + i);
        for (std::size_t j = 0; j <= i; ++j) {
          const auto vj = v.row(b * t + j);
          for (std::size_t c = 0; c < d; ++c) oi[c] += p(i, j) * vj[c];
        }
      }
      if (lc) probs.push_back(std::move(p));
    }
    add_inplace(x, matmul(o, L.wo));
    Matrix f_in = layer_norm(x, L.ln2_gain, L.ln2_bias, lc ? &lc->ln2 : nullptr);
    Matrix f;
    if (hook)
      f = hook(li, L.ff, f_in);
    else
      f = L.ff.forward(f_in, lc ? &lc->ff : nullptr);
    if (lc) {
      lc->a = std::move(a);
      lc->q = std::move(q);
      lc->k = std::move(k);
      lc->v = std::move(v);
      lc->probs = std::move(probs);
      lc->o = std::move(o);
      lc->f_in = std::move(f_in);
    }
    add_inplace(x, f);
  }
  Matrix h = layer_norm(x, model.lnf_gain, model.lnf_bias, cache ? &cache->lnf : nullptr);
  Matrix logits = cfg.tied ? matmul_bt(h, model.tok_emb) : matmul(h, model.head);
  if (cache) cache->h = std::move(h);
  return logits;
}

std::vector<Matrix> lm_backward(const TinyLM& model, const LMCache& cache,
                                const Matrix& grad_logits) {
  const auto& cfg = model.config;
  const std::size_t d = cfg.d_model, batch = cache.batch, t = cache.length, n = batch * t;
  if (grad_logits.rows() != n || grad_logits.cols() != cfg.vocab)
    throw DimensionError("lm_backward: gradient shape does not match the cached forward");
  if (cache.layers.size() != model.layers.size())
    throw std::invalid_argument("lm_backward: cache is from a different model");

  Matrix g_tok(cfg.vocab, d), g_pos(cfg.context, d);
  Matrix g_lnf_gain(1, d), g_lnf_bias(1, d), g_head;
  Matrix gh;
  if (cfg.tied) {
    add_inplace(g_tok, matmul_at(grad_logits, cache.h));
    gh = matmul(grad_logits, model.tok_emb);
  } else {
    g_head = matmul_at(cache.h, grad_logits);
    gh = matmul_bt(grad_logits, model.head);
  }
  Matrix gx = layer_norm_backward(cache.lnf, model.lnf_gain, gh, g_lnf_gain, g_lnf_bias);

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<std::vector<Matrix>> layer_grads(model.layers.size());
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const auto& L = model.layers[li];
    const auto& c = cache.layers[li];
    auto& out = layer_grads[li];
    Matrix g_ln1_gain(1, d), g_ln1_bias(1, d), g_ln2_gain(1, d), g_ln2_bias(1, d);

    BlockGradients fg = L.ff.backward(c.ff, gx);
    add_inplace(gx, layer_norm_backward(c.ln2, L.ln2_gain, fg.x, g_ln2_gain, g_ln2_bias));

    Matrix g_wo = matmul_at(c.o, gx);
    Matrix go = matmul_bt(gx, L.wo);
    Matrix gq(n, d), gk(n, d), gv(n, d);
    std::vector<double> gp(t);
    for (std::size_t b = 0; b < batch; ++b) {
      const Matrix& p = c.probs[b];
      for (std::size_t i = 0; i < t; ++i) {
        const auto goi = go.row(b * t + i);
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const auto vj = c.v.row(b * t + j);
          double s = 0.0;
          for (std::size_t e = 0; e < d; ++e) s += goi[e] * vj[e];
          gp[j] = s;
          dot += s * p(i, j);
          auto gvj = gv.row(b * t + j);
          for (std::size_t e = 0; e < d; ++e) gvj[e] += p(i, j) * goi[e];
        }
        auto gqi = gq.row(b * t + i);
        const auto qi = c.q.row(b * t + i);
        for (std::size_t j = 0; j <= i; ++j) {
          const double gs = p(i, j) * (gp[j] - dot) * scale;
          const auto kj = c.k.row(b * t + j);
          auto gkj = gk.row(b * t + j);
          for (std::size_t e = 0; e < d; ++e) {
            gqi[e] += gs * kj[e];
            gkj[e] += gs * qi[e];
          }
        }
      }
    }
    Matrix g_wq = matmul_at(c.a, gq), g_wk = matmul_at(c.a, gk), g_wv = matmul_at(c.a, gv);
    Matrix ga = matmul_bt(gq, L.wq);
    add_inplace(ga, matmul_bt(gk, L.wk));
    add_inplace(ga, matmul_bt(gv, L.wv));
    add_inplace(gx, layer_norm_backward(c.ln1, L.ln1_gain, ga, g_ln1_gain, g_ln1_bias));

    out = {std::move(g_ln1_gain), std::move(g_ln1_bias), std::move(g_wq), std::move(g_wk),
           std::move(g_wv),       std::move(g_wo),       std::move(g_ln2_gain),
           std::move(g_ln2_bias)};
    for (auto& m : fg.params) out.push_back(std::move(m));
  }

  for (std::size_t r = 0; r < n; ++r) {
    auto gt = g_tok.row(cache.tokens[r]);
    auto gp = g_pos.row(r % t);
    const auto g = gx.row(r);
    for (std::size_t e = 0; e < d; ++e) {
      gt[e] += g[e];
      gp[e] += g[e];
    }
  }

  std::vector<Matrix> grads{std::move(g_tok), std::move(g_pos)};
  for (auto& lg : layer_grads)
    for (auto& m : lg) grads.push_back(std::move(m));
  grads.push_back(std::move(g_lnf_gain));
  grads.push_back(std::move(g_lnf_bias));
  if (!cfg.tied) grads.push_back(std::move(g_head));
  return grads;
}

}  // namespace fff
