#include "fff/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "fff/error.hpp"

namespace fff {

int checkerboard_label(double x1, double x2, const CheckerboardSpec& spec) {
  const auto g = static_cast<double>(spec.grid);
  const auto i = static_cast<long>(std::floor(x1 * g));
  const auto j = static_cast<long>(std::floor(x2 * g));
  return static_cast<int>(((i + j) % 2 + 2) % 2);
}

LabeledPoints gen_checkerboard(Rng& rng, std::size_t n, const CheckerboardSpec& spec) {
  if (n == 0) throw std::invalid_argument("gen_checkerboard: n must be at least 1");
  if (spec.grid == 0) throw std::invalid_argument("gen_checkerboard: grid must be positive");
  LabeledPoints out{Matrix(n, 2), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    out.x(i, 0) = rng.uniform();
    out.x(i, 1) = rng.uniform();
    out.labels[i] = checkerboard_label(out.x(i, 0), out.x(i, 1), spec);
  }
  return out;
}

void write_checkerboard_csv(std::ostream& out, const LabeledPoints& data) {
  out << "x1,x2,label\n";
  out.precision(17);
  for (std::size_t i = 0; i < data.labels.size(); ++i)
    out << data.x(i, 0) << ',' << data.x(i, 1) << ',' << data.labels[i] << '\n';
}

namespace {

void check_targets(const Matrix& logits, std::span<const std::uint32_t> targets) {
  if (targets.size() != logits.rows())
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(logits.rows()) + " rows");
  for (std::size_t r = 0; r < targets.size(); ++r)
    if (targets[r] >= logits.cols())
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) + " at row " +
                              std::to_string(r) + " is outside [0, " +
                              std::to_string(logits.cols()) + ")");
  require_finite(logits, "cross_entropy logits");
}

// log Σ exp(row) with the usual max shift.
double log_sum_exp(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double v : row) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace

LossAndGrad cross_entropy(const Matrix& logits, std::span<const std::uint32_t> targets) {
  check_targets(logits, targets);
  const std::size_t n = logits.rows();
  LossAndGrad out{0.0, Matrix(n, logits.cols())};
  if (n == 0) return out;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = logits.row(r);
    const double lse = log_sum_exp(row);
    out.loss += lse - row[targets[r]];
    auto g = out.grad.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) g[c] = std::exp(row[c] - lse) * inv;
    g[targets[r]] -= inv;
  }
  out.loss *= inv;
  return out;
}

std::vector<double> row_nll(const Matrix& logits, std::span<const std::uint32_t> targets) {
  check_targets(logits, targets);
  std::vector<double> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r)
    out[r] = log_sum_exp(logits.row(r)) - logits(r, targets[r]);
  return out;
}

double accuracy(const Matrix& logits, std::span<const std::uint32_t> targets) {
  if (targets.size() != logits.rows()) throw DimensionError("accuracy: target count mismatch");
  if (targets.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    hits += static_cast<std::uint32_t>(best) == targets[r];
  }
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

double perplexity(double total_nll, std::size_t token_count) {
  if (token_count == 0) throw std::invalid_argument("perplexity: token_count must be at least 1");
  return std::exp(total_nll / static_cast<double>(token_count));
}

CharVocab::CharVocab(const std::string& text) {
  bool seen[256] = {};
  for (unsigned char c : text) seen[c] = true;
  std::vector<char> symbols;
  for (int c = 0; c < 256; ++c)
    if (seen[c]) symbols.push_back(static_cast<char>(c));
  *this = CharVocab(std::move(symbols));
}

CharVocab::CharVocab(std::vector<char> symbols) : symbols_(std::move(symbols)) {
  index_.fill(-1);
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    auto& slot = index_[static_cast<unsigned char>(symbols_[i])];
    if (slot >= 0) throw FormatError("CharVocab: duplicate symbol");
    slot = static_cast<int>(i);
  }
}

std::vector<std::uint32_t> CharVocab::encode(const std::string& text) const {
  std::vector<std::uint32_t> out;
  out.reserve(text.size());
  for (unsigned char c : text) {
    if (index_[c] < 0)
      throw std::out_of_range("CharVocab: character code " + std::to_string(c) +
                              " is not in the vocabulary");
    out.push_back(static_cast<std::uint32_t>(index_[c]));
  }
  return out;
}

std::string CharVocab::decode(std::span<const std::uint32_t> ids) const {
  std::string out;
  for (auto id : ids) {
    if (id >= symbols_.size()) throw std::out_of_range("CharVocab: id out of range");
    out.push_back(symbols_[id]);
  }
  return out;
}

namespace {

void grammar_expr(Rng& rng, int depth, std::string& out) {
  static const char* const words[] = {"ab", "ba", "cab", "dab", "bad", "ace", "cede", "fade"};
  static const char open[] = {'(', '[', '{'};
  static const char close[] = {')', ']', '}'};
  const std::size_t items = 1 + rng.below(3);
  for (std::size_t i = 0; i < items; ++i) {
    if (i) out.push_back(' ');
    if (depth < 4 && rng.uniform() < 0.45) {
      const auto k = rng.below(3);
      out.push_back(open[k]);
      grammar_expr(rng, depth + 1, out);
      out.push_back(close[k]);
    } else {
      out += words[rng.below(8)];
    }
  }
}

}  // namespace

std::string synthetic_grammar_corpus(std::uint64_t seed, std::size_t min_chars) {
  Rng rng(seed);
  std::string out;
  while (out.size() < min_chars) {
    grammar_expr(rng, 0, out);
    out.push_back('\n');
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fff
