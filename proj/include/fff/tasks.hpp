#pragma once

// Desk-scale tasks: the 2-D checkerboard classification problem, a
// character-level corpus, and the losses shared by both.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fff/numeric.hpp"

namespace fff {

struct CheckerboardSpec {
  std::size_t grid = 4;  ///< cells per axis on [0,1)²
};

/// (⌊x₁·g⌋ + ⌊x₂·g⌋) mod 2.
int checkerboard_label(double x1, double x2, const CheckerboardSpec& spec);

struct LabeledPoints {
  Matrix x;                 ///< n × 2, points in [0,1)²
  std::vector<int> labels;  ///< 0 or 1
};

LabeledPoints gen_checkerboard(Rng& rng, std::size_t n, const CheckerboardSpec& spec);
/// CSV "x1,x2,label".
void write_checkerboard_csv(std::ostream& out, const LabeledPoints& data);

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad;  ///< dloss/dlogits, same shape as the logits
};

/// Mean negative log-softmax of the target column per row.
LossAndGrad cross_entropy(const Matrix& logits, std::span<const std::uint32_t> targets);
/// Per-row negative log-likelihoods, no gradient.
std::vector<double> row_nll(const Matrix& logits, std::span<const std::uint32_t> targets);
/// Fraction of rows whose arg-max (lowest index on ties) equals the target.
double accuracy(const Matrix& logits, std::span<const std::uint32_t> targets);

/// exp(total_nll / token_count).
double perplexity(double total_nll, std::size_t token_count);

/// Byte-level character vocabulary built from the symbols that occur in a text.
class CharVocab {
 public:
  CharVocab() { index_.fill(-1); }
  explicit CharVocab(const std::string& text);
  explicit CharVocab(std::vector<char> symbols);

  std::size_t size() const noexcept { return symbols_.size(); }
  const std::vector<char>& symbols() const noexcept { return symbols_; }
  std::vector<std::uint32_t> encode(const std::string& text) const;
  std::string decode(std::span<const std::uint32_t> ids) const;

 private:
  std::vector<char> symbols_;
  std::array<int, 256> index_;
};

/// Nested-bracket language: balanced (), [] and {} groups holding short
/// lowercase words, one expression per line. Deterministic given the seed.
std::string synthetic_grammar_corpus(std::uint64_t seed, std::size_t min_chars);

std::string read_text_file(const std::string& path);

}  // namespace fff
