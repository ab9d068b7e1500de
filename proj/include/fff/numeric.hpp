#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace fff {

/// Dense row-major 2-D array of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  void fill(double v);
  bool all_finite() const noexcept;
  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// a · b. Rows of the result are computed in parallel; each entry is
/// accumulated over k in ascending order, so results do not depend on the
/// thread count.
Matrix matmul(const Matrix& a, const Matrix& b);
/// a · bᵀ.
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// aᵀ · b.
Matrix matmul_at(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

/// Single-threaded triple loop, kept as the reference for matmul.
Matrix matmul_reference(const Matrix& a, const Matrix& b);

void add_inplace(Matrix& a, const Matrix& b);
void scale_inplace(Matrix& a, double s);
/// Adds a 1×cols row vector to every row.
void add_row_inplace(Matrix& a, const Matrix& row);
/// Column sums as a 1×cols matrix.
Matrix column_sums(const Matrix& a);
double frobenius_norm_sq(const Matrix& a);

/// Throws NumericError naming `what` if any entry is NaN/Inf.
void require_finite(const Matrix& m, const char* what);

double std_normal_pdf(double x);
double std_normal_cdf(double x);
/// Exact GELU: z·Φ(z).
double gelu(double z);
/// Φ(z) + z·φ(z).
double gelu_prime(double z);

/// Seeded generator. Sampling transforms are implemented here on top of the
/// fully specified mt19937_64 engine so streams are identical across
/// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 42) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double gaussian();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// n×1 column of N(mean, std²) samples.
Matrix sample_gaussian(Rng& rng, double mean, double std, std::size_t n);
Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double std);
Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi);

}  // namespace fff
