#pragma once

// Dense linear algebra, random number generation and the Adam optimizer.
//
// Everything is 64-bit floating point. The random stream is xoshiro256**
// seeded through SplitMix64, with uniforms built from the top 53 bits and
// normals from Box-Muller, so a (seed, call order) pair produces the same bits
// on every platform. std::*_distribution is deliberately not used because its
// output is implementation-defined.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace bayescp {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool all_finite() const noexcept;
  double squared_norm() const noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a (n x k) times b (k x m). Throws ShapeError when a.cols != b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);
// a^T b and a b^T without materializing the transpose.
Matrix matmul_at_b(const Matrix& a, const Matrix& b);
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

// SplitMix64 finalizer; also used to derive independent sub-seeds.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept;
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) noexcept;

// xoshiro256** generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  // Uniform on [0, 1).
  double uniform() noexcept;
  // Uniform on [lo, hi).
  double uniform(double lo, double hi) noexcept;
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  double normal() noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Fisher-Yates driven by rng.below().
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(v[i - 1], v[j]);
  }
}

Matrix bernoulli_sample(Rng& rng, double p, std::size_t rows, std::size_t cols);
// Uniform in +-sqrt(6 / (rows + cols)).
Matrix glorot_init(Rng& rng, std::size_t rows, std::size_t cols);

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  Matrix first_moment;
  Matrix second_moment;

  AdamState() = default;
  AdamState(const Matrix& like, double lr);
};

// In-place bias-corrected Adam update of params.
void adam_step(Matrix& params, const Matrix& grads, AdamState& state);

}  // namespace bayescp
