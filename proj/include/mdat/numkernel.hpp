#pragma once

// Dense/sparse linear algebra, the splittable RNG and the Adam update shared
// by every other header. All arithmetic is double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mdat/errors.hpp"

namespace mdat {

using Vector = std::vector<double>;

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      throw ShapeError("DenseMatrix: " + std::to_string(values_.size()) +
                       " values for a " + std::to_string(rows_) + "x" +
                       std::to_string(cols_) + " matrix");
    }
    for (double v : values_) {
      if (!std::isfinite(v)) throw DomainError("DenseMatrix: non-finite value");
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

/// Bag-of-features sample: strictly increasing indices, finite non-negative counts.
struct SparseEntry {
  std::uint32_t index = 0;
  double value = 0.0;

  friend bool operator==(const SparseEntry&, const SparseEntry&) = default;
};

class SparseVector {
 public:
  SparseVector() = default;
  SparseVector(std::size_t dim, std::vector<SparseEntry> entries)
      : dim_(dim), entries_(std::move(entries)) {
    validate();
  }

  std::size_t dim() const noexcept { return dim_; }
  std::span<const SparseEntry> entries() const noexcept { return entries_; }
  std::size_t nnz() const noexcept { return entries_.size(); }

  Vector densify() const {
    Vector out(dim_, 0.0);
    for (const auto& e : entries_) out[e.index] = e.value;
    return out;
  }

  friend bool operator==(const SparseVector&, const SparseVector&) = default;

 private:
  void validate() const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.index >= dim_) {
        throw RangeError("SparseVector: index " + std::to_string(e.index) +
                         " out of range for dim " + std::to_string(dim_));
      }
      if (i > 0 && entries_[i - 1].index >= e.index) {
        throw DomainError("SparseVector: indices must be strictly increasing");
      }
      if (!std::isfinite(e.value) || e.value < 0.0) {
        throw DomainError("SparseVector: values must be finite and non-negative");
      }
    }
  }

  std::size_t dim_ = 0;
  std::vector<SparseEntry> entries_;
};

// ---------------------------------------------------------------------------
// RNG

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// Counter-based generator. Draw i of stream (seed, key) is a pure function of
/// (seed, key, i), so child streams never depend on how the parent was used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), key_(make_key(seed, stream)) {}

  Rng child(std::string_view label) const { return child_of(detail::fnv1a(label)); }
  Rng child(std::uint64_t index) const { return child_of(detail::splitmix64(index ^ 0xA5A5A5A5ULL)); }
  Rng child(std::string_view label, std::uint64_t index) const {
    return child(label).child(index);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() {
    return detail::splitmix64(key_ + 0xD1B54A32D192ED03ULL * (++counter_));
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw DomainError("Rng::below: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  double sign() { return (next_u64() >> 63) ? 1.0 : -1.0; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  static std::uint64_t make_key(std::uint64_t seed, std::uint64_t stream) {
    return detail::splitmix64(detail::splitmix64(seed) ^ (stream * 0x9E3779B97F4A7C15ULL));
  }

  Rng child_of(std::uint64_t tag) const {
    return Rng(seed_, detail::splitmix64(stream_ ^ detail::splitmix64(tag)));
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// Affine maps

namespace detail {

inline void check_affine_shapes(std::size_t rows, std::size_t cols, std::size_t bias,
                                std::size_t in) {
  if (cols != in || bias != rows) {
    throw ShapeError("affine_forward: W is " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", b has " + std::to_string(bias) +
                     ", x has " + std::to_string(in));
  }
}

}  // namespace detail

/// out = W x + b with W given as a row-major span. Sums run in ascending
/// column order and the bias is added last, so a sparse input yields exactly
/// the same bits as its dense expansion.
inline void affine_forward(std::span<const double> w, std::size_t rows, std::size_t cols,
                           std::span<const double> b, std::span<const double> x,
                           std::span<double> out) {
  detail::check_affine_shapes(rows, cols, b.size(), x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    out[r] = acc + b[r];
  }
}

inline void affine_forward(std::span<const double> w, std::size_t rows, std::size_t cols,
                           std::span<const double> b, const SparseVector& x,
                           std::span<double> out) {
  detail::check_affine_shapes(rows, cols, b.size(), x.dim());
  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(rows), 0.0);
  for (const auto& e : x.entries()) {
    const double* col = w.data() + e.index;
    for (std::size_t r = 0; r < rows; ++r) out[r] += col[r * cols] * e.value;
  }
  for (std::size_t r = 0; r < rows; ++r) out[r] += b[r];
}

inline Vector affine_forward(const DenseMatrix& w, std::span<const double> b,
                             std::span<const double> x) {
  Vector out(w.rows());
  affine_forward(w.values(), w.rows(), w.cols(), b, x, out);
  return out;
}

inline Vector affine_forward(const DenseMatrix& w, std::span<const double> b,
                             const SparseVector& x) {
  Vector out(w.rows());
  affine_forward(w.values(), w.rows(), w.cols(), b, x, out);
  return out;
}

// ---------------------------------------------------------------------------
// Softmax, dropout

inline void softmax(std::span<const double> logits, std::span<double> out) {
  if (logits.empty()) return;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= total;
}

inline Vector softmax(std::span<const double> logits) {
  Vector out(logits.size());
  softmax(logits, out);
  return out;
}

/// Index of the largest value; ties go to the smallest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

/// Inverted-dropout mask: entries are 0 or 1/keep_prob.
inline void bernoulli_mask(Rng& rng, double keep_prob, std::span<double> out) {
  if (!(keep_prob > 0.0) || keep_prob > 1.0) {
    throw ConfigError("bernoulli_mask: keep_prob must lie in (0, 1], got " +
                      std::to_string(keep_prob));
  }
  if (keep_prob == 1.0) {
    std::fill(out.begin(), out.end(), 1.0);
    return;
  }
  const double scale = 1.0 / keep_prob;
  for (double& m : out) m = rng.uniform() < keep_prob ? scale : 0.0;
}

inline Vector bernoulli_mask(Rng& rng, std::size_t n, double keep_prob) {
  Vector out(n);
  bernoulli_mask(rng, keep_prob, out);
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  Vector m;
  Vector v;
  std::uint64_t t = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n, double learning_rate = 1e-4)
      : m(n, 0.0), v(n, 0.0), lr(learning_rate) {}

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam descent step. Pass negated gradients to ascend.
inline void adam_step(std::span<double> params, std::span<const double> grads,
                      AdamState& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adam_step: params/grads/state size mismatch");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("adam_step: non-finite gradient at parameter index " +
                         std::to_string(i));
    }
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

/// Pairwise (cascade) summation; the result depends only on the input order.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size());
}

}  // namespace mdat
