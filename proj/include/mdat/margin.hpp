#pragma once

// Margins, ramp loss, error rates, disparities and discrepancies over finite
// sample sets, with exhaustive-enumeration oracles over finite hypothesis
// classes.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdat/errors.hpp"
#include "mdat/numkernel.hpp"

namespace mdat {

/// Predicted class per sample.
using Labeling = std::vector<std::size_t>;
using IndexSet = std::vector<std::size_t>;

/// Enumeration guards for the oracles.
inline constexpr std::size_t kOracleMaxHypotheses = 10000;
inline constexpr std::size_t kOracleMaxSamples = 100000;
inline constexpr double kOracleMaxPairWork = 2e9;

/// Scores f(x, y) of one scoring function on n samples and k classes.
class ScoreTable {
 public:
  ScoreTable() = default;
  explicit ScoreTable(DenseMatrix scores, std::optional<std::vector<std::size_t>> labels = {})
      : scores_(std::move(scores)), labels_(std::move(labels)) {
    for (double v : scores_.values()) {
      if (!std::isfinite(v)) throw DomainError("ScoreTable: non-finite score");
    }
    if (labels_) {
      if (labels_->size() != scores_.rows()) {
        throw ShapeError("ScoreTable: " + std::to_string(labels_->size()) +
                         " labels for " + std::to_string(scores_.rows()) + " samples");
      }
      for (std::size_t y : *labels_) {
        if (y >= scores_.cols()) throw RangeError("ScoreTable: label out of range");
      }
    }
  }

  std::size_t samples() const noexcept { return scores_.rows(); }
  std::size_t classes() const noexcept { return scores_.cols(); }
  std::span<const double> scores(std::size_t i) const { return scores_.row(i); }
  const DenseMatrix& matrix() const noexcept { return scores_; }

  bool has_labels() const noexcept { return labels_.has_value(); }
  const std::vector<std::size_t>& labels() const {
    if (!labels_) throw UsageError("ScoreTable: labels required");
    return *labels_;
  }

  /// h_f(x) = argmax_y f(x, y), ties toward the smallest class index.
  Labeling labeling() const {
    Labeling h(samples());
    for (std::size_t i = 0; i < samples(); ++i) h[i] = argmax(scores(i));
    return h;
  }

 private:
  DenseMatrix scores_;
  std::optional<std::vector<std::size_t>> labels_;
};

/// A nonempty list of score tables over one shared sample set.
class FiniteHypothesisClass {
 public:
  FiniteHypothesisClass() = default;
  explicit FiniteHypothesisClass(std::vector<ScoreTable> tables) : tables_(std::move(tables)) {
    for (const auto& t : tables_) {
      if (t.samples() != tables_.front().samples() ||
          t.classes() != tables_.front().classes()) {
        throw ShapeError("FiniteHypothesisClass: tables disagree on (n, k)");
      }
    }
  }

  bool empty() const noexcept { return tables_.empty(); }
  std::size_t size() const noexcept { return tables_.size(); }
  std::size_t samples() const { return tables_.empty() ? 0 : tables_.front().samples(); }
  std::size_t classes() const { return tables_.empty() ? 0 : tables_.front().classes(); }
  const ScoreTable& operator[](std::size_t i) const { return tables_[i]; }
  const std::vector<ScoreTable>& tables() const noexcept { return tables_; }

  std::vector<Labeling> labelings() const {
    std::vector<Labeling> out;
    out.reserve(tables_.size());
    for (const auto& t : tables_) out.push_back(t.labeling());
    return out;
  }

 private:
  std::vector<ScoreTable> tables_;
};

/// Value of a sup together with the hypothesis (or pair) attaining it.
struct OracleResult {
  double value = 0.0;
  std::size_t argmax = 0;
  std::size_t argmax_second = 0;
};

// ---------------------------------------------------------------------------
// Pointwise quantities

/// Half the gap between the score of class y and the best competing class.
inline double margin_of(std::span<const double> scores, std::size_t y) {
  if (scores.size() < 2) throw DomainError("margin_of: need at least two classes");
  if (y >= scores.size()) throw RangeError("margin_of: label out of range");
  double best_other = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j != y && scores[j] > best_other) best_other = scores[j];
  }
  return 0.5 * (scores[y] - best_other);
}

inline double ramp(double x, double rho) {
  if (!(rho > 0.0)) throw DomainError("ramp: rho must be positive");
  if (x >= rho) return 0.0;
  if (x <= 0.0) return 1.0;
  return 1.0 - x / rho;
}

// ---------------------------------------------------------------------------
// Error rates and disparities

namespace detail {

inline IndexSet all_indices(std::size_t n) {
  IndexSet s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = i;
  return s;
}

inline void check_index_set(std::span<const std::size_t> s, std::size_t n, const char* who) {
  if (s.empty()) throw UsageError(std::string(who) + ": sample set must be nonempty");
  for (std::size_t i : s) {
    if (i >= n) throw RangeError(std::string(who) + ": sample index out of range");
  }
}

inline void check_class(const FiniteHypothesisClass& cls, const char* who) {
  if (cls.empty()) throw UsageError(std::string(who) + ": empty hypothesis class");
  if (cls.size() > kOracleMaxHypotheses || cls.samples() > kOracleMaxSamples) {
    throw SizeError(std::string(who) + ": class of " + std::to_string(cls.size()) +
                    " hypotheses over " + std::to_string(cls.samples()) +
                    " samples exceeds the enumeration limits");
  }
}

}  // namespace detail

/// Mean ramp loss of the labeled margins over `subset`.
inline double margin_error(const ScoreTable& f, double rho, std::span<const std::size_t> subset) {
  const auto& y = f.labels();
  detail::check_index_set(subset, f.samples(), "margin_error");
  double total = 0.0;
  for (std::size_t i : subset) total += ramp(margin_of(f.scores(i), y[i]), rho);
  return total / static_cast<double>(subset.size());
}

inline double margin_error(const ScoreTable& f, double rho) {
  return margin_error(f, rho, detail::all_indices(f.samples()));
}

inline double zero_one_error(const ScoreTable& f, std::span<const std::size_t> subset) {
  const auto& y = f.labels();
  detail::check_index_set(subset, f.samples(), "zero_one_error");
  std::size_t wrong = 0;
  for (std::size_t i : subset) wrong += argmax(f.scores(i)) != y[i] ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(subset.size());
}

inline double zero_one_error(const ScoreTable& f) {
  return zero_one_error(f, detail::all_indices(f.samples()));
}

inline double zero_one_disparity(const Labeling& h, const Labeling& h2,
                                 std::span<const std::size_t> subset) {
  if (h.size() != h2.size()) throw ShapeError("zero_one_disparity: labeling length mismatch");
  detail::check_index_set(subset, h.size(), "zero_one_disparity");
  std::size_t differ = 0;
  for (std::size_t i : subset) differ += h[i] != h2[i] ? 1 : 0;
  return static_cast<double>(differ) / static_cast<double>(subset.size());
}

inline double zero_one_disparity(const Labeling& h, const Labeling& h2) {
  if (h.size() != h2.size()) throw ShapeError("zero_one_disparity: labeling length mismatch");
  return zero_one_disparity(h, h2, detail::all_indices(h.size()));
}

/// Mean ramp of f2's margin at the pseudo-labels h_f, over `subset`.
inline double margin_disparity(const Labeling& h_f, const ScoreTable& f2, double rho,
                               std::span<const std::size_t> subset) {
  if (h_f.size() != f2.samples()) throw ShapeError("margin_disparity: sample count mismatch");
  detail::check_index_set(subset, f2.samples(), "margin_disparity");
  double total = 0.0;
  for (std::size_t i : subset) total += ramp(margin_of(f2.scores(i), h_f[i]), rho);
  return total / static_cast<double>(subset.size());
}

inline double margin_disparity(const ScoreTable& f, const ScoreTable& f2, double rho,
                               std::span<const std::size_t> subset) {
  if (f.samples() != f2.samples() || f.classes() != f2.classes()) {
    throw ShapeError("margin_disparity: score tables disagree on (n, k)");
  }
  return margin_disparity(f.labeling(), f2, rho, subset);
}

inline double margin_disparity(const ScoreTable& f, const ScoreTable& f2, double rho) {
  return margin_disparity(f, f2, rho, detail::all_indices(f.samples()));
}

// ---------------------------------------------------------------------------
// Enumeration oracles

/// sup over h2 in H of dis_S2(h, h2) - dis_S1(h, h2).
inline OracleResult zero_one_discrepancy(const Labeling& h, const FiniteHypothesisClass& hyp,
                                         std::span<const std::size_t> s1,
                                         std::span<const std::size_t> s2) {
  detail::check_class(hyp, "zero_one_discrepancy");
  if (h.size() != hyp.samples()) throw ShapeError("zero_one_discrepancy: labeling length mismatch");
  detail::check_index_set(s1, h.size(), "zero_one_discrepancy");
  detail::check_index_set(s2, h.size(), "zero_one_discrepancy");
  OracleResult best{-std::numeric_limits<double>::infinity(), 0, 0};
  for (std::size_t j = 0; j < hyp.size(); ++j) {
    const Labeling h2 = hyp[j].labeling();
    const double v = zero_one_disparity(h, h2, s2) - zero_one_disparity(h, h2, s1);
    if (v > best.value) best = {v, j, j};
  }
  return best;
}

/// sup over f2 in F of dis^rho_S2(f, f2) - dis^rho_S1(f, f2).
inline OracleResult margin_discrepancy_oracle(const ScoreTable& f,
                                              const FiniteHypothesisClass& fam,
                                              std::span<const std::size_t> s1,
                                              std::span<const std::size_t> s2, double rho) {
  detail::check_class(fam, "margin_discrepancy_oracle");
  if (!(rho > 0.0)) throw DomainError("margin_discrepancy_oracle: rho must be positive");
  if (f.samples() != fam.samples() || f.classes() != fam.classes()) {
    throw ShapeError("margin_discrepancy_oracle: f does not match the class shape");
  }
  detail::check_index_set(s1, f.samples(), "margin_discrepancy_oracle");
  detail::check_index_set(s2, f.samples(), "margin_discrepancy_oracle");
  const Labeling h = f.labeling();
  OracleResult best{-std::numeric_limits<double>::infinity(), 0, 0};
  for (std::size_t j = 0; j < fam.size(); ++j) {
    const double v = margin_disparity(h, fam[j], rho, s2) - margin_disparity(h, fam[j], rho, s1);
    if (v > best.value) best = {v, j, j};
  }
  return best;
}

/// Pairwise loss L(h2(x), h(x)) with values in [0, 1].
using LabelLoss = std::function<double(std::size_t, std::size_t)>;

inline LabelLoss zero_one_label_loss() {
  return [](std::size_t a, std::size_t b) { return a != b ? 1.0 : 0.0; };
}

/// (a - b)^2 / (k - 1)^2, which lies in [0, 1] for labels in {0..k-1}.
inline LabelLoss squared_label_loss(std::size_t k) {
  const double scale = k > 1 ? 1.0 / static_cast<double>((k - 1) * (k - 1)) : 0.0;
  return [scale](std::size_t a, std::size_t b) {
    const double d = static_cast<double>(a) - static_cast<double>(b);
    return d * d * scale;
  };
}

/// sup over pairs (h, h2) of |E_S2 L(h2, h) - E_S1 L(h2, h)|.
inline OracleResult discrepancy_divergence_oracle(const FiniteHypothesisClass& hyp,
                                                  std::span<const std::size_t> s1,
                                                  std::span<const std::size_t> s2,
                                                  const LabelLoss& loss) {
  detail::check_class(hyp, "discrepancy_divergence_oracle");
  detail::check_index_set(s1, hyp.samples(), "discrepancy_divergence_oracle");
  detail::check_index_set(s2, hyp.samples(), "discrepancy_divergence_oracle");
  const double work = static_cast<double>(hyp.size()) * static_cast<double>(hyp.size()) *
                      static_cast<double>(s1.size() + s2.size());
  if (work > kOracleMaxPairWork) {
    throw SizeError("discrepancy_divergence_oracle: pair enumeration too large");
  }
  const auto labels = hyp.labelings();
  auto expected = [&](const Labeling& h, const Labeling& h2, std::span<const std::size_t> s) {
    double total = 0.0;
    for (std::size_t i : s) {
      const double l = loss(h2[i], h[i]);
      if (!(l >= 0.0 && l <= 1.0)) {
        throw DomainError("discrepancy_divergence_oracle: loss value outside [0, 1]");
      }
      total += l;
    }
    return total / static_cast<double>(s.size());
  };
  OracleResult best{-std::numeric_limits<double>::infinity(), 0, 0};
  for (std::size_t a = 0; a < labels.size(); ++a) {
    for (std::size_t b = 0; b < labels.size(); ++b) {
      const double v = std::abs(expected(labels[a], labels[b], s2) -
                                expected(labels[a], labels[b], s1));
      if (v > best.value) best = {v, a, b};
    }
  }
  return best;
}

/// sup over pairs (h, h2) of |dis_S2(h, h2) - dis_S1(h, h2)|.
inline OracleResult hdeltah_divergence_oracle(const FiniteHypothesisClass& hyp,
                                              std::span<const std::size_t> s1,
                                              std::span<const std::size_t> s2) {
  return discrepancy_divergence_oracle(hyp, s1, s2, zero_one_label_loss());
}

}  // namespace mdat
