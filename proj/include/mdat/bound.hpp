#pragma once

// Empirical Rademacher complexity (Monte-Carlo and exact) and assembly of the
// computable terms of the multi-domain margin generalization bound.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mdat/errors.hpp"
#include "mdat/format.hpp"
#include "mdat/margin.hpp"
#include "mdat/numkernel.hpp"

namespace mdat {

enum class SupMode { EnumerateFiniteClass, RandomSearchParametric };

inline std::string_view to_string(SupMode m) {
  return m == SupMode::EnumerateFiniteClass ? "enumerate-finite-class"
                                            : "random-search-parametric";
}

struct RademacherEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t draws = 0;
  SupMode sup_mode = SupMode::EnumerateFiniteClass;
};

/// A finite class of real-valued functions restricted to n samples:
/// row j holds (g_j(z_1), ..., g_j(z_n)).
class FunctionTable {
 public:
  FunctionTable() = default;
  explicit FunctionTable(DenseMatrix values) : values_(std::move(values)) {}

  std::size_t size() const noexcept { return values_.rows(); }
  std::size_t samples() const noexcept { return values_.cols(); }
  std::span<const double> function(std::size_t j) const { return values_.row(j); }
  const DenseMatrix& matrix() const noexcept { return values_; }

  /// Restriction of every function to the samples in `subset`.
  FunctionTable restrict_to(std::span<const std::size_t> subset) const {
    DenseMatrix out(size(), subset.size());
    for (std::size_t j = 0; j < size(); ++j) {
      for (std::size_t c = 0; c < subset.size(); ++c) out(j, c) = values_(j, subset[c]);
    }
    return FunctionTable(std::move(out));
  }

 private:
  DenseMatrix values_;
};

/// {x -> f(x, y) : y in Y, f in F}
inline FunctionTable pi_one(const FiniteHypothesisClass& fam) {
  const std::size_t n = fam.samples();
  const std::size_t k = fam.classes();
  DenseMatrix out(fam.size() * k, n);
  for (std::size_t j = 0; j < fam.size(); ++j) {
    for (std::size_t y = 0; y < k; ++y) {
      for (std::size_t i = 0; i < n; ++i) out(j * k + y, i) = fam[j].scores(i)[y];
    }
  }
  return FunctionTable(std::move(out));
}

/// {x -> f(x, h(x)) : h in H, f in F}, enumerated over all (f, h) pairs.
inline FunctionTable pi_h(const FiniteHypothesisClass& fam) {
  const std::size_t n = fam.samples();
  const auto labels = fam.labelings();
  DenseMatrix out(fam.size() * fam.size(), n);
  for (std::size_t a = 0; a < fam.size(); ++a) {
    for (std::size_t b = 0; b < fam.size(); ++b) {
      for (std::size_t i = 0; i < n; ++i) {
        out(a * fam.size() + b, i) = fam[a].scores(i)[labels[b][i]];
      }
    }
  }
  return FunctionTable(std::move(out));
}

namespace detail {

inline RademacherEstimate summarize_draws(const std::vector<double>& sups, SupMode mode) {
  RademacherEstimate est;
  est.draws = sups.size();
  est.sup_mode = mode;
  est.value = mean(sups);
  if (sups.size() > 1) {
    std::vector<double> sq(sups.size());
    for (std::size_t d = 0; d < sups.size(); ++d) {
      sq[d] = (sups[d] - est.value) * (sups[d] - est.value);
    }
    const double var = pairwise_sum(sq) / static_cast<double>(sups.size() - 1);
    est.std_error = std::sqrt(var / static_cast<double>(sups.size()));
  }
  return est;
}

}  // namespace detail

/// Monte-Carlo estimate of E_sigma sup_g (1/n) sum_i sigma_i g(z_i) with the sup
/// taken exactly over the finite table.
inline RademacherEstimate empirical_rademacher(const FunctionTable& fam, std::size_t draws,
                                               Rng& rng) {
  if (fam.size() == 0 || fam.samples() == 0) {
    throw UsageError("empirical_rademacher: empty family or sample set");
  }
  if (draws == 0) throw UsageError("empirical_rademacher: draws must be >= 1");
  const std::size_t n = fam.samples();
  std::vector<double> sigma(n);
  std::vector<double> sups(draws);
  for (std::size_t d = 0; d < draws; ++d) {
    for (double& s : sigma) s = rng.sign();
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < fam.size(); ++j) {
      const auto g = fam.function(j);
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += sigma[i] * g[i];
      best = std::max(best, acc);
    }
    sups[d] = best / static_cast<double>(n);
  }
  return detail::summarize_draws(sups, SupMode::EnumerateFiniteClass);
}

inline RademacherEstimate empirical_rademacher(const FunctionTable& fam,
                                               std::span<const std::size_t> samples,
                                               std::size_t draws, Rng& rng) {
  if (samples.empty()) throw UsageError("empirical_rademacher: empty sample set");
  return empirical_rademacher(fam.restrict_to(samples), draws, rng);
}

/// A parametric function family evaluated on a fixed sample set.
struct ParametricFamily {
  std::size_t dim = 0;
  std::size_t samples = 0;
  /// Writes (g_theta(z_1), ..., g_theta(z_n)).
  std::function<void(std::span<const double> theta, std::span<double> values)> evaluate;
  /// Draws a starting parameter.
  std::function<void(Rng&, std::span<double> theta)> sample;
  double perturb_scale = 0.1;
};

struct SearchBudget {
  std::size_t restarts = 8;
  std::size_t local_steps = 16;
};

/// Monte-Carlo estimate for a parametric family; each sup is approximated by
/// multi-start random search followed by Gaussian local perturbation, so the
/// value is a lower estimate of the true complexity.
inline RademacherEstimate empirical_rademacher(const ParametricFamily& fam, std::size_t draws,
                                               Rng& rng, SearchBudget budget = {}) {
  if (fam.samples == 0 || fam.dim == 0 || !fam.evaluate || !fam.sample) {
    throw UsageError("empirical_rademacher: empty parametric family or sample set");
  }
  if (draws == 0) throw UsageError("empirical_rademacher: draws must be >= 1");
  if (budget.restarts == 0) throw UsageError("empirical_rademacher: restarts must be >= 1");
  const std::size_t n = fam.samples;
  std::vector<double> sigma(n), values(n), theta(fam.dim), best_theta(fam.dim), trial(fam.dim);
  std::vector<double> sups(draws);
  auto objective = [&](std::span<const double> th) {
    fam.evaluate(th, values);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += sigma[i] * values[i];
    return acc / static_cast<double>(n);
  };
  for (std::size_t d = 0; d < draws; ++d) {
    for (double& s : sigma) s = rng.sign();
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < budget.restarts; ++r) {
      fam.sample(rng, theta);
      const double v = objective(theta);
      if (v > best) {
        best = v;
        best_theta = theta;
      }
    }
    double scale = fam.perturb_scale;
    for (std::size_t s = 0; s < budget.local_steps; ++s) {
      for (std::size_t p = 0; p < fam.dim; ++p) trial[p] = best_theta[p] + scale * rng.normal();
      const double v = objective(trial);
      if (v > best) {
        best = v;
        best_theta = trial;
      } else {
        scale *= 0.7;
      }
    }
    sups[d] = best;
  }
  return detail::summarize_draws(sups, SupMode::RandomSearchParametric);
}

inline constexpr std::size_t kExactRademacherMaxSamples = 20;

/// Exact E_sigma sup over all 2^n sign vectors. Each sigma is paired with
/// -sigma, whose sup is minus the inf under sigma.
inline double rademacher_exact_tiny(const FunctionTable& fam) {
  const std::size_t n = fam.samples();
  if (fam.size() == 0 || n == 0) throw UsageError("rademacher_exact_tiny: empty family");
  if (n > kExactRademacherMaxSamples) {
    throw SizeError("rademacher_exact_tiny: n = " + std::to_string(n) + " exceeds " +
                    std::to_string(kExactRademacherMaxSamples));
  }
  const std::uint64_t half = std::uint64_t{1} << (n - 1);
  std::vector<double> contrib(half);
  for (std::uint64_t mask = 0; mask < half; ++mask) {
    // sigma_0 = +1; bit i-1 of mask set means sigma_i = -1.
    double hi = -std::numeric_limits<double>::infinity();
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < fam.size(); ++j) {
      const auto g = fam.function(j);
      double acc = g[0];
      for (std::size_t i = 1; i < n; ++i) acc += ((mask >> (i - 1)) & 1U) ? -g[i] : g[i];
      hi = std::max(hi, acc);
      lo = std::min(lo, acc);
    }
    contrib[mask] = hi - lo;
  }
  return pairwise_sum(contrib) / (2.0 * static_cast<double>(half) * static_cast<double>(n));
}

inline double rademacher_exact_tiny(const FunctionTable& fam,
                                    std::span<const std::size_t> samples) {
  return rademacher_exact_tiny(fam.restrict_to(samples));
}

/// Massart's finite-class lemma: range * sqrt(2 ln |F| / n).
inline double massart_bound(std::size_t class_size, std::size_t n, double range_bound) {
  if (class_size == 0 || n == 0) throw UsageError("massart_bound: class_size and n must be >= 1");
  if (class_size == 1) return 0.0;
  return range_bound * std::sqrt(2.0 * std::log(static_cast<double>(class_size)) /
                                 static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Bound assembly

inline double confidence_term(double delta, double n) {
  return std::sqrt(std::log(2.0 / delta) / (2.0 * n));
}

struct DomainBoundTerms {
  std::string name;
  std::size_t n = 0;
  double margin_error = 0.0;
  /// Value returned by the discrepancy estimator, before flooring at zero.
  double discrepancy_raw = 0.0;
  double discrepancy = 0.0;
  RademacherEstimate rademacher_pi1;
  RademacherEstimate rademacher_pih;
  double confidence = 0.0;
};

struct BoundPart {
  std::string name;
  double value = 0.0;
};

struct BoundReport {
  double rho = 0.0;
  double delta = 0.0;
  std::size_t k = 0;
  std::size_t domains_count = 0;
  double n_bar = 0.0;
  std::vector<DomainBoundTerms> domains;
  RademacherEstimate rademacher_pih_pooled;
  double confidence_pooled = 0.0;
  /// Every weighted summand of the right-hand side, in summation order.
  std::vector<BoundPart> parts;
  /// Right-hand side without the unknown constant lambda.
  double total = 0.0;
  std::string discrepancy_source;
  bool discrepancy_is_lower_surrogate = false;
  std::string notes;
};

inline constexpr std::string_view kLambdaNote =
    "total excludes lambda, the ideal joint error constant, which is independent of f and "
    "not computable from data; the bound reads err(f) <= total + lambda";
inline constexpr std::string_view kEmpiricalNote =
    "margin errors, discrepancies and Rademacher terms are evaluated on the empirical "
    "samples in place of their population counterparts; Rademacher estimates and "
    "discrepancies are floored at zero";

inline void validate_bound_params(double rho, double delta) {
  if (!(rho > 0.0)) throw DomainError("bound: rho must be positive");
  if (!(delta > 0.0 && delta < 1.0 / 3.0)) {
    throw DomainError("bound: delta must lie in (0, 1/3), got " + format_double(delta, 6));
  }
}

/// Sums the per-domain terms into the report. `domains[i].confidence` and the
/// floored discrepancy are filled in here.
inline BoundReport assemble_bound_report(std::vector<DomainBoundTerms> domains,
                                         RademacherEstimate pooled_pih, double rho, double delta,
                                         std::size_t k, std::string discrepancy_source,
                                         bool lower_surrogate) {
  validate_bound_params(rho, delta);
  if (domains.empty()) throw UsageError("bound: no domains");
  BoundReport rep;
  rep.rho = rho;
  rep.delta = delta;
  rep.k = k;
  rep.domains_count = domains.size();
  const double m = static_cast<double>(domains.size());
  double n_total = 0.0;
  for (const auto& d : domains) n_total += static_cast<double>(d.n);
  rep.n_bar = n_total / m;

  for (auto& d : domains) {
    if (d.n == 0) throw UsageError("bound: domain '" + d.name + "' has no samples");
    d.discrepancy = std::max(0.0, d.discrepancy_raw);
    d.rademacher_pi1.value = std::max(0.0, d.rademacher_pi1.value);
    d.rademacher_pih.value = std::max(0.0, d.rademacher_pih.value);
    d.confidence = confidence_term(delta, static_cast<double>(d.n));
  }
  pooled_pih.value = std::max(0.0, pooled_pih.value);
  rep.rademacher_pih_pooled = pooled_pih;
  rep.confidence_pooled = confidence_term(delta, rep.n_bar);

  for (const auto& d : domains) {
    rep.parts.push_back({"margin_error/" + d.name, d.margin_error / m});
    rep.parts.push_back({"discrepancy/" + d.name, d.discrepancy / m});
  }
  for (const auto& d : domains) {
    rep.parts.push_back({"rademacher_pi1/" + d.name, (8.0 / rho) * d.rademacher_pi1.value / m});
    rep.parts.push_back({"rademacher_pih/" + d.name, (2.0 / rho) * d.rademacher_pih.value / m});
    rep.parts.push_back({"confidence/" + d.name, 2.0 * d.confidence / m});
  }
  rep.parts.push_back({"rademacher_pih/pooled", (2.0 / rho) * pooled_pih.value});
  rep.parts.push_back({"confidence/pooled", rep.confidence_pooled});

  rep.total = 0.0;
  for (const auto& p : rep.parts) rep.total += p.value;
  rep.domains = std::move(domains);
  rep.discrepancy_source = std::move(discrepancy_source);
  rep.discrepancy_is_lower_surrogate = lower_surrogate;
  rep.notes = std::string(kLambdaNote) + "; " + std::string(kEmpiricalNote);
  return rep;
}

/// Finite-class input: every scorer is tabulated over the union of all domain
/// samples; `domain_samples[i]` indexes D_i and `domain_labeled[i]` its
/// labeled subset.
struct FiniteBoundInput {
  FiniteHypothesisClass family;
  std::size_t scorer = 0;
  std::vector<std::string> names;
  std::vector<IndexSet> domain_samples;
  std::vector<IndexSet> domain_labeled;
  std::vector<std::size_t> labels;
};

struct BoundOptions {
  double rho = 1.0;
  double delta = 0.05;
  std::size_t draws = 200;
  SearchBudget search;
};

inline double labeled_margin_error(const ScoreTable& f, std::span<const std::size_t> labels,
                                   std::span<const std::size_t> subset, double rho) {
  if (subset.empty()) throw UsageError("bound: domain without labeled samples");
  double total = 0.0;
  for (std::size_t i : subset) total += ramp(margin_of(f.scores(i), labels[i]), rho);
  return total / static_cast<double>(subset.size());
}

/// Pooled sample of size round(n_bar) drawn without replacement from the union
/// of the domains, cycling over domains so each contributes equally.
inline IndexSet pooled_subsample(const std::vector<IndexSet>& domains, Rng& rng) {
  std::vector<IndexSet> shuffled = domains;
  double n_total = 0.0;
  for (auto& d : shuffled) {
    rng.shuffle(d);
    n_total += static_cast<double>(d.size());
  }
  const auto target = static_cast<std::size_t>(
      std::llround(n_total / static_cast<double>(domains.size())));
  IndexSet out;
  std::vector<std::size_t> cursor(domains.size(), 0);
  while (out.size() < target) {
    bool progressed = false;
    for (std::size_t d = 0; d < shuffled.size() && out.size() < target; ++d) {
      if (cursor[d] < shuffled[d].size()) {
        out.push_back(shuffled[d][cursor[d]++]);
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline BoundReport evaluate_mdtc_bound(const FiniteBoundInput& in, const BoundOptions& opt,
                                       Rng& rng) {
  validate_bound_params(opt.rho, opt.delta);
  if (in.family.empty()) throw UsageError("bound: empty family");
  if (in.scorer >= in.family.size()) throw RangeError("bound: scorer index out of range");
  if (in.domain_samples.empty() || in.domain_samples.size() != in.domain_labeled.size() ||
      in.domain_samples.size() != in.names.size()) {
    throw ShapeError("bound: inconsistent domain descriptors");
  }
  if (in.labels.size() != in.family.samples()) throw ShapeError("bound: label count mismatch");

  const ScoreTable& f = in.family[in.scorer];
  const FunctionTable p1 = pi_one(in.family);
  const FunctionTable ph = pi_h(in.family);

  IndexSet pooled;
  for (const auto& d : in.domain_samples) pooled.insert(pooled.end(), d.begin(), d.end());
  std::sort(pooled.begin(), pooled.end());

  std::vector<DomainBoundTerms> terms;
  for (std::size_t i = 0; i < in.domain_samples.size(); ++i) {
    DomainBoundTerms t;
    t.name = in.names[i];
    t.n = in.domain_samples[i].size();
    t.margin_error = labeled_margin_error(f, in.labels, in.domain_labeled[i], opt.rho);
    t.discrepancy_raw =
        margin_discrepancy_oracle(f, in.family, in.domain_samples[i], pooled, opt.rho).value;
    Rng r = rng.child("domain", i);
    t.rademacher_pi1 = empirical_rademacher(p1, in.domain_samples[i], opt.draws, r);
    t.rademacher_pih = empirical_rademacher(ph, in.domain_samples[i], opt.draws, r);
    terms.push_back(std::move(t));
  }
  Rng pr = rng.child("pooled");
  const IndexSet pooled_sub = pooled_subsample(in.domain_samples, pr);
  const RademacherEstimate pooled_est = empirical_rademacher(ph, pooled_sub, opt.draws, pr);
  return assemble_bound_report(std::move(terms), pooled_est, opt.rho, opt.delta,
                               in.family.classes(), "finite-class enumeration oracle", false);
}

// ---------------------------------------------------------------------------
// Serialization

inline Json estimate_to_json(const RademacherEstimate& e) {
  Json j;
  j["value"] = e.value;
  j["std_error"] = e.std_error;
  j["draws"] = e.draws;
  j["sup_mode"] = std::string(to_string(e.sup_mode));
  return j;
}

inline Json to_json(const BoundReport& r) {
  Json j;
  j["rho"] = r.rho;
  j["delta"] = r.delta;
  j["k"] = r.k;
  j["M"] = r.domains_count;
  j["n_bar"] = r.n_bar;
  Json doms = Json::array();
  for (const auto& d : r.domains) {
    Json dj;
    dj["name"] = d.name;
    dj["n"] = d.n;
    dj["margin_error"] = d.margin_error;
    dj["discrepancy_raw"] = d.discrepancy_raw;
    dj["discrepancy"] = d.discrepancy;
    dj["rademacher_pi1"] = estimate_to_json(d.rademacher_pi1);
    dj["rademacher_pih"] = estimate_to_json(d.rademacher_pih);
    dj["confidence"] = d.confidence;
    doms.push_back(dj);
  }
  j["domains"] = doms;
  j["rademacher_pih_pooled"] = estimate_to_json(r.rademacher_pih_pooled);
  j["confidence_pooled"] = r.confidence_pooled;
  Json parts = Json::object();
  for (const auto& p : r.parts) parts[p.name] = p.value;
  j["parts"] = parts;
  j["total_minus_lambda"] = r.total;
  j["discrepancy_source"] = r.discrepancy_source;
  j["discrepancy_is_lower_surrogate"] = r.discrepancy_is_lower_surrogate;
  j["lambda"] = "excluded";
  j["notes"] = r.notes;
  return j;
}

/// Flat `key = value` lines.
inline std::string to_key_value(const BoundReport& r) {
  std::ostringstream os;
  auto kv = [&](const std::string& k, const std::string& v) { os << k << " = " << v << '\n'; };
  kv("rho", format_double(r.rho));
  kv("delta", format_double(r.delta));
  kv("k", std::to_string(r.k));
  kv("M", std::to_string(r.domains_count));
  kv("n_bar", format_double(r.n_bar));
  for (const auto& d : r.domains) {
    const std::string p = "domain." + d.name + ".";
    kv(p + "n", std::to_string(d.n));
    kv(p + "margin_error", format_double(d.margin_error));
    kv(p + "discrepancy_raw", format_double(d.discrepancy_raw));
    kv(p + "discrepancy", format_double(d.discrepancy));
    kv(p + "rademacher_pi1", format_double(d.rademacher_pi1.value));
    kv(p + "rademacher_pi1_std_error", format_double(d.rademacher_pi1.std_error));
    kv(p + "rademacher_pih", format_double(d.rademacher_pih.value));
    kv(p + "rademacher_pih_std_error", format_double(d.rademacher_pih.std_error));
    kv(p + "confidence", format_double(d.confidence));
  }
  kv("pooled.rademacher_pih", format_double(r.rademacher_pih_pooled.value));
  kv("pooled.confidence", format_double(r.confidence_pooled));
  for (const auto& p : r.parts) kv("part." + p.name, format_double(p.value));
  kv("total_minus_lambda", format_double(r.total));
  kv("discrepancy_source", r.discrepancy_source);
  kv("discrepancy_is_lower_surrogate", r.discrepancy_is_lower_surrogate ? "true" : "false");
  kv("notes", r.notes);
  return os.str();
}

}  // namespace mdat
