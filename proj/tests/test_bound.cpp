#include <gtest/gtest.h>

#include <cmath>

#include "mdat/bound.hpp"

using namespace mdat;

namespace {

FunctionTable random_functions(Rng& r, std::size_t m, std::size_t n) {
  DenseMatrix v(m, n);
  for (double& x : v.values()) x = r.uniform(-1.0, 1.0);
  return FunctionTable(std::move(v));
}

// Sum over all 2^n sign vectors, no pairing trick.
double exact_by_enumeration(const FunctionTable& f) {
  const std::size_t n = f.samples();
  double total = 0.0;
  for (std::uint64_t mask = 0; mask < (1ULL << n); ++mask) {
    double best = -1e300;
    for (std::size_t j = 0; j < f.size(); ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += ((mask >> i) & 1 ? -1.0 : 1.0) * f.function(j)[i];
      best = std::max(best, acc);
    }
    total += best / static_cast<double>(n);
  }
  return total / static_cast<double>(1ULL << n);
}

DomainBoundTerms terms(const std::string& name, std::size_t n, double me, double disc,
                       double r1, double rh) {
  DomainBoundTerms t;
  t.name = name;
  t.n = n;
  t.margin_error = me;
  t.discrepancy_raw = disc;
  t.rademacher_pi1.value = r1;
  t.rademacher_pih.value = rh;
  return t;
}

}  // namespace

TEST(Rademacher, ExactMatchesPlainEnumeration) {
  Rng r(1);
  for (int t = 0; t < 10; ++t) {
    const auto f = random_functions(r, 1 + r.below(6), 1 + r.below(9));
    EXPECT_NEAR(rademacher_exact_tiny(f), exact_by_enumeration(f), 1e-14);
  }
}

TEST(Rademacher, SingletonClassIsZero) {
  Rng r(2);
  const auto f = random_functions(r, 1, 8);
  EXPECT_NEAR(rademacher_exact_tiny(f), 0.0, 1e-15);
  EXPECT_EQ(massart_bound(1, 8, 1.0), 0.0);
}

TEST(Rademacher, HandComputedPair) {
  // {g, -g} with g = (1, 1): E sup |sigma_1 + sigma_2| / 2 = 1/2.
  const FunctionTable f(DenseMatrix(2, 2, Vector{1, 1, -1, -1}));
  EXPECT_DOUBLE_EQ(rademacher_exact_tiny(f), 0.5);
}

TEST(Rademacher, MonteCarloNearExact) {
  Rng r(3);
  const auto f = random_functions(r, 10, 10);
  Rng mc(4);
  const auto est = empirical_rademacher(f, 4000, mc);
  EXPECT_EQ(est.draws, 4000u);
  EXPECT_EQ(est.sup_mode, SupMode::EnumerateFiniteClass);
  EXPECT_LE(std::abs(est.value - rademacher_exact_tiny(f)), 4.0 * est.std_error);
}

TEST(Rademacher, ParametricFamilyOverFiniteTableMatchesTable) {
  // Parameter selects a row; with enough restarts the search finds the sup.
  Rng r(5);
  const auto f = random_functions(r, 4, 6);
  ParametricFamily fam;
  fam.dim = 1;
  fam.samples = 6;
  fam.sample = [](Rng& g, std::span<double> th) { th[0] = g.uniform(0.0, 4.0); };
  fam.evaluate = [&](std::span<const double> th, std::span<double> out) {
    const auto j = static_cast<std::size_t>(std::clamp(th[0], 0.0, 3.999));
    std::copy(f.function(j).begin(), f.function(j).end(), out.begin());
  };
  Rng a(6);
  const auto p = empirical_rademacher(fam, 2000, a, SearchBudget{64, 4});
  EXPECT_EQ(p.sup_mode, SupMode::RandomSearchParametric);
  EXPECT_LE(std::abs(p.value - rademacher_exact_tiny(f)), 4.0 * p.std_error);
}

TEST(Massart, Formula) {
  EXPECT_DOUBLE_EQ(massart_bound(4, 8, 2.0), 2.0 * std::sqrt(2.0 * std::log(4.0) / 8.0));
  EXPECT_THROW(massart_bound(0, 8, 1.0), UsageError);
}

TEST(Massart, DominatesExact) {
  Rng r(7);
  for (int t = 0; t < 20; ++t) {
    const std::size_t m = 1 + r.below(20), n = 1 + r.below(12);
    const auto f = random_functions(r, m, n);
    EXPECT_LE(rademacher_exact_tiny(f), massart_bound(m, n, 1.0) + 1e-12);
  }
}

TEST(Rademacher, SizeLimit) {
  Rng r(8);
  EXPECT_THROW(rademacher_exact_tiny(random_functions(r, 2, 21)), SizeError);
  EXPECT_THROW(rademacher_exact_tiny(FunctionTable()), UsageError);
}

TEST(Projections, PiOneAndPiH) {
  const FiniteHypothesisClass fam({ScoreTable(DenseMatrix(2, 2, Vector{1, 2, 3, 0})),
                                   ScoreTable(DenseMatrix(2, 2, Vector{5, 4, 0, 6}))});
  const FunctionTable p1 = pi_one(fam);
  ASSERT_EQ(p1.size(), 4u);
  EXPECT_EQ(p1.function(1)[0], 2.0);  // f_0(x_0, y = 1)
  EXPECT_EQ(p1.function(2)[1], 0.0);  // f_1(x_1, y = 0)
  const FunctionTable ph = pi_h(fam);
  ASSERT_EQ(ph.size(), 4u);
  // f_0 evaluated at h_1 = (0, 1): (1, 0).
  EXPECT_EQ(ph.function(1)[0], 1.0);
  EXPECT_EQ(ph.function(1)[1], 0.0);
}

TEST(Confidence, ScalesAsInverseSqrtN) {
  for (double n : {10.0, 123.0, 5000.0}) {
    EXPECT_NEAR(confidence_term(0.05, n) / confidence_term(0.05, 2 * n), std::sqrt(2.0), 1e-9);
  }
  EXPECT_DOUBLE_EQ(confidence_term(0.1, 50), std::sqrt(std::log(20.0) / 100.0));
}

TEST(BoundReport, RejectsBadParameters) {
  EXPECT_THROW(validate_bound_params(1.0, 0.5), DomainError);
  EXPECT_THROW(validate_bound_params(1.0, 1.0 / 3.0), DomainError);
  EXPECT_THROW(validate_bound_params(1.0, 0.0), DomainError);
  EXPECT_THROW(validate_bound_params(0.0, 0.1), DomainError);
  EXPECT_NO_THROW(validate_bound_params(1.0, 0.3));
}

TEST(BoundReport, TotalIsSumOfPartsAndFloors) {
  std::vector<DomainBoundTerms> d{terms("a", 100, 0.1, 0.05, 0.2, 0.1),
                                  terms("b", 300, 0.2, -0.3, -0.01, 0.05)};
  RademacherEstimate pooled;
  pooled.value = 0.07;
  const BoundReport rep = assemble_bound_report(d, pooled, 2.0, 0.05, 2, "test", false);
  double sum = 0.0;
  for (const auto& p : rep.parts) sum += p.value;
  EXPECT_EQ(rep.total, sum);
  EXPECT_EQ(rep.n_bar, 200.0);
  EXPECT_EQ(rep.domains[1].discrepancy, 0.0);
  EXPECT_EQ(rep.domains[1].discrepancy_raw, -0.3);
  EXPECT_EQ(rep.domains[1].rademacher_pi1.value, 0.0);
  // Hand-computed total.
  const double m = 2.0, rho = 2.0;
  const double expected =
      (0.1 + 0.2) / m + 0.05 / m + (8 / rho) * 0.2 / m + (2 / rho) * (0.1 + 0.05) / m +
      2 * (confidence_term(0.05, 100) + confidence_term(0.05, 300)) / m + (2 / rho) * 0.07 +
      confidence_term(0.05, 200);
  EXPECT_NEAR(rep.total, expected, 1e-15);
  EXPECT_NE(rep.notes.find("lambda"), std::string::npos);
  const Json j = to_json(rep);
  EXPECT_EQ(j["total_minus_lambda"].get<double>(), rep.total);
}

TEST(BoundReport, DoublingSamplesShrinksConfidenceBySqrtTwo) {
  auto build = [](std::size_t scale) {
    std::vector<DomainBoundTerms> d{terms("a", 100 * scale, 0.1, 0.0, 0.1, 0.1),
                                    terms("b", 40 * scale, 0.1, 0.0, 0.1, 0.1)};
    return assemble_bound_report(d, RademacherEstimate{}, 1.0, 0.05, 2, "x", false);
  };
  const BoundReport a = build(1), b = build(2);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(a.domains[i].confidence / b.domains[i].confidence, std::sqrt(2.0), 1e-9);
  }
  EXPECT_NEAR(a.confidence_pooled / b.confidence_pooled, std::sqrt(2.0), 1e-9);
}

TEST(PooledSubsample, SizeAndBalance) {
  const std::vector<IndexSet> d{{0, 1, 2, 3, 4, 5}, {6, 7}, {8, 9, 10, 11}};
  Rng r(1);
  const IndexSet s = pooled_subsample(d, r);
  EXPECT_EQ(s.size(), 4u);
  std::size_t from_second = 0;
  for (auto i : s) from_second += (i == 6 || i == 7);
  EXPECT_GE(from_second, 1u);
}

TEST(FiniteBound, EndToEnd) {
  Rng r(9);
  const std::size_t n = 12;
  std::vector<ScoreTable> ts;
  for (int j = 0; j < 5; ++j) {
    Vector v(n * 2);
    for (double& x : v) x = r.uniform(-1, 1);
    ts.emplace_back(DenseMatrix(n, 2, v));
  }
  FiniteBoundInput in;
  in.family = FiniteHypothesisClass(ts);
  in.names = {"a", "b"};
  in.domain_samples = {{0, 1, 2, 3, 4, 5}, {6, 7, 8, 9, 10, 11}};
  in.domain_labeled = {{0, 1, 2}, {6, 7}};
  in.labels.assign(n, 0);
  for (std::size_t i = 0; i < n; i += 2) in.labels[i] = 1;
  BoundOptions opt;
  opt.draws = 100;
  Rng rng(2);
  const BoundReport rep = evaluate_mdtc_bound(in, opt, rng);
  ASSERT_EQ(rep.domains.size(), 2u);
  EXPECT_FALSE(rep.discrepancy_is_lower_surrogate);
  double sum = 0.0;
  for (const auto& p : rep.parts) sum += p.value;
  EXPECT_EQ(rep.total, sum);
  IndexSet pooled{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  EXPECT_EQ(rep.domains[0].discrepancy_raw,
            margin_discrepancy_oracle(in.family[0], in.family, in.domain_samples[0], pooled, 1.0)
                .value);
  Rng again(2);
  EXPECT_EQ(to_json_string(to_json(evaluate_mdtc_bound(in, opt, again))),
            to_json_string(to_json(rep)));
  opt.delta = 0.5;
  EXPECT_THROW(evaluate_mdtc_bound(in, opt, rng), DomainError);
}
