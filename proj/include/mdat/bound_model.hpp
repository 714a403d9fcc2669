#pragma once

// Bound report for a trained model. Features phi are fixed to the model's
// extractors; the scoring class F is the box of main-classifier parameters
// within `radius` (max-norm) of the trained ones. Suprema over F are found by
// random search, so Rademacher terms and discrepancies are lower estimates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mdat/bound.hpp"
#include "mdat/dataio.hpp"
#include "mdat/margin.hpp"
#include "mdat/model.hpp"

namespace mdat {

struct ModelBoundOptions {
  double rho = 1.0;
  double delta = 0.05;
  std::size_t draws = 200;
  SearchBudget search{4, 8};
  double radius = 0.05;
  /// Samples of L_i ∪ U_i used for the Rademacher and discrepancy terms.
  std::size_t samples_per_domain = 200;
  std::uint64_t seed = 1;
};

namespace detail {

/// The main classifier evaluated with a stand-alone parameter vector.
class BoxedClassifier {
 public:
  BoxedClassifier(const MdatModel& model, double radius)
      : layout_(model.layout(Part::Main)), radius_(radius), k_(model.spec().classes) {
    const auto p = model.component_params(model.component_index(Part::Main));
    center_.assign(p.begin(), p.end());
    for (auto& l : layout_.layers) {
      l.weight -= layout_.offset;
      l.bias -= layout_.offset;
    }
    layout_.offset = 0;
  }

  std::size_t dim() const { return center_.size(); }
  std::size_t classes() const { return k_; }
  std::span<const double> center() const { return center_; }

  void sample(Rng& rng, std::span<double> theta) const {
    for (std::size_t i = 0; i < center_.size(); ++i) {
      theta[i] = center_[i] + rng.uniform(-radius_, radius_);
    }
  }

  /// Scores of every row of `feats`, parameters projected into the box.
  void scores(std::span<const double> theta, const DenseMatrix& feats, std::span<double> out) {
    proj_.resize(center_.size());
    for (std::size_t i = 0; i < center_.size(); ++i) {
      proj_[i] = std::clamp(theta[i], center_[i] - radius_, center_[i] + radius_);
    }
    for (std::size_t r = 0; r < feats.rows(); ++r) {
      mlp_forward(std::span<const double>(proj_), layout_, feats.row(r), Mode::Eval, nullptr, 1.0,
                  trace_);
      const auto z = trace_.output();
      std::copy(z.begin(), z.end(), out.begin() + static_cast<std::ptrdiff_t>(r * k_));
    }
  }

 private:
  MlpLayout layout_;
  Vector center_;
  double radius_;
  std::size_t k_;
  Vector proj_;
  MlpTrace trace_;
};

inline DenseMatrix concat_features(const MdatModel& model, std::size_t domain,
                                   const std::vector<const SparseVector*>& xs) {
  const std::size_t d = model.spec().feature_dim();
  Vector v;
  v.reserve(xs.size() * d);
  ForwardTrace tr;
  for (const SparseVector* x : xs) {
    forward(model, domain, *x, Mode::Eval, nullptr, tr);
    v.insert(v.end(), tr.features.begin(), tr.features.end());
  }
  return DenseMatrix(xs.size(), d, std::move(v));
}

}  // namespace detail

inline BoundReport evaluate_model_bound(const MdatModel& model, const MultiDomainCorpus& corpus,
                                        const ModelBoundOptions& opt) {
  validate_bound_params(opt.rho, opt.delta);
  if (corpus.size() != model.domains() || corpus.vocab_dim != model.spec().input_dim ||
      corpus.k != model.spec().classes) {
    throw ShapeError("bound: checkpoint does not match the corpus");
  }
  if (!(opt.radius > 0.0)) throw DomainError("bound: radius must be positive");
  if (opt.samples_per_domain == 0) throw UsageError("bound: samples_per_domain must be >= 1");
  const Rng root(opt.seed);
  const std::size_t k = corpus.k;
  detail::BoxedClassifier cls(model, opt.radius);

  // Per-domain feature samples; the pooled set is their union.
  std::vector<DenseMatrix> feats;
  std::vector<DomainBoundTerms> terms;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const DomainDataset& ds = corpus.domains[i];
    if (ds.l() == 0) throw UsageError("bound: domain '" + ds.name + "' has no labeled samples");
    std::vector<std::size_t> idx(ds.n());
    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
    Rng r = root.child("subsample").child(ds.name);
    r.shuffle(idx);
    idx.resize(std::min(opt.samples_per_domain, idx.size()));
    std::sort(idx.begin(), idx.end());
    std::vector<const SparseVector*> xs;
    for (auto j : idx) xs.push_back(&ds.pooled(j));
    feats.push_back(detail::concat_features(model, i, xs));

    std::vector<const SparseVector*> lx;
    for (const auto& s : ds.labeled) lx.push_back(&s.x);
    const DenseMatrix lf = detail::concat_features(model, i, lx);
    Vector sc(lf.rows() * k);
    cls.scores(cls.center(), lf, sc);
    double err = 0.0;
    for (std::size_t j = 0; j < ds.l(); ++j) {
      err += ramp(margin_of(std::span<const double>(sc).subspan(j * k, k), ds.labeled[j].label),
                  opt.rho);
    }
    DomainBoundTerms t;
    t.name = ds.name;
    t.n = ds.n();
    t.margin_error = err / static_cast<double>(ds.l());
    terms.push_back(std::move(t));
  }
  DenseMatrix pooled;
  {
    Vector v;
    std::size_t rows = 0;
    for (const auto& f : feats) {
      v.insert(v.end(), f.values().begin(), f.values().end());
      rows += f.rows();
    }
    pooled = DenseMatrix(rows, model.spec().feature_dim(), std::move(v));
  }

  const std::size_t dim = cls.dim();
  auto pi1_family = [&](const DenseMatrix& x) {
    ParametricFamily fam;
    fam.dim = dim + 1;  // last coordinate selects the class
    fam.samples = x.rows();
    fam.perturb_scale = opt.radius / 2.0;
    fam.sample = [&cls, k](Rng& r, std::span<double> th) {
      cls.sample(r, th.first(cls.dim()));
      th[cls.dim()] = r.uniform(0.0, static_cast<double>(k));
    };
    fam.evaluate = [&cls, &x, k](std::span<const double> th, std::span<double> out) {
      Vector sc(x.rows() * k);
      cls.scores(th.first(cls.dim()), x, sc);
      const double t = std::clamp(th[cls.dim()], 0.0, static_cast<double>(k) - 0.5);
      const auto y = static_cast<std::size_t>(t);
      for (std::size_t r = 0; r < x.rows(); ++r) out[r] = sc[r * k + y];
    };
    return fam;
  };
  auto pih_family = [&](const DenseMatrix& x) {
    ParametricFamily fam;
    fam.dim = 2 * dim;  // scorer f, then labeler h
    fam.samples = x.rows();
    fam.perturb_scale = opt.radius / 2.0;
    fam.sample = [&cls](Rng& r, std::span<double> th) {
      cls.sample(r, th.first(cls.dim()));
      cls.sample(r, th.subspan(cls.dim()));
    };
    fam.evaluate = [&cls, &x, k](std::span<const double> th, std::span<double> out) {
      Vector sf(x.rows() * k), sh(x.rows() * k);
      cls.scores(th.first(cls.dim()), x, sf);
      cls.scores(th.subspan(cls.dim()), x, sh);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const std::size_t y = argmax(std::span<const double>(sh).subspan(r * k, k));
        out[r] = sf[r * k + y];
      }
    };
    return fam;
  };

  // Discrepancy sup over f' in F by random search, f fixed at the centre.
  Vector centre_pool(pooled.rows() * k);
  cls.scores(cls.center(), pooled, centre_pool);
  Labeling h_pool(pooled.rows());
  for (std::size_t r = 0; r < pooled.rows(); ++r) {
    h_pool[r] = argmax(std::span<const double>(centre_pool).subspan(r * k, k));
  }
  auto disparity_on = [&](std::span<const double> th, const DenseMatrix& x, const Labeling& h) {
    Vector sc(x.rows() * k);
    cls.scores(th, x, sc);
    double s = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      s += ramp(margin_of(std::span<const double>(sc).subspan(r * k, k), h[r]), opt.rho);
    }
    return s / static_cast<double>(x.rows());
  };

  std::size_t offset = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const DenseMatrix& x = feats[i];
    const Labeling h_i(h_pool.begin() + static_cast<std::ptrdiff_t>(offset),
                       h_pool.begin() + static_cast<std::ptrdiff_t>(offset + x.rows()));
    offset += x.rows();
    Rng r = root.child("domain", i);
    auto objective = [&](std::span<const double> th) {
      return disparity_on(th, pooled, h_pool) - disparity_on(th, x, h_i);
    };
    Vector th(dim), best_th(cls.center().begin(), cls.center().end()), trial(dim);
    double best = objective(best_th);
    for (std::size_t s = 0; s < opt.search.restarts; ++s) {
      cls.sample(r, th);
      const double v = objective(th);
      if (v > best) {
        best = v;
        best_th = th;
      }
    }
    double scale = opt.radius / 2.0;
    for (std::size_t s = 0; s < opt.search.local_steps; ++s) {
      for (std::size_t p = 0; p < dim; ++p) trial[p] = best_th[p] + scale * r.normal();
      const double v = objective(trial);
      if (v > best) {
        best = v;
        best_th = trial;
      } else {
        scale *= 0.7;
      }
    }
    terms[i].discrepancy_raw = best;
    terms[i].rademacher_pi1 = empirical_rademacher(pi1_family(x), opt.draws, r, opt.search);
    terms[i].rademacher_pih = empirical_rademacher(pih_family(x), opt.draws, r, opt.search);
  }

  // Pooled sample of size round(n_bar) over the subsampled domains.
  std::vector<IndexSet> dom_idx;
  offset = 0;
  for (const auto& f : feats) {
    IndexSet s(f.rows());
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = offset + j;
    offset += f.rows();
    dom_idx.push_back(std::move(s));
  }
  Rng pr = root.child("pooled");
  const IndexSet sub = pooled_subsample(dom_idx, pr);
  Vector pv;
  for (auto j : sub) {
    const auto row = pooled.row(j);
    pv.insert(pv.end(), row.begin(), row.end());
  }
  const DenseMatrix pooled_sub(sub.size(), pooled.cols(), std::move(pv));
  const RademacherEstimate pooled_est =
      empirical_rademacher(pih_family(pooled_sub), opt.draws, pr, opt.search);

  BoundReport rep = assemble_bound_report(std::move(terms), pooled_est, opt.rho, opt.delta, k,
                                          "random search over a parameter box around the main "
                                          "classifier",
                                          true);
  rep.notes += "; Rademacher and discrepancy terms use up to " +
               std::to_string(opt.samples_per_domain) + " samples per domain and a box of radius " +
               format_double(opt.radius, 6) + " around the trained main classifier";
  return rep;
}

}  // namespace mdat
