#pragma once

// Probe-based estimate of how far each domain's feature distribution sits
// from the centroid of all domains, measured with margin disparities.
//
// A probe classifier f (one rectifier hidden layer, like the model's
// classifiers) is fit on the pooled labeled features. For each
// domain i an adversary f' starts from f and is trained to agree with f's
// labels on domain i while disagreeing elsewhere. The reported value is
//
//   mean_{j != i} dis_j(f, f') - dis_i(f, f')
//
// with dis the ramp-loss margin disparity; this is the margin discrepancy
// between domain i and the centroid, rescaled by M / (M - 1) so that two fully
// separable domains score close to 1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mdat/errors.hpp"
#include "mdat/margin.hpp"
#include "mdat/numkernel.hpp"

namespace mdat {

/// Features of one domain: rows are samples; the first labels.size() rows are
/// labeled.
struct FeatureSet {
  DenseMatrix x;
  std::vector<std::size_t> labels;
};

struct ProbeOptions {
  double rho = 1.0;
  std::size_t budget = 200;  // full-batch Adam steps per probe
  double lr = 0.01;
  /// Rectifier hidden width of the probes, matching the classifier shape;
  /// 0 gives linear probes.
  std::size_t hidden = 32;
  std::uint64_t seed = 0;
};

struct AlignmentResult {
  std::vector<double> per_domain;
  double mean = 0.0;
  std::size_t budget = 0;
};

namespace detail {

inline constexpr double kProbeClamp = 1e-7;

/// x -> W2 relu(W1 x + b1) + b2, or x -> W x + b without a hidden layer.
struct ProbeNet {
  std::size_t k = 0;
  std::size_t d = 0;
  std::size_t h = 0;
  Vector theta;
  Vector pre;  // hidden pre-activations of the last forward
  Vector act;

  ProbeNet(std::size_t classes, std::size_t dim, std::size_t hidden)
      : k(classes), d(dim), h(hidden) {
    theta.assign(h == 0 ? k * d + k : h * d + h + k * h + k, 0.0);
  }

  void init(Rng rng) {
    auto fill = [&](std::size_t off, std::size_t rows, std::size_t cols) {
      const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (std::size_t i = 0; i < rows * cols; ++i) theta[off + i] = rng.uniform(-a, a);
    };
    if (h == 0) {
      fill(0, k, d);
    } else {
      fill(0, h, d);
      fill(h * d + h, k, h);
    }
  }

  void scores(std::span<const double> x, std::span<double> out) {
    const std::span<const double> t(theta);
    if (h == 0) {
      affine_forward(t.first(k * d), k, d, t.subspan(k * d, k), x, out);
      return;
    }
    pre.resize(h);
    act.resize(h);
    affine_forward(t.first(h * d), h, d, t.subspan(h * d, h), x, pre);
    for (std::size_t j = 0; j < h; ++j) act[j] = pre[j] > 0.0 ? pre[j] : 0.0;
    affine_forward(t.subspan(h * d + h, k * h), k, h, t.subspan(h * d + h + k * h, k), act, out);
  }

  /// Adds w * dloss/dtheta given the logit gradient of the last forward.
  void accumulate(std::span<const double> x, std::span<const double> dz, double w, Vector& grad) {
    if (h == 0) {
      for (std::size_t r = 0; r < k; ++r) {
        const double g = w * dz[r];
        if (g == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) grad[r * d + c] += g * x[c];
        grad[k * d + r] += g;
      }
      return;
    }
    const std::size_t w2 = h * d + h;
    const std::size_t b2 = w2 + k * h;
    for (std::size_t r = 0; r < k; ++r) {
      const double g = w * dz[r];
      if (g == 0.0) continue;
      for (std::size_t j = 0; j < h; ++j) grad[w2 + r * h + j] += g * act[j];
      grad[b2 + r] += g;
    }
    for (std::size_t j = 0; j < h; ++j) {
      if (pre[j] <= 0.0) continue;
      double g = 0.0;
      for (std::size_t r = 0; r < k; ++r) g += dz[r] * theta[w2 + r * h + j];
      g *= w;
      if (g == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) grad[j * d + c] += g * x[c];
      grad[h * d + j] += g;
    }
  }
};

/// Rows scaled so the pooled features are centred with unit mean square.
inline std::vector<DenseMatrix> normalise(const std::vector<FeatureSet>& sets) {
  const std::size_t d = sets.front().x.cols();
  Vector mu(d, 0.0);
  std::size_t count = 0;
  for (const auto& s : sets) {
    for (std::size_t r = 0; r < s.x.rows(); ++r) {
      for (std::size_t c = 0; c < d; ++c) mu[c] += s.x(r, c);
    }
    count += s.x.rows();
  }
  for (double& m : mu) m /= static_cast<double>(count);
  double ss = 0.0;
  for (const auto& s : sets) {
    for (std::size_t r = 0; r < s.x.rows(); ++r) {
      for (std::size_t c = 0; c < d; ++c) ss += (s.x(r, c) - mu[c]) * (s.x(r, c) - mu[c]);
    }
  }
  const double rms = std::sqrt(ss / static_cast<double>(count * d));
  const double scale = rms > 0.0 ? 1.0 / rms : 1.0;
  std::vector<DenseMatrix> out;
  for (const auto& s : sets) {
    Vector v(s.x.rows() * d);
    for (std::size_t r = 0; r < s.x.rows(); ++r) {
      for (std::size_t c = 0; c < d; ++c) v[r * d + c] = (s.x(r, c) - mu[c]) * scale;
    }
    out.emplace_back(s.x.rows(), d, std::move(v));
  }
  return out;
}

inline void fit_classifier(ProbeNet& f, const std::vector<DenseMatrix>& feats,
                           const std::vector<FeatureSet>& sets, const ProbeOptions& opt) {
  std::size_t labeled = 0;
  for (const auto& s : sets) labeled += s.labels.size();
  if (labeled == 0) return;
  AdamState adam(f.theta.size(), opt.lr);
  Vector grad(f.theta.size()), z(f.k), q(f.k);
  const double w = 1.0 / static_cast<double>(labeled);
  for (std::size_t step = 0; step < opt.budget; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < sets.size(); ++i) {
      for (std::size_t r = 0; r < sets[i].labels.size(); ++r) {
        const auto x = feats[i].row(r);
        f.scores(x, z);
        softmax(z, q);
        q[sets[i].labels[r]] -= 1.0;
        f.accumulate(x, q, w, grad);
      }
    }
    adam_step(f.theta, grad, adam);
  }
}

inline Labeling probe_labels(ProbeNet& f, const DenseMatrix& x) {
  Labeling h(x.rows());
  Vector z(f.k);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    f.scores(x.row(r), z);
    h[r] = argmax(z);
  }
  return h;
}

/// Logit gradient of -log p_h (agree) or -log(1 - p_h) (disagree), zero when
/// the probability is clamped.
inline void adversary_dz(std::span<const double> z, std::size_t h, bool agree, Vector& q,
                         Vector& dz) {
  softmax(z, q);
  double rest = 0.0;
  for (std::size_t m = 0; m < q.size(); ++m) {
    if (m != h) rest += q[m];
  }
  const double p = q[h];
  std::fill(dz.begin(), dz.end(), 0.0);
  if (agree) {
    if (p >= 1.0 - kProbeClamp || p <= kProbeClamp) return;
    for (std::size_t m = 0; m < q.size(); ++m) dz[m] = q[m] - (m == h ? 1.0 : 0.0);
  } else {
    if (rest <= kProbeClamp || rest >= 1.0 - kProbeClamp) return;
    const double c = p / rest;
    for (std::size_t m = 0; m < q.size(); ++m) dz[m] = c * ((m == h ? 1.0 : 0.0) - q[m]);
  }
}

inline double disparity(ProbeNet& f2, const DenseMatrix& x, const Labeling& h, double rho) {
  Vector scores(x.rows() * f2.k);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    f2.scores(x.row(r), std::span<double>(scores).subspan(r * f2.k, f2.k));
  }
  const ScoreTable table(DenseMatrix(x.rows(), f2.k, std::move(scores)));
  return margin_disparity(h, table, rho, detail::all_indices(x.rows()));
}

}  // namespace detail

/// Per-domain centroid discrepancy estimates; see the file comment.
inline AlignmentResult alignment_diagnostic(const std::vector<FeatureSet>& sets, std::size_t k,
                                            const ProbeOptions& opt) {
  if (sets.size() < 2) throw UsageError("alignment_diagnostic: need at least two domains");
  if (k < 2) throw DomainError("alignment_diagnostic: need at least two classes");
  if (!(opt.rho > 0.0)) throw DomainError("alignment_diagnostic: rho must be positive");
  const std::size_t d = sets.front().x.cols();
  for (const auto& s : sets) {
    if (s.x.rows() == 0) throw UsageError("alignment_diagnostic: empty domain");
    if (s.x.cols() != d) throw ShapeError("alignment_diagnostic: feature width mismatch");
    if (s.labels.size() > s.x.rows()) throw ShapeError("alignment_diagnostic: too many labels");
    for (auto y : s.labels) {
      if (y >= k) throw RangeError("alignment_diagnostic: label out of range");
    }
  }
  const auto feats = detail::normalise(sets);
  const std::size_t m = sets.size();

  detail::ProbeNet f(k, d, opt.hidden);
  f.init(Rng(opt.seed).child("probe"));
  detail::fit_classifier(f, feats, sets, opt);
  std::vector<Labeling> h;
  for (const auto& x : feats) h.push_back(detail::probe_labels(f, x));

  AlignmentResult out;
  out.budget = opt.budget;
  Vector grad(f.theta.size()), z(k), q(k), dz(k);
  for (std::size_t i = 0; i < m; ++i) {
    detail::ProbeNet adv = f;
    AdamState adam(adv.theta.size(), opt.lr);
    for (std::size_t step = 0; step < opt.budget; ++step) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        const bool agree = j == i;
        const double w = (agree ? 1.0 : 1.0 / static_cast<double>(m - 1)) /
                         static_cast<double>(feats[j].rows());
        for (std::size_t r = 0; r < feats[j].rows(); ++r) {
          const auto x = feats[j].row(r);
          adv.scores(x, z);
          detail::adversary_dz(z, h[j][r], agree, q, dz);
          adv.accumulate(x, dz, w, grad);
        }
      }
      adam_step(adv.theta, grad, adam);
    }
    double others = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) others += detail::disparity(adv, feats[j], h[j], opt.rho);
    }
    others /= static_cast<double>(m - 1);
    out.per_domain.push_back(others - detail::disparity(adv, feats[i], h[i], opt.rho));
  }
  out.mean = mean(out.per_domain);
  return out;
}

}  // namespace mdat
