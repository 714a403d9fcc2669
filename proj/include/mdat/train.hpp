#pragma once

// Losses, update steps and the training loop for the adversarial multi-domain
// model, plus the l1-discrepancy ablation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mdat/dataio.hpp"
#include "mdat/diagnostic.hpp"
#include "mdat/errors.hpp"
#include "mdat/format.hpp"
#include "mdat/model.hpp"
#include "mdat/numkernel.hpp"

namespace mdat {

inline constexpr double kProbClamp = 1e-7;

enum class Variant { Mdat, MdatL1 };

inline std::string to_string(Variant v) { return v == Variant::Mdat ? "mdat" : "mdat-l1"; }

inline Variant parse_variant(std::string_view s) {
  if (s == "mdat") return Variant::Mdat;
  if (s == "mdat-l1") return Variant::MdatL1;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected mdat or mdat-l1)");
}

struct TrainConfig {
  double alpha = 0.5;
  double beta = 4.0;
  double lr = 1e-4;
  std::size_t batch = 8;
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;
  Variant variant = Variant::Mdat;
  /// Domain whose labels are withheld and which is evaluated with the
  /// private half zeroed.
  std::optional<std::string> msuda_target;
  /// Share of each labeled pool held out for best-epoch selection; 0 keeps
  /// the last epoch.
  double dev_fraction = 0.1;

  bool diagnostics = true;
  std::size_t diag_every = 0;  // 0: initial and final epoch only
  std::size_t probe_budget = 200;
  std::size_t probe_samples = 300;
  std::size_t probe_hidden = 32;
  double probe_lr = 0.01;
  /// Margin for the diagnostic; 0 means ln(beta), or 1 when beta = 1.
  double probe_rho = 0.0;

  /// Architecture; input_dim, domains and classes are taken from the corpus.
  ModelSpec model;

  double rho() const { return std::log(beta); }

  double diagnostic_rho() const {
    if (probe_rho > 0.0) return probe_rho;
    return rho() > 0.0 ? rho() : 1.0;
  }

  ProbeOptions probe_options() const {
    ProbeOptions o;
    o.rho = diagnostic_rho();
    o.budget = probe_budget;
    o.lr = probe_lr;
    o.hidden = probe_hidden;
    o.seed = seed;
    return o;
  }

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be > 0");
    if (!(beta >= 1.0) || !std::isfinite(beta)) throw ConfigError("beta must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
    if (batch == 0) throw ConfigError("batch must be >= 1");
    if (eval_every == 0) throw ConfigError("eval_every must be >= 1");
    if (!(dev_fraction >= 0.0) || dev_fraction >= 1.0) {
      throw ConfigError("dev_fraction must lie in [0, 1)");
    }
    if (probe_samples == 0) throw ConfigError("probe_samples must be >= 1");
    if (!(probe_lr > 0.0)) throw ConfigError("probe_lr must be > 0");
    if (probe_rho < 0.0) throw ConfigError("probe_rho must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Batches and traces

/// Resolved samples of one training iteration.
struct StepBatch {
  struct Domain {
    std::size_t domain = 0;
    bool msuda = false;
    std::vector<const SparseVector*> labeled;
    std::vector<std::size_t> labels;
    std::vector<const SparseVector*> unlabeled;  // drawn from L_i ∪ U_i
  };
  std::vector<Domain> domains;
};

inline StepBatch make_step_batch(const MultiDomainCorpus& corpus, const MiniBatchPair& pair,
                                 std::optional<std::size_t> msuda_target = std::nullopt) {
  if (pair.domains.size() != corpus.size()) throw ShapeError("batch/corpus domain count mismatch");
  StepBatch b;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const DomainDataset& d = corpus.domains[i];
    StepBatch::Domain sd;
    sd.domain = i;
    sd.msuda = msuda_target && *msuda_target == i;
    for (auto j : pair.domains[i].labeled) {
      sd.labeled.push_back(&d.labeled.at(j).x);
      sd.labels.push_back(d.labeled[j].label);
    }
    for (auto j : pair.domains[i].unlabeled) sd.unlabeled.push_back(&d.pooled(j));
    b.domains.push_back(std::move(sd));
  }
  return b;
}

struct BatchTraces {
  std::vector<std::vector<ForwardTrace>> labeled;
  std::vector<std::vector<ForwardTrace>> unlabeled;
};

/// Train draws fresh dropout masks; TrainFrozen reuses those already in `tr`.
inline void forward_batch(const MdatModel& model, const StepBatch& b, Mode mode, Rng* rng,
                          BatchTraces& tr) {
  tr.labeled.resize(b.domains.size());
  tr.unlabeled.resize(b.domains.size());
  for (std::size_t d = 0; d < b.domains.size(); ++d) {
    const auto& sd = b.domains[d];
    tr.labeled[d].resize(sd.labeled.size());
    tr.unlabeled[d].resize(sd.unlabeled.size());
    for (std::size_t s = 0; s < sd.labeled.size(); ++s) {
      forward(model, sd.domain, *sd.labeled[s], mode, rng, tr.labeled[d][s], sd.msuda);
    }
    for (std::size_t s = 0; s < sd.unlabeled.size(); ++s) {
      forward(model, sd.domain, *sd.unlabeled[s], mode, rng, tr.unlabeled[d][s], sd.msuda);
    }
  }
}

/// dLoss/dlogits per sample; empty vectors stand for zero.
struct LogitGrads {
  struct Sample {
    Vector main;
    Vector aux;
  };
  std::vector<std::vector<Sample>> labeled;
  std::vector<std::vector<Sample>> unlabeled;

  void reset(const BatchTraces& tr) {
    auto shape = [](auto& dst, const auto& src) {
      dst.resize(src.size());
      for (std::size_t d = 0; d < src.size(); ++d) {
        dst[d].resize(src[d].size());
        for (auto& s : dst[d]) {
          s.main.clear();
          s.aux.clear();
        }
      }
    };
    shape(labeled, tr.labeled);
    shape(unlabeled, tr.unlabeled);
  }
};

namespace detail {

inline void add_into(Vector& dst, std::span<const double> src, double scale) {
  if (dst.empty()) dst.assign(src.size(), 0.0);
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += scale * src[i];
}

inline void check_loss(double v, const char* which, const StepBatch::Domain& d, std::size_t s) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string(which) + ": non-finite loss at domain " +
                       std::to_string(d.domain) + ", batch sample " + std::to_string(s));
  }
}

inline double log_softmax_at(std::span<const double> z, std::size_t y) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  return z[y] - mx - std::log(s);
}

/// Appends NLL/n gradient (softmax - onehot) * scale / n into g.
inline double nll_term(std::span<const double> z, std::size_t y, double w, Vector& g, Vector& q) {
  q.resize(z.size());
  softmax(z, q);
  q[y] -= 1.0;
  add_into(g, q, w);
  return -log_softmax_at(z, y);
}

struct JdParts {
  double value;
  bool clamped;
};

/// beta * log p + log(1 - p) at p = softmax(aux)[sigma]; adds w * d/dz_aux.
inline JdParts jd_sample(std::span<const double> aux, std::size_t sigma, double beta, double w,
                         Vector* g, Vector& q) {
  q.resize(aux.size());
  softmax(aux, q);
  const double p = q[sigma];
  double rest = 0.0;
  for (std::size_t m = 0; m < q.size(); ++m) {
    if (m != sigma) rest += q[m];
  }
  if (p < kProbClamp) {
    return {beta * std::log(kProbClamp) + std::log1p(-kProbClamp), true};
  }
  if (rest < kProbClamp) {
    return {beta * std::log1p(-kProbClamp) + std::log(kProbClamp), true};
  }
  if (g != nullptr) {
    const double c = (beta - p / rest) * w;
    if (g->empty()) g->assign(q.size(), 0.0);
    for (std::size_t m = 0; m < q.size(); ++m) (*g)[m] += c * ((m == sigma ? 1.0 : 0.0) - q[m]);
  }
  return {beta * std::log(p) + std::log(rest), false};
}

/// sum_j |q_j - q'_j|; adds w * d/dz (main) and w * d/dz' (aux).
inline double l1_sample(std::span<const double> zm, std::span<const double> za, double w,
                        Vector* gm, Vector* ga, Vector& q, Vector& qa) {
  q.resize(zm.size());
  qa.resize(za.size());
  softmax(zm, q);
  softmax(za, qa);
  double v = 0.0;
  double sq = 0.0;
  double sqa = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    const double diff = q[j] - qa[j];
    v += std::abs(diff);
    const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    sq += s * q[j];
    sqa += s * qa[j];
  }
  if (gm != nullptr && ga != nullptr) {
    if (gm->empty()) gm->assign(q.size(), 0.0);
    if (ga->empty()) ga->assign(q.size(), 0.0);
    for (std::size_t m = 0; m < q.size(); ++m) {
      const double diff = q[m] - qa[m];
      const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      (*gm)[m] += w * q[m] * (s - sq);
      (*ga)[m] -= w * qa[m] * (s - sqa);
    }
  }
  return v;
}

}  // namespace detail

/// Per-sample J_D term beta * log p + log(1 - p), with p clamped.
inline double jd_term(double p, double beta) {
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return beta * std::log(pc) + std::log1p(-pc);
}

// ---------------------------------------------------------------------------
// Losses. Each returns the unscaled scalar and, when `g` is non-null, adds
// scale * dLoss/dlogits into it.

/// Sum over domains of the batch-mean NLL of the main classifier.
inline double loss_jc(const StepBatch& b, const BatchTraces& tr, double scale, LogitGrads* g) {
  double total = 0.0;
  Vector q;
  for (std::size_t d = 0; d < b.domains.size(); ++d) {
    const auto& sd = b.domains[d];
    if (sd.labeled.empty()) continue;
    const double w = scale / static_cast<double>(sd.labeled.size());
    double sum = 0.0;
    for (std::size_t s = 0; s < sd.labeled.size(); ++s) {
      Vector scratch;
      Vector& dst = g != nullptr ? g->labeled[d][s].main : scratch;
      const double v = detail::nll_term(tr.labeled[d][s].logits_main(), sd.labels[s], w, dst, q);
      detail::check_loss(v, "J_C", sd, s);
      sum += v;
    }
    total += sum / static_cast<double>(sd.labeled.size());
  }
  return total;
}

/// Sum over domains of the mean over labeled and unlabeled batch samples of
/// beta * log p' + log(1 - p'), p' the auxiliary probability of the main
/// classifier's argmax label. The pseudo-label is a constant: only the
/// auxiliary logits receive gradient.
inline double loss_jd(const StepBatch& b, const BatchTraces& tr, double beta, double scale,
                      LogitGrads* g) {
  double total = 0.0;
  Vector q;
  for (std::size_t d = 0; d < b.domains.size(); ++d) {
    const auto& sd = b.domains[d];
    const std::size_t n = sd.labeled.size() + sd.unlabeled.size();
    if (n == 0) continue;
    const double w = scale / static_cast<double>(n);
    double sum = 0.0;
    auto visit = [&](const ForwardTrace& t, LogitGrads::Sample* gs, std::size_t s) {
      const std::size_t sigma = argmax(t.logits_main());
      const auto r = detail::jd_sample(t.logits_aux(), sigma, beta, w,
                                       gs != nullptr ? &gs->aux : nullptr, q);
      detail::check_loss(r.value, "J_D", sd, s);
      sum += r.value;
    };
    for (std::size_t s = 0; s < sd.labeled.size(); ++s) {
      visit(tr.labeled[d][s], g != nullptr ? &g->labeled[d][s] : nullptr, s);
    }
    for (std::size_t s = 0; s < sd.unlabeled.size(); ++s) {
      visit(tr.unlabeled[d][s], g != nullptr ? &g->unlabeled[d][s] : nullptr,
            sd.labeled.size() + s);
    }
    total += sum / static_cast<double>(n);
  }
  return total;
}

/// Ablation: NLL of both classifiers on the labeled batches.
inline double loss_jc_prime(const StepBatch& b, const BatchTraces& tr, double scale,
                            LogitGrads* g) {
  double total = 0.0;
  Vector q;
  for (std::size_t d = 0; d < b.domains.size(); ++d) {
    const auto& sd = b.domains[d];
    if (sd.labeled.empty()) continue;
    const double w = scale / static_cast<double>(sd.labeled.size());
    double sum = 0.0;
    for (std::size_t s = 0; s < sd.labeled.size(); ++s) {
      Vector sm, sa;
      Vector& gm = g != nullptr ? g->labeled[d][s].main : sm;
      Vector& ga = g != nullptr ? g->labeled[d][s].aux : sa;
      const double v = detail::nll_term(tr.labeled[d][s].logits_main(), sd.labels[s], w, gm, q) +
                       detail::nll_term(tr.labeled[d][s].logits_aux(), sd.labels[s], w, ga, q);
      detail::check_loss(v, "J'_C", sd, s);
      sum += v;
    }
    total += sum / static_cast<double>(sd.labeled.size());
  }
  return total;
}

/// Ablation: l1 distance between the two classifiers' softmax vectors, batch
/// mean over labeled and unlabeled samples, summed over domains.
inline double loss_jd_prime(const StepBatch& b, const BatchTraces& tr, double scale,
                            LogitGrads* g) {
  double total = 0.0;
  Vector q, qa;
  for (std::size_t d = 0; d < b.domains.size(); ++d) {
    const auto& sd = b.domains[d];
    const std::size_t n = sd.labeled.size() + sd.unlabeled.size();
    if (n == 0) continue;
    const double w = scale / static_cast<double>(n);
    double sum = 0.0;
    auto visit = [&](const ForwardTrace& t, LogitGrads::Sample* gs) {
      sum += detail::l1_sample(t.logits_main(), t.logits_aux(), w,
                               gs != nullptr ? &gs->main : nullptr,
                               gs != nullptr ? &gs->aux : nullptr, q, qa);
    };
    for (std::size_t s = 0; s < sd.labeled.size(); ++s) {
      visit(tr.labeled[d][s], g != nullptr ? &g->labeled[d][s] : nullptr);
    }
    for (std::size_t s = 0; s < sd.unlabeled.size(); ++s) {
      visit(tr.unlabeled[d][s], g != nullptr ? &g->unlabeled[d][s] : nullptr);
    }
    total += sum / static_cast<double>(n);
  }
  return total;
}

/// Runs backward for every sample with a nonzero logit gradient.
inline void accumulate_backward(const MdatModel& model, const BatchTraces& tr,
                                const LogitGrads& g, const Routing& routing,
                                std::span<double> grad, BackwardWorkspace& ws) {
  auto run = [&](const auto& traces, const auto& grads) {
    for (std::size_t d = 0; d < traces.size(); ++d) {
      for (std::size_t s = 0; s < traces[d].size(); ++s) {
        const auto& gs = grads[d][s];
        if (gs.main.empty() && gs.aux.empty()) continue;
        backward(model, traces[d][s], gs.main, gs.aux, routing, grad, ws);
      }
    }
  };
  run(tr.labeled, g.labeled);
  run(tr.unlabeled, g.unlabeled);
}

// ---------------------------------------------------------------------------
// Update steps

/// Adam states keyed by (sub-step, component), allocated on first use.
class Optimizers {
 public:
  Optimizers() = default;
  Optimizers(const MdatModel& model, double lr)
      : model_sizes_(model.component_count()), lr_(lr) {
    for (std::size_t c = 0; c < model.component_count(); ++c) {
      model_sizes_[c] = model.component(c).size;
    }
  }

  AdamState& at(std::size_t stage, std::size_t component) {
    const std::size_t key = stage * model_sizes_.size() + component;
    if (states_.size() <= key) states_.resize(key + 1);
    AdamState& s = states_[key];
    if (s.m.size() != model_sizes_.at(component)) s = AdamState(model_sizes_[component], lr_);
    return s;
  }

 private:
  std::vector<std::size_t> model_sizes_;
  double lr_ = 1e-4;
  std::vector<AdamState> states_;
};

struct StepScratch {
  BatchTraces traces;
  LogitGrads grads;
  Vector grad;
  BackwardWorkspace ws;
};

struct StepLosses {
  double jc = 0.0;      // J_C, or J'_C for the ablation
  double jd = 0.0;      // J_D in sub-step (a), or J'_D in step (2)
  double jd_adv = 0.0;  // J_D in sub-step (b), or J'_D in step (3)
};

/// Called after each sub-step with its zero-based index.
using SubstepObserver = std::function<void(std::size_t)>;

namespace detail {

inline void apply_adam(MdatModel& model, std::span<const double> grad, Optimizers& opt,
                       std::size_t stage, const std::vector<std::size_t>& components) {
  for (auto c : components) {
    const auto& lay = model.component(c);
    adam_step(model.component_params(c), grad.subspan(lay.offset, lay.size), opt.at(stage, c));
  }
}

inline std::vector<std::size_t> components_of(const MdatModel& model, bool extractors, bool main,
                                              bool aux) {
  std::vector<std::size_t> out;
  if (extractors) {
    out.push_back(model.component_index(Part::Shared));
    for (std::size_t i = 0; i < model.domains(); ++i) {
      out.push_back(model.component_index(Part::Specific, i));
    }
  }
  if (main) out.push_back(model.component_index(Part::Main));
  if (aux) out.push_back(model.component_index(Part::Aux));
  return out;
}

inline void begin_substep(const MdatModel& model, const StepBatch& b, Rng& rng,
                          StepScratch& ws) {
  forward_batch(model, b, Mode::Train, &rng, ws.traces);
  ws.grads.reset(ws.traces);
  ws.grad.assign(model.parameter_count(), 0.0);
}

}  // namespace detail

/// (a) descend extractors and the main classifier on J_C + alpha * J_D;
/// (b) after a fresh forward pass, ascend the auxiliary classifier on J_D.
/// alpha = 0 is accepted here and reduces (a) to supervised training.
inline StepLosses mdat_step(MdatModel& model, const StepBatch& b, const TrainConfig& cfg,
                            Optimizers& opt, Rng& rng, StepScratch& ws,
                            const SubstepObserver& observe = {}) {
  if (!(cfg.alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  StepLosses out;
  detail::begin_substep(model, b, rng, ws);
  out.jc = loss_jc(b, ws.traces, 1.0, &ws.grads);
  out.jd = loss_jd(b, ws.traces, cfg.beta, cfg.alpha, &ws.grads);
  accumulate_backward(model, ws.traces, ws.grads, Routing::extractors_and_main(), ws.grad, ws.ws);
  detail::apply_adam(model, ws.grad, opt, 0, detail::components_of(model, true, true, false));
  if (observe) observe(0);

  detail::begin_substep(model, b, rng, ws);
  out.jd_adv = loss_jd(b, ws.traces, cfg.beta, 1.0, &ws.grads);
  accumulate_backward(model, ws.traces, ws.grads, Routing::aux_only(-1.0), ws.grad, ws.ws);
  detail::apply_adam(model, ws.grad, opt, 1, detail::components_of(model, false, false, true));
  if (observe) observe(1);
  return out;
}

/// Three-step ablation: (1) all components descend J'_C; (2) extractors
/// descend J'_C + alpha * J'_D; (3) both classifiers ascend J'_D.
inline StepLosses ablation_step(MdatModel& model, const StepBatch& b, const TrainConfig& cfg,
                                Optimizers& opt, Rng& rng, StepScratch& ws,
                                const SubstepObserver& observe = {}) {
  if (!(cfg.alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  StepLosses out;
  detail::begin_substep(model, b, rng, ws);
  out.jc = loss_jc_prime(b, ws.traces, 1.0, &ws.grads);
  accumulate_backward(model, ws.traces, ws.grads, Routing::all(), ws.grad, ws.ws);
  detail::apply_adam(model, ws.grad, opt, 0, detail::components_of(model, true, true, true));
  if (observe) observe(0);

  detail::begin_substep(model, b, rng, ws);
  loss_jc_prime(b, ws.traces, 1.0, &ws.grads);
  out.jd = loss_jd_prime(b, ws.traces, cfg.alpha, &ws.grads);
  accumulate_backward(model, ws.traces, ws.grads, Routing::extractors(), ws.grad, ws.ws);
  detail::apply_adam(model, ws.grad, opt, 1, detail::components_of(model, true, false, false));
  if (observe) observe(1);

  detail::begin_substep(model, b, rng, ws);
  out.jd_adv = loss_jd_prime(b, ws.traces, 1.0, &ws.grads);
  accumulate_backward(model, ws.traces, ws.grads, Routing::classifiers(-1.0), ws.grad, ws.ws);
  detail::apply_adam(model, ws.grad, opt, 2, detail::components_of(model, false, true, true));
  if (observe) observe(2);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  std::vector<double> accuracy;  // per domain; NaN for domains not evaluated
  double average = 0.0;
};

/// Accuracy of the main classifier's argmax. `sets[i]` is evaluated with
/// domain i's extractor, or with the private half zeroed when i equals
/// `msuda_domain`. Empty sets are skipped and reported as NaN.
inline Evaluation evaluate_sets(const MdatModel& model,
                                const std::vector<const std::vector<LabeledSample>*>& sets,
                                std::optional<std::size_t> msuda_domain = std::nullopt) {
  Evaluation ev;
  std::vector<double> seen;
  ForwardTrace tr;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto& s = *sets[i];
    if (s.empty()) {
      ev.accuracy.push_back(std::nan(""));
      continue;
    }
    std::size_t correct = 0;
    const bool ms = msuda_domain && *msuda_domain == i;
    for (const auto& smp : s) {
      forward(model, i, smp.x, Mode::Eval, nullptr, tr, ms);
      if (argmax(tr.logits_main()) == smp.label) ++correct;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(s.size());
    ev.accuracy.push_back(acc);
    seen.push_back(acc);
  }
  if (seen.empty()) throw UsageError("evaluate: empty test split");
  ev.average = mean(seen);
  return ev;
}

/// Held-out accuracy on every domain's test split.
inline Evaluation evaluate(const MdatModel& model, const MultiDomainCorpus& corpus,
                           std::optional<std::size_t> msuda_domain = std::nullopt) {
  std::vector<const std::vector<LabeledSample>*> sets;
  for (const auto& d : corpus.domains) {
    if (d.test.empty()) throw UsageError("evaluate: domain '" + d.name + "' has an empty test split");
    sets.push_back(&d.test);
  }
  return evaluate_sets(model, sets, msuda_domain);
}

/// Shared features of (a subsample of) each domain's L_i ∪ U_i, labeled rows
/// first. Subsampling is keyed by domain name, so it does not depend on
/// domain order.
inline std::vector<FeatureSet> extract_shared_features(const MdatModel& model,
                                                       const MultiDomainCorpus& corpus,
                                                       std::size_t per_domain,
                                                       std::uint64_t seed,
                                                       std::optional<std::size_t> unlabeled_domain =
                                                           std::nullopt) {
  std::vector<FeatureSet> out;
  const std::size_t d = model.spec().shared_out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const DomainDataset& ds = corpus.domains[i];
    std::vector<std::size_t> idx(ds.n());
    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
    Rng rng = Rng(seed).child("diagnostic-sample").child(ds.name);
    rng.shuffle(idx);
    idx.resize(std::min(per_domain, idx.size()));
    const bool hide = unlabeled_domain && *unlabeled_domain == i;
    std::stable_partition(idx.begin(), idx.end(),
                          [&](std::size_t j) { return !hide && j < ds.l(); });
    FeatureSet fs;
    Vector v;
    v.reserve(idx.size() * d);
    for (auto j : idx) {
      const Vector f = shared_features(model, ds.pooled(j));
      v.insert(v.end(), f.begin(), f.end());
      if (!hide && j < ds.l()) fs.labels.push_back(ds.labeled[j].label);
    }
    fs.x = DenseMatrix(idx.size(), d, std::move(v));
    out.push_back(std::move(fs));
  }
  return out;
}

inline AlignmentResult alignment_diagnostic(const MdatModel& model, const MultiDomainCorpus& corpus,
                                            const ProbeOptions& opt, std::size_t per_domain = 300,
                                            std::optional<std::size_t> unlabeled_domain =
                                                std::nullopt) {
  return alignment_diagnostic(
      extract_shared_features(model, corpus, per_domain, opt.seed, unlabeled_domain), corpus.k,
      opt);
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochReport {
  std::size_t epoch = 0;  // 0 = before any update
  std::vector<double> accuracy;
  double average = 0.0;
  std::vector<double> dev_accuracy;
  double dev_average = std::nan("");
  double jc = std::nan("");  // epoch means of the step losses
  double jd = std::nan("");
  double jd_adv = std::nan("");
  std::optional<AlignmentResult> diagnostic;
  double wall_seconds = 0.0;  // not serialized
};

struct TrainResult {
  MdatModel model;  // selected by dev accuracy, or the last epoch
  std::vector<std::string> domain_names;
  std::vector<EpochReport> epochs;
  std::size_t selected_epoch = 0;
  Evaluation final_eval;
  std::optional<double> initial_diagnostic;
  std::optional<double> final_diagnostic;
};

namespace detail {

/// Moves a deterministic dev share out of each labeled pool.
inline std::vector<std::vector<LabeledSample>> split_dev(MultiDomainCorpus& corpus, double fraction,
                                                         std::uint64_t seed,
                                                         std::optional<std::size_t> skip) {
  std::vector<std::vector<LabeledSample>> dev(corpus.size());
  if (fraction <= 0.0) return dev;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (skip && *skip == i) continue;
    auto& pool = corpus.domains[i].labeled;
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size())));
    if (take == 0 || take >= pool.size()) continue;
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t j = 0; j < idx.size(); ++j) idx[j] = j;
    Rng(seed).child("dev-split").child(corpus.domains[i].name).shuffle(idx);
    std::vector<bool> is_dev(pool.size(), false);
    for (std::size_t j = 0; j < take; ++j) is_dev[idx[j]] = true;
    std::vector<LabeledSample> keep;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      (is_dev[j] ? dev[i] : keep).push_back(pool[j]);
    }
    pool = std::move(keep);
  }
  return dev;
}

}  // namespace detail

inline ModelSpec resolve_model_spec(const TrainConfig& cfg, const MultiDomainCorpus& corpus) {
  ModelSpec spec = cfg.model;
  spec.input_dim = corpus.vocab_dim;
  spec.domains = corpus.size();
  spec.classes = corpus.k;
  spec.validate();
  return spec;
}

using EpochCallback = std::function<void(const EpochReport&)>;

/// Fixed-budget training with best-on-dev selection. Deterministic in
/// (corpus, cfg).
inline TrainResult train(const MultiDomainCorpus& input, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  input.validate();
  MultiDomainCorpus corpus = input;
  std::optional<std::size_t> target;
  if (cfg.msuda_target) target = corpus.domain_index(*cfg.msuda_target);
  if (target && corpus.size() < 2) throw ConfigError("msuda needs at least one source domain");

  const Rng root(cfg.seed);
  const auto dev = detail::split_dev(corpus, cfg.dev_fraction, cfg.seed, target);
  std::vector<const std::vector<LabeledSample>*> dev_sets;
  bool have_dev = false;
  for (const auto& d : dev) {
    dev_sets.push_back(&d);
    have_dev = have_dev || !d.empty();
  }

  TrainResult res;
  for (const auto& d : corpus.domains) res.domain_names.push_back(d.name);
  MdatModel model(resolve_model_spec(cfg, corpus));
  init_params(model, root.child("init"));

  Optimizers opt(model, cfg.lr);
  MinibatchSampler sampler(corpus, cfg.batch, root.child("sampler"), target);
  StepScratch scratch;
  MiniBatchPair pair;

  auto diag_due = [&](std::size_t epoch) {
    if (!cfg.diagnostics || corpus.size() < 2) return false;
    if (epoch == 0 || epoch == cfg.epochs) return true;
    return cfg.diag_every > 0 && epoch % cfg.diag_every == 0;
  };
  auto run_diag = [&]() {
    return alignment_diagnostic(model, corpus, cfg.probe_options(), cfg.probe_samples, target);
  };

  double best_dev = -1.0;
  MdatModel best = model;
  std::size_t best_epoch = 0;

  auto report = [&](std::size_t epoch, double jc, double jd, double jd_adv, double secs) {
    EpochReport rep;
    rep.epoch = epoch;
    rep.jc = jc;
    rep.jd = jd;
    rep.jd_adv = jd_adv;
    const bool eval_now = epoch == 0 || epoch == cfg.epochs || epoch % cfg.eval_every == 0;
    if (eval_now) {
      const Evaluation ev = evaluate(model, corpus, target);
      rep.accuracy = ev.accuracy;
      rep.average = ev.average;
      if (have_dev) {
        const Evaluation dv = evaluate_sets(model, dev_sets, target);
        rep.dev_accuracy = dv.accuracy;
        rep.dev_average = dv.average;
        if (dv.average > best_dev) {
          best_dev = dv.average;
          best = model;
          best_epoch = epoch;
        }
      }
    }
    if (diag_due(epoch)) {
      rep.diagnostic = run_diag();
      if (epoch == 0) res.initial_diagnostic = rep.diagnostic->mean;
      if (epoch == cfg.epochs) res.final_diagnostic = rep.diagnostic->mean;
    }
    rep.wall_seconds = secs;
    if (eval_now || rep.diagnostic) {
      if (on_epoch) on_epoch(rep);
      res.epochs.push_back(std::move(rep));
    }
  };

  report(0, std::nan(""), std::nan(""), std::nan(""), 0.0);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> jc, jd, jda;
    for (std::size_t it = 0; it < sampler.iterations_per_epoch(); ++it, ++step) {
      sampler.next(pair);
      const StepBatch b = make_step_batch(corpus, pair, target);
      Rng rng = root.child("step", step);
      const StepLosses l = cfg.variant == Variant::Mdat
                               ? mdat_step(model, b, cfg, opt, rng, scratch)
                               : ablation_step(model, b, cfg, opt, rng, scratch);
      jc.push_back(l.jc);
      jd.push_back(l.jd);
      jda.push_back(l.jd_adv);
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(epoch, mean(jc), mean(jd), mean(jda), secs);
  }

  if (have_dev) {
    res.model = std::move(best);
    res.selected_epoch = best_epoch;
  } else {
    res.model = std::move(model);
    res.selected_epoch = cfg.epochs;
  }
  res.final_eval = evaluate(res.model, corpus, target);
  return res;
}

// ---------------------------------------------------------------------------
// Reports

namespace detail {

inline std::string csv_number(double v) {
  return std::isfinite(v) ? format_double(v, 17) : std::string();
}

inline Json json_number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json json_numbers(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(json_number(x));
  return a;
}

}  // namespace detail

/// One row per domain plus an "average" row per reported epoch.
inline void write_epoch_csv(std::ostream& os, const std::vector<std::string>& names,
                            const std::vector<EpochReport>& epochs) {
  os << "epoch,domain,accuracy,dev_accuracy,jc,jd,jd_adv,diagnostic\n";
  for (const auto& e : epochs) {
    auto at = [](const std::vector<double>& v, std::size_t i) {
      return i < v.size() ? v[i] : std::nan("");
    };
    for (std::size_t i = 0; i < names.size(); ++i) {
      const double diag = e.diagnostic ? at(e.diagnostic->per_domain, i) : std::nan("");
      os << e.epoch << ',' << names[i] << ',' << detail::csv_number(at(e.accuracy, i)) << ','
         << detail::csv_number(at(e.dev_accuracy, i)) << ",,,," << detail::csv_number(diag)
         << '\n';
    }
    os << e.epoch << ",average,"
       << detail::csv_number(e.accuracy.empty() ? std::nan("") : e.average) << ','
       << detail::csv_number(e.dev_average) << ',' << detail::csv_number(e.jc) << ','
       << detail::csv_number(e.jd) << ',' << detail::csv_number(e.jd_adv) << ','
       << detail::csv_number(e.diagnostic ? e.diagnostic->mean : std::nan("")) << '\n';
  }
}

inline Json config_to_json(const TrainConfig& cfg) {
  Json j;
  j["variant"] = to_string(cfg.variant);
  j["alpha"] = cfg.alpha;
  j["beta"] = cfg.beta;
  j["rho"] = cfg.rho();
  j["lr"] = cfg.lr;
  j["batch"] = cfg.batch;
  j["epochs"] = cfg.epochs;
  j["seed"] = cfg.seed;
  j["eval_every"] = cfg.eval_every;
  j["dev_fraction"] = cfg.dev_fraction;
  j["msuda_target"] = cfg.msuda_target ? Json(*cfg.msuda_target) : Json(nullptr);
  j["diagnostics"] = cfg.diagnostics;
  j["probe_budget"] = cfg.probe_budget;
  j["probe_samples"] = cfg.probe_samples;
  j["probe_hidden"] = cfg.probe_hidden;
  j["probe_lr"] = cfg.probe_lr;
  j["probe_rho"] = cfg.diagnostic_rho();
  Json m;
  m["shared_hidden"] = cfg.model.shared_hidden;
  m["shared_out"] = cfg.model.shared_out;
  m["specific_hidden"] = cfg.model.specific_hidden;
  m["specific_out"] = cfg.model.specific_out;
  m["classifier_hidden"] = cfg.model.classifier_hidden_dims();
  m["keep_prob"] = cfg.model.keep_prob;
  j["model"] = m;
  return j;
}

inline Json epoch_to_json(const EpochReport& e) {
  Json j;
  j["epoch"] = e.epoch;
  j["accuracy"] = detail::json_numbers(e.accuracy);
  j["average"] = e.accuracy.empty() ? Json(nullptr) : detail::json_number(e.average);
  j["dev_accuracy"] = detail::json_numbers(e.dev_accuracy);
  j["dev_average"] = detail::json_number(e.dev_average);
  j["jc"] = detail::json_number(e.jc);
  j["jd"] = detail::json_number(e.jd);
  j["jd_adv"] = detail::json_number(e.jd_adv);
  if (e.diagnostic) {
    j["diagnostic"] = {{"per_domain", detail::json_numbers(e.diagnostic->per_domain)},
                       {"mean", detail::json_number(e.diagnostic->mean)}};
  } else {
    j["diagnostic"] = nullptr;
  }
  return j;
}

inline Json train_summary_json(const TrainConfig& cfg, const TrainResult& r) {
  Json j;
  j["config"] = config_to_json(cfg);
  j["domains"] = r.domain_names;
  j["selected_epoch"] = r.selected_epoch;
  j["final_accuracy"] = detail::json_numbers(r.final_eval.accuracy);
  j["final_average"] = detail::json_number(r.final_eval.average);
  j["initial_diagnostic"] = r.initial_diagnostic ? Json(*r.initial_diagnostic) : Json(nullptr);
  j["final_diagnostic"] = r.final_diagnostic ? Json(*r.final_diagnostic) : Json(nullptr);
  Json epochs = Json::array();
  for (const auto& e : r.epochs) epochs.push_back(epoch_to_json(e));
  j["epochs"] = epochs;
  return j;
}

}  // namespace mdat
