#pragma once

// Central-difference check of the analytic gradients of the four training
// losses. Dropout masks are drawn once and frozen. A coordinate is a kink
// when perturbing it changes any piecewise state of the graph (rectifier
// on/off, pseudo-label, probability clamp, sign of an l1 term); such
// coordinates are excluded and counted.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mdat/model.hpp"
#include "mdat/train.hpp"

namespace mdat {

enum class LossKind { JC, JD, JCPrime, JDPrime };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::JC: return "J_C";
    case LossKind::JD: return "J_D";
    case LossKind::JCPrime: return "J'_C";
    case LossKind::JDPrime: return "J'_D";
  }
  return "?";
}

inline constexpr LossKind kAllLosses[] = {LossKind::JC, LossKind::JD, LossKind::JCPrime,
                                          LossKind::JDPrime};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  std::size_t coords_per_component = 50;
  bool dropout = true;
  double beta = 4.0;
  std::uint64_t seed = 1;
  /// Negative control: backward treats rectifiers as identities.
  bool corrupt_backward = false;
};

struct ComponentCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t kinks = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;  // offset within the component
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  LossKind loss = LossKind::JC;
  std::vector<ComponentCheck> components;
  double max_rel_error = 0.0;
  std::size_t kinks = 0;
  bool passed = false;
};

inline std::string component_name(const MdatModel& model, std::size_t c) {
  const std::size_t m = model.domains();
  if (c == 0) return "F_s";
  if (c <= m) return "F_d" + std::to_string(c - 1);
  return c == m + 1 ? "C" : "C'";
}

namespace detail {

inline double loss_value(LossKind kind, const StepBatch& b, const BatchTraces& tr, double beta,
                         LogitGrads* g) {
  switch (kind) {
    case LossKind::JC: return loss_jc(b, tr, 1.0, g);
    case LossKind::JD: return loss_jd(b, tr, beta, 1.0, g);
    case LossKind::JCPrime: return loss_jc_prime(b, tr, 1.0, g);
    case LossKind::JDPrime: return loss_jd_prime(b, tr, 1.0, g);
  }
  return 0.0;
}

/// Piecewise state of every sample's graph for the given loss.
inline void signature(LossKind kind, const BatchTraces& tr, std::vector<std::uint8_t>& out) {
  out.clear();
  auto mlp = [&](const MlpTrace& m) {
    for (std::size_t l = 0; l + 1 < m.layers.size(); ++l) {
      for (double z : m.layers[l].pre) out.push_back(z > 0.0 ? 1 : 0);
    }
  };
  Vector q, qa;
  auto sample = [&](const ForwardTrace& t) {
    mlp(t.shared);
    mlp(t.specific);
    mlp(t.main);
    mlp(t.aux);
    if (kind == LossKind::JD) {
      const std::size_t sigma = argmax(t.logits_main());
      out.push_back(static_cast<std::uint8_t>(sigma));
      q = softmax(t.logits_aux());
      const double p = q[sigma];
      out.push_back(p < kProbClamp ? 1 : (1.0 - p < kProbClamp ? 2 : 0));
    } else if (kind == LossKind::JDPrime) {
      q = softmax(t.logits_main());
      qa = softmax(t.logits_aux());
      for (std::size_t j = 0; j < q.size(); ++j) {
        out.push_back(q[j] > qa[j] ? 2 : (q[j] < qa[j] ? 0 : 1));
      }
    }
  };
  for (const auto& d : tr.labeled) {
    for (const auto& t : d) sample(t);
  }
  for (const auto& d : tr.unlabeled) {
    for (const auto& t : d) sample(t);
  }
}

}  // namespace detail

inline GradCheckReport grad_check(const MdatModel& model, const StepBatch& batch, LossKind kind,
                                  const GradCheckOptions& opt) {
  GradCheckReport rep;
  rep.loss = kind;
  Rng rng = Rng(opt.seed).child("gradcheck");
  Rng mask_rng = rng.child("masks");
  BatchTraces base;
  forward_batch(model, batch, opt.dropout ? Mode::Train : Mode::Eval, &mask_rng, base);
  const Mode replay = opt.dropout ? Mode::TrainFrozen : Mode::Eval;

  LogitGrads g;
  g.reset(base);
  const double l0 = detail::loss_value(kind, batch, base, opt.beta, &g);
  if (!std::isfinite(l0)) throw NumericError("grad_check: non-finite loss");
  Vector analytic(model.parameter_count(), 0.0);
  BackwardWorkspace ws;
  Routing routing = Routing::all();
  routing.corrupt_relu = opt.corrupt_backward;
  accumulate_backward(model, base, g, routing, analytic, ws);

  std::vector<std::uint8_t> sig0, sig;
  detail::signature(kind, base, sig0);

  MdatModel probe = model;
  BatchTraces work = base;
  auto eval_at = [&](std::size_t index, double value, bool& kink) {
    const double saved = probe.params()[index];
    probe.params()[index] = value;
    forward_batch(probe, batch, replay, nullptr, work);
    probe.params()[index] = saved;
    detail::signature(kind, work, sig);
    if (sig != sig0) kink = true;
    const double v = detail::loss_value(kind, batch, work, opt.beta, nullptr);
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss under perturbation");
    return v;
  };

  bool ok = true;
  for (std::size_t c = 0; c < model.component_count(); ++c) {
    const MlpLayout& lay = model.component(c);
    ComponentCheck cc;
    cc.name = component_name(model, c);
    std::vector<std::size_t> order(lay.size);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng pick = rng.child("coords", c);
    pick.shuffle(order);
    for (std::size_t i : order) {
      if (cc.checked >= opt.coords_per_component) break;
      const std::size_t idx = lay.offset + i;
      const double x = model.params()[idx];
      bool kink = false;
      const double up = eval_at(idx, x + opt.step, kink);
      const double down = eval_at(idx, x - opt.step, kink);
      if (kink) {
        ++cc.kinks;
        continue;
      }
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++cc.checked;
      if (cc.checked == 1 || rel > cc.max_rel_error) {
        cc.max_rel_error = rel;
        cc.worst_index = i;
        cc.worst_analytic = a;
        cc.worst_numeric = numeric;
      }
    }
    const std::size_t wanted = std::min(opt.coords_per_component, lay.size);
    if (cc.checked < wanted) ok = false;  // too many kinks to reach the quota
    if (cc.max_rel_error > opt.tolerance) ok = false;
    rep.max_rel_error = std::max(rep.max_rel_error, cc.max_rel_error);
    rep.kinks += cc.kinks;
    rep.components.push_back(std::move(cc));
  }
  rep.passed = ok;
  return rep;
}

inline Json to_json(const GradCheckReport& r, double tolerance) {
  Json j;
  j["loss"] = to_string(r.loss);
  j["passed"] = r.passed;
  j["tolerance"] = tolerance;
  j["max_rel_error"] = r.max_rel_error;
  j["excluded_kinks"] = r.kinks;
  Json comps = Json::array();
  for (const auto& c : r.components) {
    comps.push_back({{"component", c.name},
                     {"checked", c.checked},
                     {"excluded_kinks", c.kinks},
                     {"max_rel_error", c.max_rel_error},
                     {"worst_index", c.worst_index},
                     {"worst_analytic", c.worst_analytic},
                     {"worst_numeric", c.worst_numeric}});
  }
  j["components"] = comps;
  return j;
}

}  // namespace mdat
