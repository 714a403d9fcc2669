#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mdat/config.hpp"
#include "mdat/gradcheck.hpp"
#include "mdat/train.hpp"
#include "test_util.hpp"

using namespace mdat;
using testutil::toy_corpus;
using testutil::toy_spec;

namespace {

std::uint64_t fnv(std::span<const double> v) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double x : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::vector<std::uint64_t> hashes(const MdatModel& m) {
  std::vector<std::uint64_t> out;
  for (std::size_t c = 0; c < m.component_count(); ++c) out.push_back(fnv(m.component_params(c)));
  return out;
}

StepBatch first_batch(const MultiDomainCorpus& c, std::size_t batch = 4) {
  MinibatchSampler s(c, batch, Rng(2));
  return make_step_batch(c, s.next());
}

TrainConfig small_train() {
  TrainConfig cfg;
  cfg.model = toy_spec();
  cfg.epochs = 3;
  cfg.batch = 4;
  cfg.lr = 1e-2;
  cfg.diagnostics = false;
  return cfg;
}

}  // namespace

TEST(JdTerm, MaximisedAtBetaOverOnePlusBeta) {
  for (double beta : {1.0, 2.0, 4.0, 7.5}) {
    const double p = beta / (1.0 + beta);
    const double h = 1e-4;
    EXPECT_GT(jd_term(p, beta), jd_term(p - h, beta));
    EXPECT_GT(jd_term(p, beta), jd_term(p + h, beta));
    // Derivative beta/p - 1/(1-p) vanishes there.
    EXPECT_NEAR((jd_term(p + 1e-6, beta) - jd_term(p - 1e-6, beta)) / 2e-6, 0.0, 1e-5);
  }
  EXPECT_TRUE(std::isfinite(jd_term(0.0, 4.0)));
  EXPECT_TRUE(std::isfinite(jd_term(1.0, 4.0)));
}

TEST(JdSample, HandComputedAndClamped) {
  Vector q;
  Vector g;
  // Uniform auxiliary scores: p = 1/2, value = 5 ln(1/2), gradient (4 - 1) * (1 - 1/2).
  auto r = detail::jd_sample(Vector{0.0, 0.0}, 0, 4.0, 1.0, &g, q);
  EXPECT_DOUBLE_EQ(r.value, 5.0 * std::log(0.5));
  EXPECT_FALSE(r.clamped);
  EXPECT_DOUBLE_EQ(g[0], 1.5);
  EXPECT_DOUBLE_EQ(g[1], -1.5);
  // Saturated probability: clamped value and no gradient.
  g.clear();
  r = detail::jd_sample(Vector{60.0, -60.0}, 1, 4.0, 1.0, &g, q);
  EXPECT_TRUE(r.clamped);
  EXPECT_DOUBLE_EQ(r.value, 4.0 * std::log(kProbClamp) + std::log1p(-kProbClamp));
  EXPECT_TRUE(g.empty());
}

TEST(Losses, ValueIsUnscaledGradientIsScaled) {
  MdatModel m(toy_spec());
  init_params(m, Rng(1));
  const auto c = toy_corpus();
  const StepBatch b = first_batch(c);
  BatchTraces tr;
  forward_batch(m, b, Mode::Eval, nullptr, tr);
  LogitGrads g1, g2;
  g1.reset(tr);
  g2.reset(tr);
  const double a = loss_jd(b, tr, 4.0, 1.0, &g1);
  const double s = loss_jd(b, tr, 4.0, 0.25, &g2);
  EXPECT_EQ(a, s);
  for (std::size_t d = 0; d < tr.labeled.size(); ++d) {
    for (std::size_t i = 0; i < tr.labeled[d].size(); ++i) {
      for (std::size_t j = 0; j < g1.labeled[d][i].aux.size(); ++j) {
        EXPECT_DOUBLE_EQ(0.25 * g1.labeled[d][i].aux[j], g2.labeled[d][i].aux[j]);
      }
    }
  }
  // J_C written out from the logits.
  double jc = 0.0;
  for (std::size_t d = 0; d < b.domains.size(); ++d) {
    double sum = 0.0;
    for (std::size_t i = 0; i < b.domains[d].labeled.size(); ++i) {
      const auto z = tr.labeled[d][i].logits_main();
      const double lse = std::log(std::exp(z[0]) + std::exp(z[1]));
      sum += lse - z[b.domains[d].labels[i]];
    }
    jc += sum / static_cast<double>(b.domains[d].labeled.size());
  }
  EXPECT_NEAR(loss_jc(b, tr, 1.0, nullptr), jc, 1e-13);
}

TEST(GradCheck, AllLossesPassAndCorruptionIsCaught) {
  MdatModel m(toy_spec());
  init_params(m, Rng(1));
  const auto c = toy_corpus();
  const StepBatch b = first_batch(c);
  GradCheckOptions opt;
  opt.coords_per_component = 30;
  for (LossKind k : kAllLosses) {
    const auto rep = grad_check(m, b, k, opt);
    EXPECT_TRUE(rep.passed) << to_string(k) << " " << rep.max_rel_error;
    EXPECT_EQ(rep.components.size(), m.component_count());
  }
  opt.corrupt_backward = true;
  EXPECT_FALSE(grad_check(m, b, LossKind::JC, opt).passed);
}

TEST(Steps, MdatStepTouchesOnlyRoutedComponents) {
  MdatModel m(toy_spec());
  init_params(m, Rng(1));
  const auto c = toy_corpus();
  TrainConfig cfg;
  cfg.lr = 1e-2;
  Optimizers opt(m, cfg.lr);
  StepScratch ws;
  Rng rng(3);
  auto before = hashes(m);
  std::vector<std::vector<bool>> changed;
  mdat_step(m, first_batch(c), cfg, opt, rng, ws, [&](std::size_t) {
    const auto now = hashes(m);
    std::vector<bool> ch;
    for (std::size_t i = 0; i < now.size(); ++i) ch.push_back(now[i] != before[i]);
    changed.push_back(ch);
    before = now;
  });
  ASSERT_EQ(changed.size(), 2u);
  EXPECT_EQ(changed[0], (std::vector<bool>{true, true, true, true, false}));
  EXPECT_EQ(changed[1], (std::vector<bool>{false, false, false, false, true}));
}

TEST(Steps, AblationStepTouchesOnlyRoutedComponents) {
  MdatModel m(toy_spec());
  init_params(m, Rng(1));
  const auto c = toy_corpus();
  TrainConfig cfg;
  cfg.lr = 1e-2;
  Optimizers opt(m, cfg.lr);
  StepScratch ws;
  Rng rng(3);
  auto before = hashes(m);
  std::vector<std::vector<bool>> changed;
  ablation_step(m, first_batch(c), cfg, opt, rng, ws, [&](std::size_t) {
    const auto now = hashes(m);
    std::vector<bool> ch;
    for (std::size_t i = 0; i < now.size(); ++i) ch.push_back(now[i] != before[i]);
    changed.push_back(ch);
    before = now;
  });
  ASSERT_EQ(changed.size(), 3u);
  EXPECT_EQ(changed[0], (std::vector<bool>{true, true, true, true, true}));
  EXPECT_EQ(changed[1], (std::vector<bool>{true, true, true, false, false}));
  EXPECT_EQ(changed[2], (std::vector<bool>{false, false, false, true, true}));
}

TEST(Train, DeterministicInSeed) {
  const auto c = toy_corpus(1, 16, 8);
  const TrainConfig cfg = small_train();
  const TrainResult a = train(c, cfg);
  const TrainResult b = train(c, cfg);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(to_json_string(train_summary_json(cfg, a)), to_json_string(train_summary_json(cfg, b)));
  std::ostringstream ca, cb;
  write_epoch_csv(ca, a.domain_names, a.epochs);
  write_epoch_csv(cb, b.domain_names, b.epochs);
  EXPECT_EQ(ca.str(), cb.str());
  TrainConfig other = cfg;
  other.seed = 2;
  EXPECT_NE(train(c, other).model, a.model);
}

TEST(Train, ZeroEpochsEvaluatesInitialModel) {
  const auto c = toy_corpus(1, 16, 8);
  TrainConfig cfg = small_train();
  cfg.epochs = 0;
  cfg.dev_fraction = 0.0;
  const TrainResult r = train(c, cfg);
  ASSERT_EQ(r.epochs.size(), 1u);
  EXPECT_EQ(r.selected_epoch, 0u);
  MdatModel fresh(resolve_model_spec(cfg, c));
  init_params(fresh, Rng(cfg.seed).child("init"));
  EXPECT_EQ(r.model, fresh);
  EXPECT_EQ(r.final_eval.accuracy, evaluate(fresh, c).accuracy);
}

TEST(Train, AblationAndMsudaRun) {
  const auto c = toy_corpus(1, 16, 8);
  TrainConfig cfg = small_train();
  cfg.variant = Variant::MdatL1;
  EXPECT_NO_THROW(train(c, cfg));
  cfg.variant = Variant::Mdat;
  cfg.msuda_target = c.domains[1].name;
  const TrainResult r = train(c, cfg);
  EXPECT_EQ(r.final_eval.accuracy.size(), 2u);
  cfg.msuda_target = "nope";
  EXPECT_THROW(train(c, cfg), Error);
}

TEST(Train, LearnsEasyCorpus) {
  SynthConfig sc;
  sc.labeled = 100;
  sc.unlabeled = 50;
  sc.test = 100;
  sc.vocab_dim = 200;
  const auto c = synth_generate(sc);
  TrainConfig cfg;
  cfg.model.shared_hidden = {32};
  cfg.model.shared_out = 16;
  cfg.model.specific_hidden = {32};
  cfg.model.specific_out = 8;
  cfg.lr = 1e-3;
  cfg.epochs = 15;
  cfg.diagnostics = false;
  EXPECT_GE(train(c, cfg).final_eval.average, 0.85);
}

TEST(Config, UnknownKeysAndBadValues) {
  RunConfig rc;
  EXPECT_THROW(apply_setting(rc, "learning_rate", "1"), ConfigError);
  EXPECT_THROW(apply_setting(rc, "lr", "fast"), ConfigError);
  EXPECT_THROW(apply_setting(rc, "epochs", "-3"), ConfigError);
  EXPECT_THROW(apply_setting(rc, "diagnostics", "maybe"), ConfigError);
  EXPECT_THROW(apply_setting(rc, "shared_hidden", "64,0"), ConfigError);
  EXPECT_THROW(apply_setting(rc, "variant", "dann"), ConfigError);
  apply_setting(rc, "shared_hidden", "64, 32");
  EXPECT_EQ(rc.train.model.shared_hidden, (std::vector<std::size_t>{64, 32}));
  apply_setting(rc, "classifier_hidden", "none");
  EXPECT_TRUE(rc.train.model.classifier_hidden.empty());
}

TEST(Config, WriteParseRoundTrip) {
  RunConfig rc;
  rc.manifest = "data/m.txt";
  rc.train.alpha = 0.1;
  rc.train.lr = 3e-4;
  rc.train.msuda_target = "books";
  rc.train.variant = Variant::MdatL1;
  rc.train.model.specific_hidden = {10, 5};
  std::ostringstream a;
  write_run_config(a, rc);
  RunConfig back;
  std::istringstream in(a.str());
  apply_config_stream(back, in);
  std::ostringstream b;
  write_run_config(b, back);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(back.train.alpha, 0.1);
  EXPECT_EQ(back.train.msuda_target, std::optional<std::string>("books"));
}

TEST(Diagnostic, IdenticalDomainsGiveZeroAndSeparatedDomainsDoNot) {
  Rng r(1);
  const std::size_t n = 60, d = 4;
  Vector base(n * d);
  for (double& x : base) x = r.normal();
  std::vector<std::size_t> labels(n / 2);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = base[i * d] > 0 ? 1 : 0;
  ProbeOptions opt;
  opt.budget = 100;
  opt.hidden = 8;

  std::vector<FeatureSet> same(3, FeatureSet{DenseMatrix(n, d, base), labels});
  const auto z = alignment_diagnostic(same, 2, opt);
  for (double v : z.per_domain) EXPECT_EQ(v, 0.0);

  std::vector<FeatureSet> apart = same;
  for (std::size_t k = 0; k < apart.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i) apart[k].x.values()[i * d + 1] += 6.0 * static_cast<double>(k);
  }
  const auto far = alignment_diagnostic(apart, 2, opt);
  EXPECT_GT(far.mean, 0.3);
  EXPECT_LE(far.mean, 1.0);

  EXPECT_THROW(alignment_diagnostic({same[0]}, 2, opt), UsageError);
}
