#pragma once

// Command-line front end. Exit codes: 0 success, 1 failed check or runtime
// error, 2 usage or configuration error. Errors are written to stderr as one
// JSON object.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "mdat/bound.hpp"
#include "mdat/bound_model.hpp"
#include "mdat/config.hpp"
#include "mdat/dataio.hpp"
#include "mdat/errors.hpp"
#include "mdat/format.hpp"
#include "mdat/gradcheck.hpp"
#include "mdat/margin.hpp"
#include "mdat/model.hpp"
#include "mdat/train.hpp"

namespace mdat {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Signals a failed check (exit code 1) after the report has been printed.
struct CheckFailed {};

// ---------------------------------------------------------------------------
// Oracle instances: {"k", "s1", "s2", "reference", "hypotheses": [[[score per
// class] per sample] per hypothesis]}

struct OracleInstance {
  std::size_t k = 0;
  IndexSet s1;
  IndexSet s2;
  std::size_t reference = 0;
  FiniteHypothesisClass family;
};

inline OracleInstance parse_oracle_instance(const Json& j) {
  try {
    OracleInstance inst;
    inst.k = j.at("k").get<std::size_t>();
    inst.s1 = j.at("s1").get<IndexSet>();
    inst.s2 = j.at("s2").get<IndexSet>();
    inst.reference = j.value("reference", std::size_t{0});
    std::vector<ScoreTable> tables;
    for (const auto& h : j.at("hypotheses")) {
      const auto rows = h.get<std::vector<std::vector<double>>>();
      Vector v;
      for (const auto& r : rows) {
        if (r.size() != inst.k) throw ShapeError("oracle instance: score row of wrong width");
        v.insert(v.end(), r.begin(), r.end());
      }
      tables.emplace_back(DenseMatrix(rows.size(), inst.k, std::move(v)));
    }
    if (tables.empty()) throw UsageError("oracle instance: no hypotheses");
    inst.family = FiniteHypothesisClass(std::move(tables));
    if (inst.reference >= inst.family.size()) {
      throw RangeError("oracle instance: reference index out of range");
    }
    return inst;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("oracle instance: ") + e.what());
  }
}

inline OracleInstance load_oracle_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open oracle instance '" + path.string() + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("oracle instance '" + path.string() + "': " + e.what());
  }
  return parse_oracle_instance(j);
}

inline Json run_oracles(const OracleInstance& inst, const std::vector<double>& rhos,
                        const std::string& loss) {
  LabelLoss l;
  if (loss == "squared") l = squared_label_loss(inst.k);
  else if (loss == "zero-one") l = zero_one_label_loss();
  else throw UsageError("unknown --loss '" + loss + "' (expected squared or zero-one)");
  const ScoreTable& f = inst.family[inst.reference];
  Json j;
  j["samples"] = inst.family.samples();
  j["hypotheses"] = inst.family.size();
  j["k"] = inst.k;
  j["reference"] = inst.reference;
  j["hdeltah_divergence"] = hdeltah_divergence_oracle(inst.family, inst.s1, inst.s2).value;
  j["discrepancy_divergence"] = {
      {"loss", loss},
      {"value", discrepancy_divergence_oracle(inst.family, inst.s1, inst.s2, l).value}};
  j["zero_one_discrepancy"] =
      zero_one_discrepancy(f.labeling(), inst.family, inst.s1, inst.s2).value;
  Json md = Json::array();
  for (double rho : rhos) {
    md.push_back({{"rho", rho},
                  {"value", margin_discrepancy_oracle(f, inst.family, inst.s1, inst.s2, rho).value}});
  }
  j["margin_discrepancy"] = md;
  return j;
}

// ---------------------------------------------------------------------------
// Helpers

namespace detail {

inline std::string fmt6(double v) { return std::isfinite(v) ? format_double(v, 6) : "-"; }

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot write '" + p.string() + "'");
  os << text;
  if (!os) throw IoError("write failed for '" + p.string() + "'");
}

inline void ensure_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

inline std::string flag_name(const std::string& key) {
  std::string s = key;
  for (char& c : s) {
    if (c == '_') c = '-';
  }
  return "--" + s;
}

/// Registers every RunConfig key as a string flag.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "key = value run configuration file");
    for (const auto& key : run_config_keys()) {
      options[key] = app.add_option(flag_name(key), values[key], "overrides config key " + key);
    }
  }

  RunConfig resolve(RunConfig rc = {}) const {
    if (!config_path.empty()) apply_config_file(rc, config_path);
    for (const auto& key : run_config_keys()) {
      if (options.at(key)->count() > 0) apply_setting(rc, key, values.at(key));
    }
    return rc;
  }
};

inline std::vector<std::vector<std::string>> epoch_table(const std::vector<std::string>& names,
                                                         const std::vector<EpochReport>& epochs) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> head{"epoch"};
  for (const auto& n : names) head.push_back(n);
  for (const char* h : {"avg", "dev_avg", "J_C", "J_D", "diag"}) head.emplace_back(h);
  rows.push_back(head);
  for (const auto& e : epochs) {
    std::vector<std::string> r{std::to_string(e.epoch)};
    for (std::size_t i = 0; i < names.size(); ++i) {
      r.push_back(i < e.accuracy.size() ? fmt6(e.accuracy[i]) : "-");
    }
    r.push_back(e.accuracy.empty() ? "-" : fmt6(e.average));
    r.push_back(fmt6(e.dev_average));
    r.push_back(fmt6(e.jc));
    r.push_back(fmt6(e.jd));
    r.push_back(e.diagnostic ? fmt6(e.diagnostic->mean) : "-");
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void print_table(std::ostream& os, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) os << "  ";
      os << std::setw(static_cast<int>(width[c])) << r[c];
    }
    os << '\n';
  }
}

inline MultiDomainCorpus load_manifest_or_throw(const RunConfig& rc) {
  if (rc.manifest.empty()) throw UsageError("no corpus: pass --manifest or set manifest in --config");
  MultiDomainCorpus c = load_corpus(rc.manifest);
  c.validate();
  return c;
}

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// The tiny corpus used by `gradcheck`: 2 domains, vocabulary 20, 8 labeled
/// samples per domain.
inline MultiDomainCorpus gradcheck_corpus(std::uint64_t seed) {
  SynthConfig sc;
  sc.domains = 2;
  sc.vocab_dim = 20;
  sc.labeled = 8;
  sc.unlabeled = 0;
  sc.test = 0;
  sc.seed = seed;
  return synth_generate(sc);
}

inline ModelSpec gradcheck_model_spec() {
  ModelSpec s;
  s.input_dim = 20;
  s.domains = 2;
  s.classes = 2;
  s.shared_hidden = {12};
  s.shared_out = 6;
  s.specific_hidden = {12};
  s.specific_out = 4;
  return s;
}

/// Whole-pool batch: every labeled sample, and the full L ∪ U stream.
inline StepBatch full_batch(const MultiDomainCorpus& corpus) {
  MiniBatchPair p;
  p.domains.resize(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (std::size_t j = 0; j < corpus.domains[i].l(); ++j) p.domains[i].labeled.push_back(j);
    for (std::size_t j = 0; j < corpus.domains[i].n(); ++j) p.domains[i].unlabeled.push_back(j);
  }
  return make_step_batch(corpus, p);
}

/// Splits every domain's labeled pool into folds; fold f's corpus trains on
/// the other folds plus all unlabeled data and tests on fold f.
inline std::vector<MultiDomainCorpus> crossval_corpora(const MultiDomainCorpus& corpus,
                                                       std::size_t folds, std::uint64_t seed) {
  std::vector<MultiDomainCorpus> out(folds);
  for (auto& c : out) {
    c.vocab_dim = corpus.vocab_dim;
    c.k = corpus.k;
    c.metadata = corpus.metadata;
  }
  for (const auto& d : corpus.domains) {
    auto splits = kfold_split(d, folds, seed);
    for (std::size_t f = 0; f < folds; ++f) {
      DomainDataset ds = std::move(splits[f].train);
      ds.test = std::move(splits[f].test.labeled);
      out[f].domains.push_back(std::move(ds));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_synth(const SynthConfig& sc, const std::string& out_dir, std::ostream& out) {
  if (out_dir.empty()) throw UsageError("synth: --out-dir is required");
  const MultiDomainCorpus c = synth_generate(sc);
  detail::ensure_dir(out_dir);
  const auto manifest = write_corpus(c, out_dir);
  Json j;
  j["manifest"] = manifest.generic_string();
  j["domains"] = c.size();
  j["vocab_dim"] = c.vocab_dim;
  j["labeled_per_domain"] = sc.labeled;
  j["unlabeled_per_domain"] = sc.unlabeled;
  j["test_per_domain"] = sc.test;
  j["bayes_accuracy"] = synth_bayes_accuracy(sc);
  write_json(out, j);
  return kExitOk;
}

inline int cmd_train(const RunConfig& rc, const std::string& checkpoint, std::ostream& out) {
  const MultiDomainCorpus corpus = detail::load_manifest_or_throw(rc);
  rc.train.validate();
  const std::filesystem::path dir(rc.out_dir);
  detail::ensure_dir(dir);
  const TrainResult r = train(corpus, rc.train);

  std::ostringstream csv;
  write_epoch_csv(csv, r.domain_names, r.epochs);
  detail::write_text_file(dir / "metrics.csv", csv.str());
  Json summary = train_summary_json(rc.train, r);
  const std::filesystem::path ck = checkpoint.empty() ? dir / "model.ckpt" : std::filesystem::path(checkpoint);
  save_checkpoint(ck, r.model, rc.train.seed);
  summary["checkpoint"] = ck.generic_string();
  detail::write_text_file(dir / "summary.json", to_json_string(summary));
  RunConfig saved = rc;
  if (!saved.manifest.empty() && std::filesystem::path(saved.manifest).is_relative()) {
    saved.manifest = std::filesystem::proximate(std::filesystem::absolute(saved.manifest),
                                                std::filesystem::absolute(dir))
                         .generic_string();
  }
  std::ostringstream cfg;
  write_run_config(cfg, saved);
  detail::write_text_file(dir / "run.cfg", cfg.str());

  detail::print_table(out, detail::epoch_table(r.domain_names, r.epochs));
  out << "selected epoch " << r.selected_epoch << ", held-out average accuracy "
      << detail::fmt6(r.final_eval.average) << '\n';
  return kExitOk;
}

inline int cmd_crossval(const RunConfig& rc, std::size_t workers, std::ostream& out) {
  const MultiDomainCorpus corpus = detail::load_manifest_or_throw(rc);
  rc.train.validate();
  if (rc.folds < 2) throw ConfigError("folds must be >= 2");
  if (workers == 0) throw UsageError("--workers must be >= 1");
  const auto corpora = crossval_corpora(corpus, rc.folds, rc.train.seed);
  std::vector<TrainResult> results(rc.folds);
  std::vector<std::exception_ptr> errors(rc.folds);
  TrainConfig cfg = rc.train;
  std::size_t next = 0;
  std::mutex queue;
  auto worker = [&]() {
    while (true) {
      std::size_t f;
      {
        std::lock_guard<std::mutex> lock(queue);
        if (next >= rc.folds) return;
        f = next++;
      }
      try {
        results[f] = train(corpora[f], cfg);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, rc.folds); ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const std::size_t m = corpus.size();
  std::vector<std::vector<double>> per_domain(m);
  std::vector<double> averages;
  Json folds_json = Json::array();
  std::ostringstream csv;
  csv << "fold,domain,accuracy\n";
  for (std::size_t f = 0; f < rc.folds; ++f) {
    const auto& ev = results[f].final_eval;
    for (std::size_t i = 0; i < m; ++i) {
      per_domain[i].push_back(ev.accuracy[i]);
      csv << f << ',' << corpus.domains[i].name << ',' << format_double(ev.accuracy[i], 17) << '\n';
    }
    averages.push_back(ev.average);
    csv << f << ",average," << format_double(ev.average, 17) << '\n';
    folds_json.push_back({{"fold", f},
                          {"selected_epoch", results[f].selected_epoch},
                          {"accuracy", detail::json_numbers(ev.accuracy)},
                          {"average", ev.average}});
  }
  Json j;
  j["config"] = config_to_json(rc.train);
  j["folds"] = rc.folds;
  j["domains"] = Json::array();
  for (const auto& d : corpus.domains) j["domains"].push_back(d.name);
  j["per_fold"] = folds_json;
  Json summary = Json::array();
  std::vector<std::vector<std::string>> rows{{"domain", "mean", "std"}};
  for (std::size_t i = 0; i < m; ++i) {
    const double mu = mean(per_domain[i]);
    const double sd = detail::sample_std(per_domain[i]);
    summary.push_back({{"domain", corpus.domains[i].name}, {"mean", mu}, {"std", sd}});
    rows.push_back({corpus.domains[i].name, detail::fmt6(mu), detail::fmt6(sd)});
  }
  const double mu = mean(averages);
  const double sd = detail::sample_std(averages);
  summary.push_back({{"domain", "average"}, {"mean", mu}, {"std", sd}});
  rows.push_back({"average", detail::fmt6(mu), detail::fmt6(sd)});
  j["summary"] = summary;

  const std::filesystem::path dir(rc.out_dir);
  detail::ensure_dir(dir);
  detail::write_text_file(dir / "crossval.csv", csv.str());
  detail::write_text_file(dir / "crossval.json", to_json_string(j));
  detail::print_table(out, rows);
  return kExitOk;
}

struct GradcheckFlags {
  std::uint64_t seed = 1;
  double beta = 4.0;
  double tolerance = 1e-4;
  std::size_t coords = 50;
  bool no_dropout = false;
  bool corrupt_backward = false;
  bool table = false;
};

inline Json run_gradcheck(const GradcheckFlags& g, bool& all_passed) {
  const MultiDomainCorpus corpus = gradcheck_corpus(g.seed);
  MdatModel model(gradcheck_model_spec());
  init_params(model, Rng(g.seed).child("init"));
  const StepBatch batch = full_batch(corpus);
  GradCheckOptions opt;
  opt.tolerance = g.tolerance;
  opt.coords_per_component = g.coords;
  opt.dropout = !g.no_dropout;
  opt.beta = g.beta;
  opt.seed = g.seed;
  opt.corrupt_backward = g.corrupt_backward;
  Json j;
  j["step"] = opt.step;
  j["tolerance"] = opt.tolerance;
  j["dropout_masks"] = opt.dropout ? "frozen" : "off";
  j["corrupt_backward"] = opt.corrupt_backward;
  Json reports = Json::array();
  all_passed = true;
  for (LossKind k : kAllLosses) {
    const GradCheckReport r = grad_check(model, batch, k, opt);
    all_passed = all_passed && r.passed;
    reports.push_back(to_json(r, opt.tolerance));
  }
  j["losses"] = reports;
  j["passed"] = all_passed;
  return j;
}

inline int cmd_gradcheck(const GradcheckFlags& g, std::ostream& out) {
  bool ok = false;
  const Json j = run_gradcheck(g, ok);
  if (g.table) {
    std::vector<std::vector<std::string>> rows{
        {"loss", "component", "checked", "kinks", "max_rel_err", "status"}};
    for (const auto& l : j["losses"]) {
      for (const auto& c : l["components"]) {
        const double e = c["max_rel_error"].get<double>();
        rows.push_back({l["loss"].get<std::string>(), c["component"].get<std::string>(),
                        std::to_string(c["checked"].get<std::size_t>()),
                        std::to_string(c["excluded_kinks"].get<std::size_t>()), detail::fmt6(e),
                        e <= g.tolerance ? "ok" : "FAIL"});
      }
    }
    detail::print_table(out, rows);
    out << (ok ? "PASS" : "FAIL") << '\n';
  } else {
    write_json(out, j);
  }
  if (!ok) throw CheckFailed{};
  return kExitOk;
}

inline int cmd_oracle(const std::string& instance, std::vector<double> rhos,
                      const std::string& loss, std::ostream& out) {
  if (instance.empty()) throw UsageError("oracle: --instance is required");
  if (rhos.empty()) rhos = {1.0};
  const OracleInstance inst = load_oracle_instance(instance);
  write_json(out, run_oracles(inst, rhos, loss));
  return kExitOk;
}

struct BoundFlags {
  std::string checkpoint;
  std::string out;
  double rho = 0.0;  // 0: ln(beta) of the run configuration
  double delta = 0.05;
  std::size_t draws = 200;
  double radius = 0.05;
  std::size_t samples = 200;
  std::size_t restarts = 4;
  std::size_t local_steps = 8;
  bool key_value = false;
};

inline int cmd_bound(const RunConfig& rc, const BoundFlags& b, std::ostream& out) {
  if (b.checkpoint.empty()) throw UsageError("bound: --checkpoint is required");
  ModelBoundOptions opt;
  opt.rho = b.rho > 0.0 ? b.rho : rc.train.diagnostic_rho();
  opt.delta = b.delta;
  validate_bound_params(opt.rho, opt.delta);
  opt.draws = b.draws;
  opt.radius = b.radius;
  opt.samples_per_domain = b.samples;
  opt.search = {b.restarts, b.local_steps};
  opt.seed = rc.train.seed;
  const MultiDomainCorpus corpus = detail::load_manifest_or_throw(rc);
  const Checkpoint ck = load_checkpoint(b.checkpoint);
  const BoundReport rep = evaluate_model_bound(ck.model, corpus, opt);
  const std::string text = b.key_value ? to_key_value(rep) : to_json_string(to_json(rep));
  if (!b.out.empty()) detail::write_text_file(b.out, text);
  out << text;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline void write_error(std::ostream& err, const std::string& kind, const std::string& message) {
  Json j;
  j["error"] = {{"kind", kind}, {"message", message}};
  write_json(err, j, -1);
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-domain adversarial text classification toolkit", "mdat"};
  app.require_subcommand(1);

  SynthConfig sc;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-domain corpus");
  synth->add_option("--domains,-M", sc.domains, "number of domains");
  synth->add_option("--vocab", sc.vocab_dim, "vocabulary size");
  synth->add_option("--labeled", sc.labeled, "labeled samples per domain");
  synth->add_option("--unlabeled", sc.unlabeled, "unlabeled samples per domain");
  synth->add_option("--test", sc.test, "held-out test samples per domain");
  synth->add_option("--shared-tokens", sc.shared_tokens, "shared-signal tokens per document");
  synth->add_option("--specific-tokens", sc.specific_tokens, "domain-signal tokens per document");
  synth->add_option("--background-tokens", sc.background_tokens, "background tokens per document");
  synth->add_option("--private-background", sc.private_background,
                    "share of background tokens drawn from the domain's private block");
  synth->add_option("--flip-fraction", sc.flip_fraction,
                    "share of domain-signal features whose polarity flips across domains");
  synth->add_option("--noise", sc.noise, "probability that a signal token has the wrong polarity");
  synth->add_option("--seed", sc.seed, "random seed");
  synth->add_option("--out-dir", synth_out, "output directory")->required();

  detail::ConfigFlags train_flags;
  std::string checkpoint;
  auto* train_cmd = app.add_subcommand("train", "train a model and write metrics and a checkpoint");
  train_flags.attach(*train_cmd);
  train_cmd->add_option("--checkpoint", checkpoint, "checkpoint path (default <out-dir>/model.ckpt)");

  detail::ConfigFlags cv_flags;
  std::size_t workers = 1;
  auto* cv = app.add_subcommand("crossval", "k-fold cross-validation over the labeled pools");
  cv_flags.attach(*cv);
  cv->add_option("--workers", workers, "folds trained in parallel");

  GradcheckFlags gflags;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of all loss gradients");
  gc->add_option("--seed", gflags.seed, "random seed");
  gc->add_option("--beta", gflags.beta, "margin weight");
  gc->add_option("--tolerance", gflags.tolerance, "maximum relative error");
  gc->add_option("--coords", gflags.coords, "coordinates checked per component");
  gc->add_flag("--no-dropout", gflags.no_dropout, "check without dropout masks");
  gc->add_flag("--corrupt-backward", gflags.corrupt_backward,
               "negative control: break the rectifier backward pass");
  gc->add_flag("--table", gflags.table, "human-readable table instead of JSON");

  std::string instance;
  std::vector<double> rhos;
  std::string loss = "squared";
  auto* oracle = app.add_subcommand("oracle", "exact divergences on a finite instance");
  oracle->add_option("--instance", instance, "instance JSON file")->required();
  oracle->add_option("--rho", rhos, "margin (repeatable)");
  oracle->add_option("--loss", loss, "discrepancy-divergence loss: squared or zero-one");

  detail::ConfigFlags bound_flags;
  BoundFlags bflags;
  auto* bound = app.add_subcommand("bound", "generalization bound report for a checkpoint");
  bound_flags.attach(*bound);
  bound->add_option("--checkpoint", bflags.checkpoint, "trained checkpoint")->required();
  bound->add_option("--rho", bflags.rho, "margin (default ln beta)");
  bound->add_option("--delta", bflags.delta, "confidence parameter, 0 < delta < 1/3");
  bound->add_option("--draws", bflags.draws, "Rademacher draws");
  bound->add_option("--radius", bflags.radius, "parameter box radius around the classifier");
  bound->add_option("--samples", bflags.samples, "samples per domain");
  bound->add_option("--restarts", bflags.restarts, "random-search restarts per sup");
  bound->add_option("--local-steps", bflags.local_steps, "local search steps per sup");
  bound->add_option("--out", bflags.out, "also write the report to this file");
  bound->add_flag("--key-value", bflags.key_value, "key = value lines instead of JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    write_error(err, "usage", e.what());
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(sc, synth_out, out);
    if (*train_cmd) return cmd_train(train_flags.resolve(), checkpoint, out);
    if (*cv) return cmd_crossval(cv_flags.resolve(), workers, out);
    if (*gc) return cmd_gradcheck(gflags, out);
    if (*oracle) return cmd_oracle(instance, rhos, loss, out);
    if (*bound) return cmd_bound(bound_flags.resolve(), bflags, out);
  } catch (const CheckFailed&) {
    return kExitFailure;
  } catch (const Error& e) {
    write_error(err, std::string(to_string(e.kind())), e.what());
    switch (e.kind()) {
      case ErrorKind::Usage:
      case ErrorKind::Config:
      case ErrorKind::Domain:
        return kExitUsage;
      default:
        return kExitFailure;
    }
  } catch (const std::exception& e) {
    write_error(err, "internal", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace mdat
