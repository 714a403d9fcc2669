#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mdat/cli.hpp"

using namespace mdat;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "mdat");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mdat_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Json read_json(const fs::path& p) {
  std::ifstream in(p);
  return Json::parse(in);
}

const fs::path kSource = MDAT_SOURCE_DIR;

// A small corpus and fast training flags shared by several tests.
fs::path small_corpus() {
  static const fs::path dir = [] {
    const fs::path d = fresh_dir("corpus");
    const auto r = run({"synth", "--vocab", "60", "--labeled", "30", "--unlabeled", "20", "--test",
                        "20", "--seed", "5", "--out-dir", d.string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir / "manifest.txt";
}

std::vector<std::string> fast_flags(const fs::path& out) {
  return {"--manifest", small_corpus().string(), "--out-dir", out.string(), "--epochs", "2",
          "--batch", "8", "--shared-hidden", "8", "--shared-out", "4", "--specific-hidden", "8",
          "--specific-out", "4", "--classifier-hidden", "4", "--diagnostics", "false",
          "--lr", "0.01"};
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("synth"), std::string::npos);
  r = run({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--specific-hidden"), std::string::npos);

  r = run({});
  EXPECT_EQ(r.code, 2);
  r = run({"train", "--no-such-flag"});
  EXPECT_EQ(r.code, 2);
  const Json e = Json::parse(r.err);
  EXPECT_EQ(e["error"]["kind"], "usage");
}

TEST(Cli, UnknownConfigKeyIsConfigError) {
  const fs::path d = fresh_dir("badcfg");
  {
    std::ofstream f(d / "run.cfg");
    f << "epochs = 1\nlearning_rate = 0.1\n";
  }
  const auto r = run({"train", "--config", (d / "run.cfg").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(Json::parse(r.err)["error"]["kind"], "config");
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos);
}

TEST(Cli, MissingManifestIsIoFailure) {
  const auto r = run({"train", "--manifest", "/nonexistent/manifest.txt"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(Json::parse(r.err)["error"]["kind"], "io");
}

TEST(Cli, OracleMatchesGolden) {
  const Json golden = read_json(kSource / "data/oracle_golden.json");
  for (const std::string loss : {"squared", "zero-one"}) {
    const auto r = run({"oracle", "--instance", (kSource / "data/oracle_instance.json").string(),
                        "--rho", "0.5", "--rho", "1", "--rho", "2", "--loss", loss});
    ASSERT_EQ(r.code, 0) << r.err;
    const Json j = Json::parse(r.out);
    EXPECT_NEAR(j["hdeltah_divergence"].get<double>(), golden["hdeltah_divergence"].get<double>(),
                1e-12);
    EXPECT_NEAR(j["zero_one_discrepancy"].get<double>(),
                golden["zero_one_discrepancy"].get<double>(), 1e-12);
    EXPECT_EQ(j["discrepancy_divergence"]["loss"], loss);
    EXPECT_NEAR(j["discrepancy_divergence"]["value"].get<double>(),
                golden["discrepancy_divergence"][loss].get<double>(), 1e-12);
    ASSERT_EQ(j["margin_discrepancy"].size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(j["margin_discrepancy"][i]["rho"], golden["margin_discrepancy"][i]["rho"]);
      EXPECT_NEAR(j["margin_discrepancy"][i]["value"].get<double>(),
                  golden["margin_discrepancy"][i]["value"].get<double>(), 1e-12);
    }
  }
  EXPECT_EQ(run({"oracle", "--instance", (kSource / "data/oracle_instance.json").string(),
                 "--loss", "hinge"})
                .code,
            2);
}

TEST(Cli, SynthNoiselessReportsBayesOne) {
  const fs::path d = fresh_dir("synth");
  const auto r = run({"synth", "--noise", "0", "--flip-fraction", "0", "--labeled", "5",
                      "--unlabeled", "5", "--test", "5", "--out-dir", d.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(Json::parse(r.out)["bayes_accuracy"].get<double>(), 1.0);
  const MultiDomainCorpus c = load_corpus(d / "manifest.txt");
  EXPECT_EQ(c.meta("bayes_accuracy"), std::optional<std::string>("1"));
  EXPECT_EQ(run({"synth", "--noise", "0.9", "--out-dir", d.string()}).code, 2);
}

TEST(Cli, TrainThenBound) {
  const fs::path d = fresh_dir("train");
  auto r = run(cat({"train"}, fast_flags(d)));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"metrics.csv", "summary.json", "model.ckpt", "run.cfg"}) {
    EXPECT_TRUE(fs::exists(d / f)) << f;
  }
  EXPECT_NE(r.out.find("selected epoch"), std::string::npos);
  const Json s = read_json(d / "summary.json");
  EXPECT_TRUE(s.contains("checkpoint"));

  // run.cfg replays to the same configuration.
  const fs::path d2 = fresh_dir("train_replay");
  r = run({"train", "--config", (d / "run.cfg").string(), "--out-dir", d2.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream a(d / "metrics.csv"), b(d2 / "metrics.csv");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());

  r = run({"bound", "--config", (d / "run.cfg").string(), "--checkpoint",
           (d / "model.ckpt").string(), "--draws", "20", "--samples", "20", "--restarts", "1",
           "--local-steps", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json rep = Json::parse(r.out);
  double sum = 0.0;
  for (const auto& [name, v] : rep["parts"].items()) sum += v.get<double>();
  EXPECT_EQ(rep["total_minus_lambda"].get<double>(), sum);

  r = run({"bound", "--config", (d / "run.cfg").string(), "--checkpoint",
           (d / "model.ckpt").string(), "--delta", "0.5"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(Json::parse(r.err)["error"]["kind"], "domain");
}

TEST(Cli, CrossvalSummaryMatchesFolds) {
  const fs::path d = fresh_dir("cv");
  const auto r = run(cat({"crossval", "--folds", "2", "--workers", "2"}, fast_flags(d)));
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = read_json(d / "crossval.json");
  ASSERT_EQ(j["per_fold"].size(), 2u);
  const double a = j["per_fold"][0]["average"].get<double>();
  const double b = j["per_fold"][1]["average"].get<double>();
  const Json& avg = j["summary"].back();
  EXPECT_EQ(avg["domain"], "average");
  EXPECT_NEAR(avg["mean"].get<double>(), (a + b) / 2.0, 1e-15);
  EXPECT_NEAR(avg["std"].get<double>(), std::abs(a - b) / std::sqrt(2.0), 1e-15);

  // Worker count does not change the result.
  const fs::path d1 = fresh_dir("cv1");
  ASSERT_EQ(run(cat({"crossval", "--folds", "2", "--workers", "1"}, fast_flags(d1))).code, 0);
  EXPECT_EQ(read_json(d1 / "crossval.json")["per_fold"], j["per_fold"]);
}

TEST(Cli, GradcheckExitCodes) {
  auto r = run({"gradcheck", "--coords", "10"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  r = run({"gradcheck", "--coords", "10", "--corrupt-backward"});
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, TinyCorpusReachesNinetyPercent) {
  const fs::path d = fresh_dir("tiny");
  const auto r = run({"train", "--config", (kSource / "configs/tiny.cfg").string(), "--out-dir",
                      d.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GE(read_json(d / "summary.json")["final_average"].get<double>(), 0.90);
}

TEST(Cli, ZeroEpochsIsNearChance) {
  const fs::path d = fresh_dir("tiny0");
  const auto r = run({"train", "--config", (kSource / "configs/tiny.cfg").string(), "--out-dir",
                      d.string(), "--epochs", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json s = read_json(d / "summary.json");
  EXPECT_EQ(s["selected_epoch"], 0);
  EXPECT_NEAR(s["final_average"].get<double>(), 0.5, 0.1);
}

TEST(Cli, OracleIdenticalSamplesAndRhoSweep) {
  Json inst = read_json(kSource / "data/oracle_instance.json");
  inst["s2"] = inst["s1"];
  const fs::path d = fresh_dir("oracle_same");
  {
    std::ofstream f(d / "same.json");
    f << inst.dump();
  }
  auto r = run({"oracle", "--instance", (d / "same.json").string(), "--rho", "0.5", "--rho", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  Json j = Json::parse(r.out);
  EXPECT_EQ(j["hdeltah_divergence"].get<double>(), 0.0);
  EXPECT_EQ(j["zero_one_discrepancy"].get<double>(), 0.0);
  EXPECT_EQ(j["discrepancy_divergence"]["value"].get<double>(), 0.0);
  for (const auto& m : j["margin_discrepancy"]) EXPECT_EQ(m["value"].get<double>(), 0.0);

  r = run({"oracle", "--instance", (kSource / "data/oracle_instance.json").string(), "--rho", "0.5",
           "--rho", "1", "--rho", "2"});
  j = Json::parse(r.out);
  for (std::size_t i = 1; i < 3; ++i) {
    EXPECT_LE(j["margin_discrepancy"][i]["value"].get<double>(),
              j["margin_discrepancy"][i - 1]["value"].get<double>());
  }
}

TEST(Cli, GradcheckReportListsKinks) {
  const auto r = run({"gradcheck", "--coords", "5"});
  ASSERT_EQ(r.code, 0);
  const Json j = Json::parse(r.out);
  for (const auto& l : j["losses"]) {
    for (const auto& c : l["components"]) EXPECT_TRUE(c.contains("excluded_kinks"));
  }
}
