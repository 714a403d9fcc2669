#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mdat/dataio.hpp"
#include "test_util.hpp"

using namespace mdat;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mdat_dataio_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(SparseParse, LabeledAndUnlabeledLines) {
  std::istringstream in("1 0:2 3:1.5\n# comment\n\n? 2:1\n0\n");
  const DomainDataset ds = parse_sparse_stream(in, 5, "x", 2);
  ASSERT_EQ(ds.l(), 2u);
  ASSERT_EQ(ds.u(), 1u);
  EXPECT_EQ(ds.labeled[0].label, 1u);
  EXPECT_EQ(ds.labeled[0].x.densify(), (Vector{2, 0, 0, 1.5, 0}));
  EXPECT_EQ(ds.labeled[1].x.nnz(), 0u);
  EXPECT_EQ(ds.unlabeled[0].densify(), (Vector{0, 0, 1, 0, 0}));
  EXPECT_EQ(&ds.pooled(2), &ds.unlabeled[0]);
}

TEST(SparseParse, ErrorsCarryLineNumbers) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_sparse_stream(in, 5, "x", 2);
  };
  try {
    parse("1 0:1\n1 3:1 2:1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse("1 0:1 0:2\n"), ParseError);
  EXPECT_THROW(parse("x 0:1\n"), ParseError);
  EXPECT_THROW(parse("1 0-1\n"), ParseError);
  EXPECT_THROW(parse("1 0:-1\n"), ParseError);
  EXPECT_THROW(parse("1 5:1\n"), RangeError);
  EXPECT_THROW(parse("2 0:1\n"), RangeError);
}

TEST(Manifest, RejectsUnknownKeysAndMissingFields) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_manifest(in);
  };
  EXPECT_THROW(parse("vocab_dim = 5\nbogus = 1\ndomain.a.labeled = a\n"), ConfigError);
  EXPECT_THROW(parse("domain.a.labeled = a\n"), ConfigError);
  EXPECT_THROW(parse("vocab_dim = 5\n"), ConfigError);
  EXPECT_THROW(parse("vocab_dim = 5\ndomain.a.unlabeled = u\n"), ConfigError);
  EXPECT_THROW(parse("vocab_dim = 5\ndomain.a.weird = u\ndomain.a.labeled = a\n"), ConfigError);
  const Manifest m = parse("vocab_dim = 5\nk = 3\ndomain.b.labeled = b\ndomain.a.labeled = a\n");
  ASSERT_EQ(m.domains.size(), 2u);
  EXPECT_EQ(m.domains[0].name, "b");
  EXPECT_EQ(m.k, 3u);
}

TEST(Corpus, WriteLoadRoundTrip) {
  const MultiDomainCorpus c = testutil::toy_corpus(3);
  const fs::path dir = fresh_dir("roundtrip");
  const fs::path manifest = write_corpus(c, dir);
  const MultiDomainCorpus back = load_corpus(manifest);
  EXPECT_EQ(back, c);
}

TEST(Corpus, MissingFileIsIoErrorWithPath) {
  const fs::path dir = fresh_dir("missing");
  {
    std::ofstream mf(dir / "manifest.txt");
    mf << "vocab_dim = 4\ndomain.a.labeled = nothere.txt\n";
  }
  try {
    load_corpus(dir / "manifest.txt");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("nothere.txt"), std::string::npos);
  }
}

TEST(Synth, DefaultsGiveThreeDomainsAndRoundTrip) {
  SynthConfig sc;
  sc.labeled = 20;
  sc.unlabeled = 10;
  sc.test = 5;
  const MultiDomainCorpus c = synth_generate(sc);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c.vocab_dim, 200u);
  for (const auto& d : c.domains) {
    EXPECT_EQ(d.l(), 20u);
    EXPECT_EQ(d.u(), 10u);
    EXPECT_EQ(d.test.size(), 5u);
  }
  const fs::path dir = fresh_dir("synth_rt");
  EXPECT_EQ(load_corpus(write_corpus(c, dir)), c);
}

TEST(Synth, SameSeedByteIdenticalFiles) {
  SynthConfig sc;
  sc.labeled = 30;
  sc.unlabeled = 30;
  sc.test = 30;
  sc.seed = 7;
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  write_corpus(synth_generate(sc), a);
  write_corpus(synth_generate(sc), b);
  for (const auto& e : fs::directory_iterator(a)) {
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
  }
  sc.seed = 8;
  EXPECT_NE(synth_generate(sc), load_corpus(a / "manifest.txt"));
}

TEST(Synth, NoiselessBayesAccuracyIsOne) {
  SynthConfig sc;
  sc.noise = 0.0;
  sc.flip_fraction = 0.0;
  sc.labeled = 5;
  sc.unlabeled = 0;
  sc.test = 0;
  EXPECT_EQ(synth_bayes_accuracy(sc), 1.0);
  const MultiDomainCorpus c = synth_generate(sc);
  EXPECT_EQ(c.meta("bayes_accuracy"), std::optional<std::string>("1"));
}

TEST(Synth, BayesAccuracyMatchesBinomialTail) {
  // Majority vote over t = 6 signal tokens with per-token error 0.05; ties
  // are split evenly.
  SynthConfig sc;
  const double e = 0.05;
  const int t = 6;
  double acc = 0.0;
  for (int c = 0; c <= t; ++c) {
    double binom = 1.0;
    for (int i = 0; i < c; ++i) binom = binom * (t - i) / (i + 1);
    const double p = binom * std::pow(1 - e, c) * std::pow(e, t - c);
    if (2 * c > t) acc += p;
    else if (2 * c == t) acc += 0.5 * p;
  }
  EXPECT_NEAR(synth_bayes_accuracy(sc), acc, 1e-15);
}

TEST(Synth, EmpiricalLabelAgreementOfSharedTokens) {
  // With flip_fraction = 1 the specific block reverses polarity in some
  // domains, while shared tokens keep their polarity everywhere.
  SynthConfig sc;
  sc.labeled = 400;
  sc.unlabeled = 0;
  sc.test = 0;
  sc.noise = 0.0;
  sc.flip_fraction = 1.0;
  const MultiDomainCorpus c = synth_generate(sc);
  const SynthLayout lay = synth_layout(sc);
  for (const auto& d : c.domains) {
    for (const auto& s : d.labeled) {
      for (const auto& e : s.x.entries()) {
        if (e.index >= lay.shared_begin && e.index < lay.shared_begin + lay.shared_size) {
          const bool positive = e.index - lay.shared_begin < lay.shared_size / 2;
          ASSERT_EQ(positive ? 1u : 0u, s.label);
        }
      }
    }
  }
}

TEST(Synth, InvalidConfigRejected) {
  SynthConfig sc;
  sc.noise = 0.7;
  EXPECT_THROW(synth_generate(sc), ConfigError);
  sc = {};
  sc.domains = 0;
  EXPECT_THROW(synth_generate(sc), ConfigError);
  sc = {};
  sc.flip_fraction = 1.5;
  EXPECT_THROW(synth_generate(sc), ConfigError);
}

TEST(KFold, PartitionsLabeledPool) {
  const MultiDomainCorpus c = testutil::toy_corpus(1, 23, 5);
  const auto& ds = c.domains[0];
  const auto splits = kfold_split(ds, 5, 9);
  ASSERT_EQ(splits.size(), 5u);
  std::size_t total = 0;
  std::set<std::string> seen;
  for (const auto& s : splits) {
    EXPECT_EQ(s.train.l() + s.test.l(), ds.l());
    EXPECT_TRUE(s.test.l() == 4 || s.test.l() == 5);
    EXPECT_EQ(s.train.unlabeled, ds.unlabeled);
    total += s.test.l();
    for (const auto& x : s.test.labeled) {
      std::ostringstream os;
      write_sparse_line(os, x.x, x.label);
      seen.insert(os.str());
    }
  }
  EXPECT_EQ(total, ds.l());
  const auto again = kfold_split(ds, 5, 9);
  for (std::size_t f = 0; f < 5; ++f) EXPECT_EQ(again[f].test, splits[f].test);
  EXPECT_THROW(kfold_split(ds, 1, 9), ConfigError);
  EXPECT_THROW(kfold_split(ds, 24, 9), ConfigError);
}

TEST(Sampler, EpochCoversLargestPoolWithoutRepeats) {
  const MultiDomainCorpus c = testutil::toy_corpus(1, 16, 4);
  MinibatchSampler s(c, 4, Rng(3));
  ASSERT_EQ(s.iterations_per_epoch(), 4u);
  std::multiset<std::size_t> seen;
  for (std::size_t it = 0; it < s.iterations_per_epoch(); ++it) {
    const MiniBatchPair p = s.next();
    ASSERT_EQ(p.domains.size(), 2u);
    EXPECT_EQ(p.domains[0].labeled.size(), 4u);
    EXPECT_EQ(p.domains[0].unlabeled.size(), 4u);
    for (auto j : p.domains[0].labeled) seen.insert(j);
    for (auto j : p.domains[0].unlabeled) EXPECT_LT(j, c.domains[0].n());
  }
  EXPECT_EQ(seen.size(), 16u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 16u);
}

TEST(Sampler, HiddenDomainGetsNoLabeledBatches) {
  const MultiDomainCorpus c = testutil::toy_corpus(1, 8, 4);
  MinibatchSampler s(c, 4, Rng(3), std::size_t{1});
  const MiniBatchPair p = s.next();
  EXPECT_TRUE(p.domains[1].labeled.empty());
  EXPECT_EQ(p.domains[1].unlabeled.size(), 4u);
  EXPECT_THROW(MinibatchSampler(c, 0, Rng(1)), ConfigError);
}
