#pragma once

// Multi-domain corpus model: sparse sample files, corpus manifests, k-fold
// splitting, the per-domain minibatch sampler, and a synthetic generator with
// cross-domain polarity flips.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mdat/errors.hpp"
#include "mdat/format.hpp"
#include "mdat/numkernel.hpp"

namespace mdat {

struct LabeledSample {
  SparseVector x;
  std::size_t label = 0;

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

/// One domain: labeled pool L_i, unlabeled pool U_i (n_i = l_i + u_i) and an
/// optional held-out labeled test set that is not part of n_i.
struct DomainDataset {
  std::string name;
  std::vector<LabeledSample> labeled;
  std::vector<SparseVector> unlabeled;
  std::vector<LabeledSample> test;

  std::size_t l() const noexcept { return labeled.size(); }
  std::size_t u() const noexcept { return unlabeled.size(); }
  std::size_t n() const noexcept { return labeled.size() + unlabeled.size(); }

  /// Sample j of L_i ∪ U_i, labeled samples first.
  const SparseVector& pooled(std::size_t j) const {
    return j < labeled.size() ? labeled[j].x : unlabeled[j - labeled.size()];
  }

  friend bool operator==(const DomainDataset&, const DomainDataset&) = default;
};

struct MultiDomainCorpus {
  std::vector<DomainDataset> domains;
  std::size_t vocab_dim = 0;
  std::size_t k = 2;
  /// Free-form `meta.*` manifest entries, kept in insertion order.
  std::vector<std::pair<std::string, std::string>> metadata;

  std::size_t size() const noexcept { return domains.size(); }

  std::size_t domain_index(std::string_view name) const {
    for (std::size_t i = 0; i < domains.size(); ++i) {
      if (domains[i].name == name) return i;
    }
    throw UsageError("unknown domain '" + std::string(name) + "'");
  }

  std::optional<std::string> meta(std::string_view key) const {
    for (const auto& [k2, v] : metadata) {
      if (k2 == key) return v;
    }
    return std::nullopt;
  }

  void validate() const {
    if (domains.empty()) throw ConfigError("corpus: no domains");
    if (k < 2) throw ConfigError("corpus: need at least two classes");
    auto check = [&](const SparseVector& x, const std::string& where) {
      if (x.dim() != vocab_dim) {
        throw ShapeError("corpus: " + where + " has dim " + std::to_string(x.dim()) +
                         ", expected " + std::to_string(vocab_dim));
      }
    };
    for (const auto& d : domains) {
      for (const auto& s : d.labeled) {
        check(s.x, d.name);
        if (s.label >= k) throw RangeError("corpus: label out of range in " + d.name);
      }
      for (const auto& s : d.test) {
        check(s.x, d.name);
        if (s.label >= k) throw RangeError("corpus: label out of range in " + d.name);
      }
      for (const auto& x : d.unlabeled) check(x, d.name);
    }
  }

  friend bool operator==(const MultiDomainCorpus&, const MultiDomainCorpus&) = default;
};

// ---------------------------------------------------------------------------
// Sparse sample files: `label idx:count idx:count ...`, label `?` = unlabeled.

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace detail

/// Reads samples into a dataset. Labeled lines go to `labeled`, `?` lines to
/// `unlabeled`. `num_classes` = 0 skips the label range check.
inline DomainDataset parse_sparse_stream(std::istream& in, std::size_t vocab_dim,
                                         std::string name = {}, std::size_t num_classes = 0) {
  DomainDataset ds;
  ds.name = std::move(name);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto tokens = detail::split_ws(line);
    std::optional<std::size_t> label;
    if (tokens[0] != "?") {
      std::size_t y = 0;
      if (!detail::parse_number(tokens[0], y)) {
        throw ParseError(line_no, "bad label '" + std::string(tokens[0]) + "'");
      }
      if (num_classes > 0 && y >= num_classes) {
        throw RangeError("line " + std::to_string(line_no) + ": label " + std::to_string(y) +
                         " >= k = " + std::to_string(num_classes));
      }
      label = y;
    }
    std::vector<SparseEntry> entries;
    entries.reserve(tokens.size() - 1);
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      const auto tok = tokens[t];
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos) {
        throw ParseError(line_no, "expected idx:count, got '" + std::string(tok) + "'");
      }
      std::uint32_t idx = 0;
      double value = 0.0;
      if (!detail::parse_number(tok.substr(0, colon), idx)) {
        throw ParseError(line_no, "bad feature index in '" + std::string(tok) + "'");
      }
      if (!detail::parse_number(tok.substr(colon + 1), value) || !std::isfinite(value)) {
        throw ParseError(line_no, "bad count in '" + std::string(tok) + "'");
      }
      if (value < 0.0) throw ParseError(line_no, "negative count in '" + std::string(tok) + "'");
      if (idx >= vocab_dim) {
        throw RangeError("line " + std::to_string(line_no) + ": feature index " +
                         std::to_string(idx) + " >= vocab_dim " + std::to_string(vocab_dim));
      }
      if (!entries.empty() && entries.back().index == idx) {
        throw ParseError(line_no, "duplicate feature index " + std::to_string(idx));
      }
      if (!entries.empty() && entries.back().index > idx) {
        throw ParseError(line_no, "feature indices must be ascending");
      }
      entries.push_back({idx, value});
    }
    SparseVector x(vocab_dim, std::move(entries));
    if (label) {
      ds.labeled.push_back({std::move(x), *label});
    } else {
      ds.unlabeled.push_back(std::move(x));
    }
  }
  return ds;
}

inline DomainDataset parse_sparse_file(const std::filesystem::path& path, std::size_t vocab_dim,
                                       std::size_t num_classes = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return parse_sparse_stream(in, vocab_dim, path.stem().string(), num_classes);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.string() + ": " +
                                   std::string(std::string_view(e.what()).substr(
                                       std::string_view(e.what()).find(": ") + 2)));
  }
}

inline void write_sparse_line(std::ostream& os, const SparseVector& x,
                              std::optional<std::size_t> label) {
  if (label) {
    os << *label;
  } else {
    os << '?';
  }
  for (const auto& e : x.entries()) os << ' ' << e.index << ':' << format_roundtrip(e.value);
  os << '\n';
}

// ---------------------------------------------------------------------------
// Manifest: `key = value` lines.
//   vocab_dim = <n>
//   k = <n>
//   domain.<name>.labeled = <file>      (required, order of first mention)
//   domain.<name>.unlabeled = <file>    (optional)
//   domain.<name>.test = <file>         (optional held-out labeled set)
//   meta.<key> = <text>                 (free-form)
// Relative paths resolve against the manifest's directory.

struct ManifestDomain {
  std::string name;
  std::string labeled;
  std::string unlabeled;
  std::string test;
};

struct Manifest {
  std::size_t vocab_dim = 0;
  std::size_t k = 2;
  std::vector<ManifestDomain> domains;
  std::vector<std::pair<std::string, std::string>> metadata;
};

/// Splits `key = value` lines, skipping blanks and `#` comments.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(line_no, "empty key");
    out.emplace_back(std::string(key), std::string(value));
  }
  return out;
}

inline Manifest parse_manifest(std::istream& in) {
  Manifest m;
  bool have_dim = false;
  for (const auto& [key, value] : parse_key_values(in)) {
    if (key == "vocab_dim") {
      if (!detail::parse_number(std::string_view(value), m.vocab_dim) || m.vocab_dim == 0) {
        throw ConfigError("manifest: bad vocab_dim '" + value + "'");
      }
      have_dim = true;
    } else if (key == "k") {
      if (!detail::parse_number(std::string_view(value), m.k) || m.k < 2) {
        throw ConfigError("manifest: bad k '" + value + "'");
      }
    } else if (key.rfind("meta.", 0) == 0) {
      m.metadata.emplace_back(key.substr(5), value);
    } else if (key.rfind("domain.", 0) == 0) {
      const std::string rest = key.substr(7);
      const auto dot = rest.rfind('.');
      if (dot == std::string::npos || dot == 0) {
        throw ConfigError("manifest: bad domain key '" + key + "'");
      }
      const std::string name = rest.substr(0, dot);
      const std::string field = rest.substr(dot + 1);
      auto it = std::find_if(m.domains.begin(), m.domains.end(),
                             [&](const ManifestDomain& d) { return d.name == name; });
      if (it == m.domains.end()) {
        m.domains.push_back({name, {}, {}, {}});
        it = std::prev(m.domains.end());
      }
      if (field == "labeled") {
        it->labeled = value;
      } else if (field == "unlabeled") {
        it->unlabeled = value;
      } else if (field == "test") {
        it->test = value;
      } else {
        throw ConfigError("manifest: unknown domain field '" + key + "'");
      }
    } else {
      throw ConfigError("manifest: unknown key '" + key + "'");
    }
  }
  if (!have_dim) throw ConfigError("manifest: missing vocab_dim");
  if (m.domains.empty()) throw ConfigError("manifest: no domains");
  for (const auto& d : m.domains) {
    if (d.labeled.empty()) throw ConfigError("manifest: domain '" + d.name + "' has no labeled file");
  }
  return m;
}

inline MultiDomainCorpus load_corpus(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest '" + manifest_path.string() + "'");
  const Manifest m = parse_manifest(in);
  const auto base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  MultiDomainCorpus corpus;
  corpus.vocab_dim = m.vocab_dim;
  corpus.k = m.k;
  corpus.metadata = m.metadata;
  for (const auto& md : m.domains) {
    DomainDataset ds = parse_sparse_file(resolve(md.labeled), m.vocab_dim, m.k);
    ds.name = md.name;
    if (!md.unlabeled.empty()) {
      DomainDataset extra = parse_sparse_file(resolve(md.unlabeled), m.vocab_dim, m.k);
      for (auto& s : extra.labeled) ds.unlabeled.push_back(std::move(s.x));
      for (auto& x : extra.unlabeled) ds.unlabeled.push_back(std::move(x));
    }
    if (!md.test.empty()) {
      DomainDataset t = parse_sparse_file(resolve(md.test), m.vocab_dim, m.k);
      if (!t.unlabeled.empty()) {
        throw ConfigError("manifest: test file for '" + md.name + "' contains unlabeled lines");
      }
      ds.test = std::move(t.labeled);
    }
    corpus.domains.push_back(std::move(ds));
  }
  corpus.validate();
  return corpus;
}

/// Writes one file per pool plus `manifest.txt`; returns the manifest path.
inline std::filesystem::path write_corpus(const MultiDomainCorpus& corpus,
                                          const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  auto open = [&](const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write '" + p.string() + "'");
    return out;
  };
  const auto manifest_path = dir / "manifest.txt";
  auto mf = open(manifest_path);
  mf << "# multi-domain corpus manifest\n";
  mf << "vocab_dim = " << corpus.vocab_dim << '\n';
  mf << "k = " << corpus.k << '\n';
  for (const auto& d : corpus.domains) {
    {
      auto out = open(dir / (d.name + ".labeled.txt"));
      for (const auto& s : d.labeled) write_sparse_line(out, s.x, s.label);
    }
    mf << "domain." << d.name << ".labeled = " << d.name << ".labeled.txt\n";
    if (!d.unlabeled.empty()) {
      auto out = open(dir / (d.name + ".unlabeled.txt"));
      for (const auto& x : d.unlabeled) write_sparse_line(out, x, std::nullopt);
      mf << "domain." << d.name << ".unlabeled = " << d.name << ".unlabeled.txt\n";
    }
    if (!d.test.empty()) {
      auto out = open(dir / (d.name + ".test.txt"));
      for (const auto& s : d.test) write_sparse_line(out, s.x, s.label);
      mf << "domain." << d.name << ".test = " << d.name << ".test.txt\n";
    }
  }
  for (const auto& [k, v] : corpus.metadata) mf << "meta." << k << " = " << v << '\n';
  if (!mf) throw IoError("write failed for '" + manifest_path.string() + "'");
  return manifest_path;
}

// ---------------------------------------------------------------------------
// k-fold

struct FoldSplit {
  DomainDataset train;
  DomainDataset test;
};

/// Partitions the labeled pool into `folds` near-equal test folds. Unlabeled
/// samples always stay on the train side.
inline std::vector<FoldSplit> kfold_split(const DomainDataset& ds, std::size_t folds,
                                          std::uint64_t seed) {
  if (folds < 2) throw ConfigError("kfold_split: folds must be >= 2");
  if (ds.l() < folds) {
    throw ConfigError("kfold_split: " + std::to_string(ds.l()) + " labeled samples in '" +
                      ds.name + "' for " + std::to_string(folds) + " folds");
  }
  std::vector<std::size_t> order(ds.l());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng(seed).child("kfold");
  rng.shuffle(order);

  std::vector<std::size_t> fold_of(ds.l());
  const std::size_t base = ds.l() / folds;
  const std::size_t extra = ds.l() % folds;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    for (std::size_t j = 0; j < len; ++j) fold_of[order[pos++]] = f;
  }

  std::vector<FoldSplit> out(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    out[f].train.name = ds.name;
    out[f].test.name = ds.name;
    out[f].train.unlabeled = ds.unlabeled;
    for (std::size_t i = 0; i < ds.l(); ++i) {
      (fold_of[i] == f ? out[f].test.labeled : out[f].train.labeled).push_back(ds.labeled[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Minibatch sampling

/// Indices of one domain's batches. `labeled` indexes L_i; `unlabeled`
/// indexes the pool L_i ∪ U_i (see DomainDataset::pooled).
struct DomainBatch {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
};

struct MiniBatchPair {
  std::vector<DomainBatch> domains;
};

namespace detail {

/// Draws batches without replacement, reshuffling when fewer than a full
/// batch remain.
class PoolCycler {
 public:
  PoolCycler() = default;
  PoolCycler(std::size_t pool, std::size_t batch, Rng rng)
      : order_(pool), batch_(std::min(batch, pool)), rng_(rng) {
    for (std::size_t i = 0; i < pool; ++i) order_[i] = i;
    cursor_ = pool;  // forces a shuffle on first draw
  }

  bool empty() const noexcept { return order_.empty(); }

  void draw(std::vector<std::size_t>& out) {
    out.clear();
    if (order_.empty()) return;
    if (order_.size() - cursor_ < batch_) {
      rng_.shuffle(order_);
      cursor_ = 0;
    }
    out.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
    cursor_ += batch_;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_ = 0;
  std::size_t cursor_ = 0;
  Rng rng_{0};
};

}  // namespace detail

/// Per-iteration source of one labeled and one unlabeled batch per domain. An
/// epoch is floor(l_max / batch) iterations, so the largest labeled pool is
/// visited without repeats; smaller pools cycle with reshuffle.
class MinibatchSampler {
 public:
  /// `labels_hidden`, when set, names a domain whose labels are withheld: it
  /// gets no labeled batches and its labeled samples only feed its unlabeled
  /// stream.
  MinibatchSampler(const MultiDomainCorpus& corpus, std::size_t batch_size, Rng rng,
                   std::optional<std::size_t> labels_hidden = std::nullopt)
      : labels_hidden_(labels_hidden) {
    if (batch_size == 0) throw ConfigError("sampler: batch_size must be >= 1");
    std::size_t l_max = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& d = corpus.domains[i];
      const bool hidden = labels_hidden_ && *labels_hidden_ == i;
      if (!hidden && d.l() == 0) {
        throw ConfigError("sampler: domain '" + d.name + "' has no labeled samples");
      }
      if (d.n() == 0) throw ConfigError("sampler: domain '" + d.name + "' is empty");
      labeled_.emplace_back(hidden ? 0 : d.l(), batch_size, rng.child("labeled", i));
      unlabeled_.emplace_back(d.n(), batch_size, rng.child("unlabeled", i));
      if (!hidden) l_max = std::max(l_max, d.l());
    }
    iterations_ = std::max<std::size_t>(1, l_max / batch_size);
  }

  std::size_t iterations_per_epoch() const noexcept { return iterations_; }

  void next(MiniBatchPair& out) {
    out.domains.resize(labeled_.size());
    for (std::size_t i = 0; i < labeled_.size(); ++i) {
      labeled_[i].draw(out.domains[i].labeled);
      unlabeled_[i].draw(out.domains[i].unlabeled);
    }
  }

  MiniBatchPair next() {
    MiniBatchPair p;
    next(p);
    return p;
  }

 private:
  std::vector<detail::PoolCycler> labeled_;
  std::vector<detail::PoolCycler> unlabeled_;
  std::optional<std::size_t> labels_hidden_;
  std::size_t iterations_ = 1;
};

// ---------------------------------------------------------------------------
// Synthetic generator
//
// Vocabulary layout (in order): shared-signal block, specific-signal block,
// common background block, one private background block per domain. Each
// document of class y carries `shared_tokens` draws from the shared block,
// `specific_tokens` draws from the specific block and `background_tokens`
// draws from the background blocks. A signal token agrees with y with
// probability 1 - noise. Shared features keep their polarity in every domain;
// the flip set of the specific block reverses polarity in odd-indexed domains.

struct SynthConfig {
  std::size_t domains = 3;
  std::size_t vocab_dim = 200;
  std::size_t labeled = 500;
  std::size_t unlabeled = 500;
  std::size_t test = 500;
  std::size_t shared_tokens = 3;
  std::size_t specific_tokens = 3;
  std::size_t background_tokens = 12;
  /// Probability that a background token comes from the domain's private block.
  double private_background = 0.5;
  double flip_fraction = 0.3;
  double noise = 0.05;
  std::uint64_t seed = 1;
};

struct SynthLayout {
  std::size_t shared_begin = 0, shared_size = 0;
  std::size_t specific_begin = 0, specific_size = 0;
  std::size_t common_begin = 0, common_size = 0;
  std::size_t private_begin = 0, private_size = 0;
  std::size_t flips_per_half = 0;

  /// +1 if feature j (inside the specific block) signals class 1 in `domain`.
  int specific_polarity(std::size_t j, std::size_t domain) const {
    const std::size_t half = specific_size / 2;
    const bool positive = j < half;
    const std::size_t pos_in_half = positive ? j : j - half;
    const bool flipped = pos_in_half < flips_per_half && domain % 2 == 1;
    return (positive != flipped) ? 1 : -1;
  }
};

inline SynthLayout synth_layout(const SynthConfig& cfg) {
  if (cfg.domains == 0) throw ConfigError("synth: domains must be >= 1");
  if (cfg.noise < 0.0 || cfg.noise > 0.5) throw ConfigError("synth: noise must lie in [0, 0.5]");
  if (cfg.flip_fraction < 0.0 || cfg.flip_fraction > 1.0) {
    throw ConfigError("synth: flip_fraction must lie in [0, 1]");
  }
  if (cfg.private_background < 0.0 || cfg.private_background > 1.0) {
    throw ConfigError("synth: private_background must lie in [0, 1]");
  }
  SynthLayout lay;
  const std::size_t block = cfg.vocab_dim / 5;
  lay.shared_size = block - block % 2;
  lay.specific_size = block - block % 2;
  lay.common_size = block;
  lay.private_size = (cfg.vocab_dim - 3 * block) / cfg.domains;
  if (lay.shared_size < 2 || lay.private_size < 1) {
    throw ConfigError("synth: vocab_dim " + std::to_string(cfg.vocab_dim) + " too small for " +
                      std::to_string(cfg.domains) + " domains");
  }
  lay.shared_begin = 0;
  lay.specific_begin = block;
  lay.common_begin = 2 * block;
  lay.private_begin = 3 * block;
  lay.flips_per_half = static_cast<std::size_t>(
      std::llround(cfg.flip_fraction * static_cast<double>(lay.specific_size / 2)));
  return lay;
}

/// Accuracy of the Bayes rule (per-domain majority vote over signal-token
/// polarities) for the generator: P(Bin(T, 1 - noise) > T/2) + P(= T/2)/2.
inline double synth_bayes_accuracy(const SynthConfig& cfg) {
  const std::size_t t = cfg.shared_tokens + cfg.specific_tokens;
  if (t == 0) return 0.5;
  const double p = 1.0 - cfg.noise;
  double acc = 0.0;
  for (std::size_t c = 0; c <= t; ++c) {
    const double logc = std::lgamma(static_cast<double>(t) + 1.0) -
                        std::lgamma(static_cast<double>(c) + 1.0) -
                        std::lgamma(static_cast<double>(t - c) + 1.0);
    double prob;
    if (p == 1.0) {
      prob = c == t ? 1.0 : 0.0;
    } else {
      prob = std::exp(logc + static_cast<double>(c) * std::log(p) +
                      static_cast<double>(t - c) * std::log1p(-p));
    }
    if (2 * c > t) acc += prob;
    if (2 * c == t) acc += 0.5 * prob;
  }
  return std::min(1.0, acc);
}

inline LabeledSample synth_sample(const SynthConfig& cfg, const SynthLayout& lay,
                                  std::size_t domain, Rng& rng) {
  const std::size_t y = rng.bernoulli(0.5) ? 1 : 0;
  std::map<std::uint32_t, double> counts;
  auto add = [&](std::size_t idx) { counts[static_cast<std::uint32_t>(idx)] += 1.0; };
  auto polarity = [&]() {
    const bool agree = !rng.bernoulli(cfg.noise);
    return (y == 1) == agree ? 1 : -1;
  };
  const std::size_t half_shared = lay.shared_size / 2;
  for (std::size_t t = 0; t < cfg.shared_tokens; ++t) {
    const int pol = polarity();
    const std::size_t j = rng.below(half_shared);
    add(lay.shared_begin + (pol > 0 ? j : half_shared + j));
  }
  const std::size_t half_spec = lay.specific_size / 2;
  for (std::size_t t = 0; t < cfg.specific_tokens; ++t) {
    const int pol = polarity();
    // Both polarity classes of the specific block hold exactly half_spec
    // features in every domain; pick the r-th feature with the wanted sign.
    std::size_t r = rng.below(half_spec);
    for (std::size_t j = 0; j < lay.specific_size; ++j) {
      if (lay.specific_polarity(j, domain) == pol) {
        if (r == 0) {
          add(lay.specific_begin + j);
          break;
        }
        --r;
      }
    }
  }
  for (std::size_t t = 0; t < cfg.background_tokens; ++t) {
    if (rng.bernoulli(cfg.private_background)) {
      add(lay.private_begin + domain * lay.private_size + rng.below(lay.private_size));
    } else {
      add(lay.common_begin + rng.below(lay.common_size));
    }
  }
  std::vector<SparseEntry> entries;
  entries.reserve(counts.size());
  for (const auto& [idx, c] : counts) entries.push_back({idx, c});
  return {SparseVector(cfg.vocab_dim, std::move(entries)), y};
}

inline std::string synth_domain_name(std::size_t i) { return "d" + std::to_string(i); }

/// Corpus with per-domain labeled, unlabeled and held-out test pools.
inline MultiDomainCorpus synth_generate(const SynthConfig& cfg) {
  const SynthLayout lay = synth_layout(cfg);
  MultiDomainCorpus corpus;
  corpus.vocab_dim = cfg.vocab_dim;
  corpus.k = 2;
  const Rng root(cfg.seed);
  for (std::size_t i = 0; i < cfg.domains; ++i) {
    DomainDataset d;
    d.name = synth_domain_name(i);
    Rng rl = root.child("labeled", i);
    Rng ru = root.child("unlabeled", i);
    Rng rt = root.child("test", i);
    for (std::size_t s = 0; s < cfg.labeled; ++s) d.labeled.push_back(synth_sample(cfg, lay, i, rl));
    for (std::size_t s = 0; s < cfg.unlabeled; ++s) {
      d.unlabeled.push_back(synth_sample(cfg, lay, i, ru).x);
    }
    for (std::size_t s = 0; s < cfg.test; ++s) d.test.push_back(synth_sample(cfg, lay, i, rt));
    corpus.domains.push_back(std::move(d));
  }
  auto meta = [&](const std::string& k, const std::string& v) { corpus.metadata.emplace_back(k, v); };
  meta("generator", "synthetic-polarity-flip");
  meta("seed", std::to_string(cfg.seed));
  meta("shared_tokens", std::to_string(cfg.shared_tokens));
  meta("specific_tokens", std::to_string(cfg.specific_tokens));
  meta("background_tokens", std::to_string(cfg.background_tokens));
  meta("private_background", format_double(cfg.private_background));
  meta("flip_fraction", format_double(cfg.flip_fraction));
  meta("noise", format_double(cfg.noise));
  meta("bayes_accuracy", format_double(synth_bayes_accuracy(cfg)));
  return corpus;
}

}  // namespace mdat
