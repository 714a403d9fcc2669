#pragma once

// Run configuration files: `key = value` lines, `#` comments. Every key is
// also a command-line flag of the same name; flags are applied after the file.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "mdat/dataio.hpp"
#include "mdat/errors.hpp"
#include "mdat/format.hpp"
#include "mdat/train.hpp"

namespace mdat {

struct RunConfig {
  TrainConfig train;
  std::string manifest;
  std::string out_dir = "out";
  std::size_t folds = 5;
};

namespace detail {

inline double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config: '" + std::string(key) + "' expects a number, got '" +
                      std::string(v) + "'");
  }
  return out;
}

inline std::uint64_t parse_count(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config: '" + std::string(key) +
                      "' expects a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

inline bool parse_flag(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: '" + std::string(key) + "' expects true or false, got '" +
                    std::string(v) + "'");
}

/// Comma-separated widths; "none" or an empty value is the empty list.
inline std::vector<std::size_t> parse_dims(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  v = trim(v);
  if (v.empty() || v == "none") return out;
  while (true) {
    const auto comma = v.find(',');
    const auto tok = trim(v.substr(0, comma));
    const auto d = parse_count(key, tok);
    if (d == 0) throw ConfigError("config: '" + std::string(key) + "' has a zero width");
    out.push_back(d);
    if (comma == std::string_view::npos) break;
    v = v.substr(comma + 1);
  }
  return out;
}

inline std::string dims_text(const std::vector<std::size_t>& dims) {
  if (dims.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(dims[i]);
  }
  return s;
}

}  // namespace detail

inline const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = {
      "manifest",        "out_dir",       "folds",          "variant",      "alpha",
      "beta",            "lr",            "batch",          "epochs",       "seed",
      "eval_every",      "msuda",         "dev_fraction",   "diagnostics",  "diag_every",
      "probe_budget",    "probe_samples", "probe_hidden",   "probe_lr",     "probe_rho",
      "shared_hidden",   "shared_out",    "specific_hidden", "specific_out", "classifier_hidden",
      "keep_prob"};
  return keys;
}

/// Sets one key; unknown keys and malformed values raise ConfigError.
inline void apply_setting(RunConfig& rc, std::string_view key, std::string_view value) {
  using namespace detail;
  TrainConfig& t = rc.train;
  ModelSpec& m = t.model;
  if (key == "manifest") rc.manifest = std::string(value);
  else if (key == "out_dir") rc.out_dir = std::string(value);
  else if (key == "folds") rc.folds = parse_count(key, value);
  else if (key == "variant") t.variant = parse_variant(value);
  else if (key == "alpha") t.alpha = parse_real(key, value);
  else if (key == "beta") t.beta = parse_real(key, value);
  else if (key == "lr") t.lr = parse_real(key, value);
  else if (key == "batch") t.batch = parse_count(key, value);
  else if (key == "epochs") t.epochs = parse_count(key, value);
  else if (key == "seed") t.seed = parse_count(key, value);
  else if (key == "eval_every") t.eval_every = parse_count(key, value);
  else if (key == "msuda") {
    if (value.empty() || value == "none") t.msuda_target.reset();
    else t.msuda_target = std::string(value);
  }
  else if (key == "dev_fraction") t.dev_fraction = parse_real(key, value);
  else if (key == "diagnostics") t.diagnostics = parse_flag(key, value);
  else if (key == "diag_every") t.diag_every = parse_count(key, value);
  else if (key == "probe_budget") t.probe_budget = parse_count(key, value);
  else if (key == "probe_samples") t.probe_samples = parse_count(key, value);
  else if (key == "probe_hidden") t.probe_hidden = parse_count(key, value);
  else if (key == "probe_lr") t.probe_lr = parse_real(key, value);
  else if (key == "probe_rho") t.probe_rho = parse_real(key, value);
  else if (key == "shared_hidden") m.shared_hidden = parse_dims(key, value);
  else if (key == "shared_out") m.shared_out = parse_count(key, value);
  else if (key == "specific_hidden") m.specific_hidden = parse_dims(key, value);
  else if (key == "specific_out") m.specific_out = parse_count(key, value);
  else if (key == "classifier_hidden") m.classifier_hidden = parse_dims(key, value);
  else if (key == "keep_prob") m.keep_prob = parse_real(key, value);
  else throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

inline void apply_config_stream(RunConfig& rc, std::istream& in) {
  for (const auto& [k, v] : parse_key_values(in)) apply_setting(rc, k, v);
}

/// Applies a config file on top of `rc`. Relative manifest paths in the file
/// are resolved against the file's directory.
inline void apply_config_file(RunConfig& rc, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  const std::string before = rc.manifest;
  try {
    apply_config_stream(rc, in);
  } catch (const ParseError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (rc.manifest != before && !rc.manifest.empty()) {
    std::filesystem::path p(rc.manifest);
    if (p.is_relative()) rc.manifest = (path.parent_path() / p).lexically_normal().string();
  }
}

/// Canonical text form; parses back to the same configuration.
inline void write_run_config(std::ostream& os, const RunConfig& rc) {
  const TrainConfig& t = rc.train;
  const ModelSpec& m = t.model;
  os << "manifest = " << rc.manifest << '\n'
     << "out_dir = " << rc.out_dir << '\n'
     << "folds = " << rc.folds << '\n'
     << "variant = " << to_string(t.variant) << '\n'
     << "alpha = " << format_roundtrip(t.alpha) << '\n'
     << "beta = " << format_roundtrip(t.beta) << '\n'
     << "lr = " << format_roundtrip(t.lr) << '\n'
     << "batch = " << t.batch << '\n'
     << "epochs = " << t.epochs << '\n'
     << "seed = " << t.seed << '\n'
     << "eval_every = " << t.eval_every << '\n'
     << "msuda = " << (t.msuda_target ? *t.msuda_target : std::string("none")) << '\n'
     << "dev_fraction = " << format_roundtrip(t.dev_fraction) << '\n'
     << "diagnostics = " << (t.diagnostics ? "true" : "false") << '\n'
     << "diag_every = " << t.diag_every << '\n'
     << "probe_budget = " << t.probe_budget << '\n'
     << "probe_samples = " << t.probe_samples << '\n'
     << "probe_hidden = " << t.probe_hidden << '\n'
     << "probe_lr = " << format_roundtrip(t.probe_lr) << '\n'
     << "probe_rho = " << format_roundtrip(t.probe_rho) << '\n'
     << "shared_hidden = " << detail::dims_text(m.shared_hidden) << '\n'
     << "shared_out = " << m.shared_out << '\n'
     << "specific_hidden = " << detail::dims_text(m.specific_hidden) << '\n'
     << "specific_out = " << m.specific_out << '\n'
     << "classifier_hidden = " << detail::dims_text(m.classifier_hidden) << '\n'
     << "keep_prob = " << format_roundtrip(m.keep_prob) << '\n';
}

}  // namespace mdat
