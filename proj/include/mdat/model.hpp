#pragma once

// Shared-private architecture: a shared extractor, one private extractor per
// domain, and two classifiers (main and auxiliary) reading the concatenation
// [shared, private]. Forward and backward passes are written out per layer;
// all parameters live in one flat array.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mdat/errors.hpp"
#include "mdat/numkernel.hpp"

namespace mdat {

struct ModelSpec {
  std::size_t input_dim = 5000;
  std::size_t domains = 4;
  std::size_t classes = 2;
  std::vector<std::size_t> shared_hidden{1000, 500};
  std::size_t shared_out = 128;
  std::vector<std::size_t> specific_hidden{1000, 500};
  std::size_t specific_out = 64;
  /// Empty means one hidden layer as wide as the classifier input.
  std::vector<std::size_t> classifier_hidden;
  double keep_prob = 0.6;

  std::size_t feature_dim() const noexcept { return shared_out + specific_out; }

  std::vector<std::size_t> classifier_hidden_dims() const {
    return classifier_hidden.empty() ? std::vector<std::size_t>{feature_dim()}
                                     : classifier_hidden;
  }

  void validate() const {
    if (input_dim == 0 || domains == 0 || classes < 2 || shared_out == 0 || specific_out == 0) {
      throw ConfigError("model: dimensions must be positive, classes >= 2");
    }
    for (auto h : shared_hidden) {
      if (h == 0) throw ConfigError("model: zero-width shared layer");
    }
    for (auto h : specific_hidden) {
      if (h == 0) throw ConfigError("model: zero-width specific layer");
    }
    for (auto h : classifier_hidden) {
      if (h == 0) throw ConfigError("model: zero-width classifier layer");
    }
    if (!(keep_prob > 0.0) || keep_prob > 1.0) throw ConfigError("model: keep_prob must lie in (0, 1]");
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Position of one affine layer inside the flat parameter array.
struct LayerSlot {
  std::size_t weight = 0;  // rows x cols, row-major
  std::size_t bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;

  friend bool operator==(const LayerSlot&, const LayerSlot&) = default;
};

/// An MLP with rectifier hidden layers and a linear output layer.
struct MlpLayout {
  std::vector<LayerSlot> layers;
  std::size_t offset = 0;
  std::size_t size = 0;

  std::size_t input_dim() const { return layers.front().in; }
  std::size_t output_dim() const { return layers.back().out; }

  friend bool operator==(const MlpLayout&, const MlpLayout&) = default;
};

enum class Part { Shared, Specific, Main, Aux };

class MdatModel {
 public:
  MdatModel() = default;
  explicit MdatModel(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    std::size_t offset = 0;
    auto build = [&](std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
      MlpLayout lay;
      lay.offset = offset;
      std::size_t prev = in;
      auto add = [&](std::size_t width) {
        LayerSlot s;
        s.in = prev;
        s.out = width;
        s.weight = offset;
        offset += width * prev;
        s.bias = offset;
        offset += width;
        lay.layers.push_back(s);
        prev = width;
      };
      for (auto h : hidden) add(h);
      add(out);
      lay.size = offset - lay.offset;
      return lay;
    };
    components_.push_back(build(spec_.input_dim, spec_.shared_hidden, spec_.shared_out));
    for (std::size_t i = 0; i < spec_.domains; ++i) {
      components_.push_back(build(spec_.input_dim, spec_.specific_hidden, spec_.specific_out));
    }
    const auto clf_hidden = spec_.classifier_hidden_dims();
    components_.push_back(build(spec_.feature_dim(), clf_hidden, spec_.classes));
    components_.push_back(build(spec_.feature_dim(), clf_hidden, spec_.classes));
    params_.assign(offset, 0.0);
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t domains() const noexcept { return spec_.domains; }
  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  /// Component order: shared, specific_0..specific_{M-1}, main, aux.
  std::size_t component_count() const noexcept { return components_.size(); }
  const MlpLayout& component(std::size_t c) const { return components_.at(c); }

  std::size_t component_index(Part part, std::size_t domain = 0) const {
    switch (part) {
      case Part::Shared: return 0;
      case Part::Specific:
        if (domain >= spec_.domains) throw RangeError("model: domain index out of range");
        return 1 + domain;
      case Part::Main: return 1 + spec_.domains;
      case Part::Aux: return 2 + spec_.domains;
    }
    return 0;
  }

  const MlpLayout& layout(Part part, std::size_t domain = 0) const {
    return components_[component_index(part, domain)];
  }

  std::span<double> component_params(std::size_t c) {
    return std::span<double>(params_).subspan(components_[c].offset, components_[c].size);
  }
  std::span<const double> component_params(std::size_t c) const {
    return std::span<const double>(params_).subspan(components_[c].offset, components_[c].size);
  }

  friend bool operator==(const MdatModel&, const MdatModel&) = default;

 private:
  ModelSpec spec_;
  std::vector<MlpLayout> components_;
  std::vector<double> params_;
};

// ---------------------------------------------------------------------------
// Forward

enum class Mode {
  Eval,         // no dropout
  Train,        // fresh inverted-dropout masks from the rng
  TrainFrozen,  // reuse the masks already stored in the trace
};

struct LayerTrace {
  Vector pre;
  Vector mask;  // empty in eval mode
  Vector out;   // hidden: relu(pre) * mask; output layer: pre
};

struct MlpTrace {
  std::vector<LayerTrace> layers;

  std::span<const double> output() const { return layers.back().out; }
};

/// Everything one sample's forward pass needs for an exact backward pass.
struct ForwardTrace {
  std::size_t domain = 0;
  bool msuda = false;
  Mode mode = Mode::Eval;
  SparseVector input;
  MlpTrace shared;
  MlpTrace specific;
  Vector features;  // [shared, specific]
  MlpTrace main;
  MlpTrace aux;

  std::span<const double> logits_main() const { return main.output(); }
  std::span<const double> logits_aux() const { return aux.output(); }
};

namespace detail {

template <class Input>
void mlp_forward(std::span<const double> params, const MlpLayout& lay, const Input& x, Mode mode,
                 Rng* rng, double keep_prob, MlpTrace& tr) {
  tr.layers.resize(lay.layers.size());
  for (std::size_t l = 0; l < lay.layers.size(); ++l) {
    const LayerSlot& s = lay.layers[l];
    LayerTrace& lt = tr.layers[l];
    lt.pre.resize(s.out);
    const auto w = params.subspan(s.weight, s.out * s.in);
    const auto b = params.subspan(s.bias, s.out);
    if (l == 0) {
      affine_forward(w, s.out, s.in, b, x, lt.pre);
    } else {
      affine_forward(w, s.out, s.in, b, tr.layers[l - 1].out, lt.pre);
    }
    lt.out.resize(s.out);
    const bool last = l + 1 == lay.layers.size();
    if (last) {
      std::copy(lt.pre.begin(), lt.pre.end(), lt.out.begin());
      lt.mask.clear();
      continue;
    }
    if (mode == Mode::Train) {
      lt.mask.resize(s.out);
      bernoulli_mask(*rng, keep_prob, lt.mask);
    } else if (mode == Mode::TrainFrozen) {
      if (lt.mask.size() != s.out) throw UsageError("forward: frozen trace has no dropout mask");
    } else {
      lt.mask.clear();
    }
    for (std::size_t r = 0; r < s.out; ++r) {
      const double a = lt.pre[r] > 0.0 ? lt.pre[r] : 0.0;
      lt.out[r] = lt.mask.empty() ? a : a * lt.mask[r];
    }
  }
}

/// Reverse pass through one MLP. Parameter gradients are accumulated into
/// `grad` scaled by `scale` (skipped when zero); `dinput` receives dL/dx when
/// non-null (dense inputs only).
template <class Input>
void mlp_backward(std::span<const double> params, const MlpLayout& lay, const Input& x,
                  const MlpTrace& tr, std::span<const double> dout, double scale,
                  std::span<double> grad, Vector* dinput, bool corrupt_relu, Vector& delta,
                  Vector& below) {
  delta.assign(dout.begin(), dout.end());
  for (std::size_t li = lay.layers.size(); li-- > 0;) {
    const LayerSlot& s = lay.layers[li];
    const auto w = params.subspan(s.weight, s.out * s.in);
    if (scale != 0.0) {
      double* gw = grad.data() + s.weight;
      double* gb = grad.data() + s.bias;
      if (li == 0) {
        if constexpr (std::is_same_v<Input, SparseVector>) {
          for (const auto& e : x.entries()) {
            for (std::size_t r = 0; r < s.out; ++r) {
              gw[r * s.in + e.index] += scale * delta[r] * e.value;
            }
          }
        } else {
          for (std::size_t r = 0; r < s.out; ++r) {
            const double d = scale * delta[r];
            if (d == 0.0) continue;
            for (std::size_t c = 0; c < s.in; ++c) gw[r * s.in + c] += d * x[c];
          }
        }
      } else {
        const auto& a = tr.layers[li - 1].out;
        for (std::size_t r = 0; r < s.out; ++r) {
          const double d = scale * delta[r];
          if (d == 0.0) continue;
          for (std::size_t c = 0; c < s.in; ++c) gw[r * s.in + c] += d * a[c];
        }
      }
      for (std::size_t r = 0; r < s.out; ++r) gb[r] += scale * delta[r];
    }
    if (li == 0 && dinput == nullptr) break;
    below.assign(s.in, 0.0);
    for (std::size_t r = 0; r < s.out; ++r) {
      const double d = delta[r];
      if (d == 0.0) continue;
      const double* wr = w.data() + r * s.in;
      for (std::size_t c = 0; c < s.in; ++c) below[c] += wr[c] * d;
    }
    if (li == 0) {
      dinput->assign(below.begin(), below.end());
      break;
    }
    const LayerTrace& lt = tr.layers[li - 1];
    for (std::size_t c = 0; c < s.in; ++c) {
      const double gate = (corrupt_relu || lt.pre[c] > 0.0) ? 1.0 : 0.0;
      below[c] *= lt.mask.empty() ? gate : gate * lt.mask[c];
    }
    delta.swap(below);
  }
}

}  // namespace detail

/// Forward pass for a sample of domain `domain`. With `msuda` set the private
/// half of the concatenation is the zero vector and no private extractor runs.
inline void forward(const MdatModel& model, std::size_t domain, const SparseVector& x, Mode mode,
                    Rng* rng, ForwardTrace& tr, bool msuda = false) {
  const ModelSpec& spec = model.spec();
  if (domain >= spec.domains && !msuda) throw RangeError("forward: domain index out of range");
  if (x.dim() != spec.input_dim) {
    throw ShapeError("forward: input dim " + std::to_string(x.dim()) + ", model expects " +
                     std::to_string(spec.input_dim));
  }
  if (mode == Mode::Train && rng == nullptr) throw UsageError("forward: train mode needs an rng");
  tr.domain = domain;
  tr.msuda = msuda;
  tr.mode = mode;
  tr.input = x;
  const auto p = model.params();
  detail::mlp_forward(p, model.layout(Part::Shared), x, mode, rng, spec.keep_prob, tr.shared);
  tr.features.assign(spec.feature_dim(), 0.0);
  std::copy(tr.shared.output().begin(), tr.shared.output().end(), tr.features.begin());
  if (!msuda) {
    detail::mlp_forward(p, model.layout(Part::Specific, domain), x, mode, rng, spec.keep_prob,
                        tr.specific);
    std::copy(tr.specific.output().begin(), tr.specific.output().end(),
              tr.features.begin() + static_cast<std::ptrdiff_t>(spec.shared_out));
  } else {
    tr.specific.layers.clear();
  }
  const std::span<const double> feats(tr.features);
  detail::mlp_forward(p, model.layout(Part::Main), feats, mode, rng, spec.keep_prob, tr.main);
  detail::mlp_forward(p, model.layout(Part::Aux), feats, mode, rng, spec.keep_prob, tr.aux);
}

inline ForwardTrace forward(const MdatModel& model, std::size_t domain, const SparseVector& x,
                            Mode mode, Rng* rng = nullptr) {
  ForwardTrace tr;
  forward(model, domain, x, mode, rng, tr, false);
  return tr;
}

/// Multi-source protocol: shared features only, private half zeroed.
inline ForwardTrace forward_msuda(const MdatModel& model, const SparseVector& x, Mode mode,
                                  Rng* rng = nullptr) {
  ForwardTrace tr;
  forward(model, 0, x, mode, rng, tr, true);
  return tr;
}

/// Eval-mode shared features F_s(x).
inline Vector shared_features(const MdatModel& model, const SparseVector& x) {
  MlpTrace tr;
  detail::mlp_forward(model.params(), model.layout(Part::Shared), x, Mode::Eval, nullptr,
                      model.spec().keep_prob, tr);
  const auto out = tr.output();
  return Vector(out.begin(), out.end());
}

// ---------------------------------------------------------------------------
// Backward

/// Per-component gradient scale: 0 leaves the component's gradient untouched,
/// +1 accumulates dL/dθ, -1 accumulates -dL/dθ (ascent under a descent
/// optimizer). Gradients still flow *through* a zero-scaled classifier into
/// the extractors.
struct Routing {
  double shared = 0.0;
  double specific = 0.0;
  double main = 0.0;
  double aux = 0.0;
  /// Test hook: treat every rectifier as the identity in the reverse pass.
  bool corrupt_relu = false;

  static Routing all(double s = 1.0) { return {s, s, s, s, false}; }
  static Routing extractors_and_main(double s = 1.0) { return {s, s, s, 0.0, false}; }
  static Routing extractors(double s = 1.0) { return {s, s, 0.0, 0.0, false}; }
  static Routing classifiers(double s = 1.0) { return {0.0, 0.0, s, s, false}; }
  static Routing aux_only(double s = 1.0) { return {0.0, 0.0, 0.0, s, false}; }
};

/// Scratch buffers reused across backward calls.
struct BackwardWorkspace {
  Vector dfeat_main, dfeat_aux, dfeat, dshared, dspecific, delta, below;
};

/// Accumulates routed parameter gradients of a loss whose logit gradients are
/// `dmain` and `daux` (either may be empty = zero) into `grad`.
inline void backward(const MdatModel& model, const ForwardTrace& tr,
                     std::span<const double> dmain, std::span<const double> daux,
                     const Routing& routing, std::span<double> grad, BackwardWorkspace& ws) {
  const ModelSpec& spec = model.spec();
  if (grad.size() != model.parameter_count()) throw ShapeError("backward: gradient size mismatch");
  if ((!dmain.empty() && dmain.size() != spec.classes) ||
      (!daux.empty() && daux.size() != spec.classes)) {
    throw ShapeError("backward: logit-gradient size mismatch");
  }
  if (tr.main.layers.size() != model.layout(Part::Main).layers.size()) {
    throw ShapeError("backward: trace does not match the model");
  }
  const auto p = model.params();
  const bool need_features = routing.shared != 0.0 || (routing.specific != 0.0 && !tr.msuda);
  const std::span<const double> feats(tr.features);
  ws.dfeat.assign(spec.feature_dim(), 0.0);
  if (!dmain.empty()) {
    detail::mlp_backward(p, model.layout(Part::Main), feats, tr.main, dmain, routing.main, grad,
                         need_features ? &ws.dfeat_main : nullptr, routing.corrupt_relu, ws.delta,
                         ws.below);
    if (need_features) {
      for (std::size_t c = 0; c < ws.dfeat.size(); ++c) ws.dfeat[c] += ws.dfeat_main[c];
    }
  }
  if (!daux.empty()) {
    detail::mlp_backward(p, model.layout(Part::Aux), feats, tr.aux, daux, routing.aux, grad,
                         need_features ? &ws.dfeat_aux : nullptr, routing.corrupt_relu, ws.delta,
                         ws.below);
    if (need_features) {
      for (std::size_t c = 0; c < ws.dfeat.size(); ++c) ws.dfeat[c] += ws.dfeat_aux[c];
    }
  }
  if (!need_features) return;
  const std::span<const double> dfs(ws.dfeat.data(), spec.shared_out);
  if (routing.shared != 0.0) {
    detail::mlp_backward(p, model.layout(Part::Shared), tr.input, tr.shared, dfs, routing.shared,
                         grad, nullptr, routing.corrupt_relu, ws.delta, ws.below);
  }
  if (routing.specific != 0.0 && !tr.msuda) {
    const std::span<const double> dfp(ws.dfeat.data() + spec.shared_out, spec.specific_out);
    detail::mlp_backward(p, model.layout(Part::Specific, tr.domain), tr.input, tr.specific, dfp,
                         routing.specific, grad, nullptr, routing.corrupt_relu, ws.delta, ws.below);
  }
}

inline void backward(const MdatModel& model, const ForwardTrace& tr,
                     std::span<const double> dmain, std::span<const double> daux,
                     const Routing& routing, std::span<double> grad) {
  BackwardWorkspace ws;
  backward(model, tr, dmain, daux, routing, grad, ws);
}

// ---------------------------------------------------------------------------
// Initialization

/// Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)), so the weight
/// variance is 2 / (fan_in + fan_out); biases zero. Each component draws from
/// its own child stream.
inline void init_params(MdatModel& model, const Rng& rng) {
  auto params = model.params();
  for (std::size_t c = 0; c < model.component_count(); ++c) {
    Rng r = rng.child("component", c);
    for (const LayerSlot& s : model.component(c).layers) {
      const double a = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
      for (std::size_t i = 0; i < s.out * s.in; ++i) params[s.weight + i] = r.uniform(-a, a);
      std::fill_n(params.begin() + static_cast<std::ptrdiff_t>(s.bias), s.out, 0.0);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: little-endian binary.
//   magic "MDATCKPT", u32 version, u64 seed, u32 flags (bit 0: dropout after
//   activation), u64 input_dim, u64 domains, u64 classes, dims lists as
//   u64 count + u64 values (shared hidden, specific hidden, classifier hidden),
//   u64 shared_out, u64 specific_out, f64 keep_prob, u64 parameter count,
//   f64 parameters.

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'M', 'D', 'A', 'T', 'C', 'K', 'P', 'T'};

struct Checkpoint {
  MdatModel model;
  std::uint64_t seed = 0;
};

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

template <class U>
U get_le(std::istream& is) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw IoError("checkpoint: truncated file");
    v |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

inline void put_dims(std::ostream& os, const std::vector<std::size_t>& dims) {
  put_le<std::uint64_t>(os, dims.size());
  for (auto d : dims) put_le<std::uint64_t>(os, d);
}

inline std::vector<std::size_t> get_dims(std::istream& is) {
  const auto n = get_le<std::uint64_t>(is);
  if (n > 64) throw IoError("checkpoint: implausible layer count");
  std::vector<std::size_t> dims(n);
  for (auto& d : dims) d = get_le<std::uint64_t>(is);
  return dims;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const MdatModel& model, std::uint64_t seed) {
  const ModelSpec& s = model.spec();
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  detail::put_le<std::uint64_t>(os, seed);
  detail::put_le<std::uint32_t>(os, 1U);
  detail::put_le<std::uint64_t>(os, s.input_dim);
  detail::put_le<std::uint64_t>(os, s.domains);
  detail::put_le<std::uint64_t>(os, s.classes);
  detail::put_dims(os, s.shared_hidden);
  detail::put_dims(os, s.specific_hidden);
  detail::put_dims(os, s.classifier_hidden);
  detail::put_le<std::uint64_t>(os, s.shared_out);
  detail::put_le<std::uint64_t>(os, s.specific_out);
  detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(s.keep_prob));
  detail::put_le<std::uint64_t>(os, model.parameter_count());
  for (double v : model.params()) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(magic, magic + 8, kCheckpointMagic)) {
    throw IoError("checkpoint: bad magic");
  }
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.seed = detail::get_le<std::uint64_t>(is);
  const auto flags = detail::get_le<std::uint32_t>(is);
  if ((flags & 1U) == 0) throw IoError("checkpoint: unsupported dropout placement");
  ModelSpec s;
  s.input_dim = detail::get_le<std::uint64_t>(is);
  s.domains = detail::get_le<std::uint64_t>(is);
  s.classes = detail::get_le<std::uint64_t>(is);
  s.shared_hidden = detail::get_dims(is);
  s.specific_hidden = detail::get_dims(is);
  s.classifier_hidden = detail::get_dims(is);
  s.shared_out = detail::get_le<std::uint64_t>(is);
  s.specific_out = detail::get_le<std::uint64_t>(is);
  s.keep_prob = std::bit_cast<double>(detail::get_le<std::uint64_t>(is));
  ck.model = MdatModel(s);
  const auto count = detail::get_le<std::uint64_t>(is);
  if (count != ck.model.parameter_count()) {
    throw IoError("checkpoint: parameter count " + std::to_string(count) +
                  " does not match the header dims");
  }
  for (double& v : ck.model.params()) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(is));
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const MdatModel& model,
                            std::uint64_t seed) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint '" + path.string() + "'");
  write_checkpoint(os, model, seed);
  if (!os) throw IoError("write failed for checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(is);
}

}  // namespace mdat
