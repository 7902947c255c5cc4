#ifndef EKD_MODELS_HPP
#define EKD_MODELS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ekd/augment.hpp"
#include "ekd/data.hpp"
#include "ekd/energy.hpp"
#include "ekd/io.hpp"
#include "ekd/kdloss.hpp"
#include "ekd/numcore.hpp"
#include "ekd/rng.hpp"

namespace ekd {

/// Dense ReLU network producing logits. Parameters live in one flat buffer:
/// for each layer, W (out x in, row-major) followed by b (out).
class MlpModel {
public:
  MlpModel() = default;

  /// Zero-initialized parameters.
  explicit MlpModel(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    detail::require(dims_.size() >= 2, ErrorCode::invalid_argument,
                    "an MLP needs at least input and output dims");
    for (auto d : dims_)
      detail::require(d >= 1, ErrorCode::invalid_argument, "layer dims must be >= 1");
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      offsets_.push_back(total);
      total += dims_[l + 1] * dims_[l] + dims_[l + 1];
    }
    params_.assign(total, 0.0);
  }

  /// He-uniform weights U(-sqrt(6/in), sqrt(6/in)), zero biases.
  static MlpModel init(std::vector<std::size_t> dims, std::uint64_t seed) {
    MlpModel m(std::move(dims));
    Rng rng(seed);
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
      const double bound = std::sqrt(6.0 / static_cast<double>(m.in_dim(l)));
      for (auto &w : m.weights(l))
        w = rng.uniform(-bound, bound);
    }
    return m;
  }

  const std::vector<std::size_t> &dims() const noexcept { return dims_; }
  std::size_t layer_count() const noexcept { return dims_.size() - 1; }
  std::size_t in_dim(std::size_t l) const { return dims_[l]; }
  std::size_t out_dim(std::size_t l) const { return dims_[l + 1]; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t classes() const { return dims_.back(); }

  std::span<double> weights(std::size_t l) {
    return {params_.data() + offsets_[l], out_dim(l) * in_dim(l)};
  }
  std::span<const double> weights(std::size_t l) const {
    return {params_.data() + offsets_[l], out_dim(l) * in_dim(l)};
  }
  std::span<double> biases(std::size_t l) {
    return {params_.data() + offsets_[l] + out_dim(l) * in_dim(l), out_dim(l)};
  }
  std::span<const double> biases(std::size_t l) const {
    return {params_.data() + offsets_[l] + out_dim(l) * in_dim(l), out_dim(l)};
  }

  std::vector<double> &params() noexcept { return params_; }
  const std::vector<double> &params() const noexcept { return params_; }
  std::size_t offset(std::size_t l) const { return offsets_[l]; }

  std::uint64_t checksum() const {
    return io::fnv1a64_values(std::span<const double>(params_));
  }

  friend bool operator==(const MlpModel &a, const MlpModel &b) {
    return a.dims_ == b.dims_ && a.params_ == b.params_;
  }

private:
  std::vector<std::size_t> dims_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

/// Gradient buffer laid out like MlpModel::params().
using ParamGrad = std::vector<double>;

namespace detail {

/// Activations per layer (activations[0] is the input, the last is logits).
struct Trace {
  std::vector<Vector> activations;
};

template <typename T>
inline void forward_trace(const MlpModel &m, std::span<const T> x, Trace &tr) {
  require(x.size() == m.input_dim(), ErrorCode::shape_mismatch,
          "forward: feature length " + std::to_string(x.size()) +
              " does not match input dim " + std::to_string(m.input_dim()));
  tr.activations.resize(m.layer_count() + 1);
  tr.activations[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    const auto &in = tr.activations[l];
    auto &out = tr.activations[l + 1];
    const auto w = m.weights(l);
    const auto b = m.biases(l);
    const std::size_t n_in = m.in_dim(l);
    out.resize(m.out_dim(l));
    const bool hidden = l + 1 < m.layer_count();
    for (std::size_t o = 0; o < out.size(); ++o) {
      double acc = b[o];
      const double *row = w.data() + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i)
        acc += row[i] * in[i];
      out[o] = hidden ? std::max(acc, 0.0) : acc;
    }
  }
}

/// Adds d(upstream . logits)/d(params) into grad, given a forward trace.
inline void backward_trace(const MlpModel &m, const Trace &tr,
                           std::span<const double> upstream, ParamGrad &grad) {
  require(upstream.size() == m.classes(), ErrorCode::shape_mismatch,
          "backward: upstream gradient length does not match K");
  Vector delta(upstream.begin(), upstream.end());
  Vector prev;
  for (std::size_t l = m.layer_count(); l-- > 0;) {
    const auto &in = tr.activations[l];
    const std::size_t n_in = m.in_dim(l);
    const std::size_t n_out = m.out_dim(l);
    double *gw = grad.data() + m.offset(l);
    double *gb = gw + n_out * n_in;
    for (std::size_t o = 0; o < n_out; ++o) {
      const double d = delta[o];
      if (d == 0.0)
        continue;
      gb[o] += d;
      double *row = gw + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i)
        row[i] += d * in[i];
    }
    if (l == 0)
      break;
    const auto w = m.weights(l);
    prev.assign(n_in, 0.0);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double d = delta[o];
      if (d == 0.0)
        continue;
      const double *row = w.data() + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i)
        prev[i] += d * row[i];
    }
    // ReLU mask: hidden activation > 0.
    for (std::size_t i = 0; i < n_in; ++i)
      if (in[i] <= 0.0)
        prev[i] = 0.0;
    delta.swap(prev);
  }
}

} // namespace detail

template <typename T>
Vector forward(const MlpModel &m, std::span<const T> x) {
  detail::Trace tr;
  detail::forward_trace(m, x, tr);
  return std::move(tr.activations.back());
}

inline Vector forward(const MlpModel &m, const std::vector<double> &x) {
  return forward(m, std::span<const double>(x));
}

/// Exact reverse-mode gradient of (upstream . logits) w.r.t. every parameter.
template <typename T>
ParamGrad backward(const MlpModel &m, std::span<const T> x,
                   std::span<const double> upstream) {
  detail::Trace tr;
  detail::forward_trace(m, x, tr);
  ParamGrad g(m.params().size(), 0.0);
  detail::backward_trace(m, tr, upstream, g);
  return g;
}

/// N x K logits for every row of the dataset.
inline Matrix logits(const MlpModel &m, const Dataset &ds) {
  Matrix out(ds.size(), m.classes());
  detail::Trace tr;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    detail::forward_trace(m, ds.sample(i), tr);
    std::copy(tr.activations.back().begin(), tr.activations.back().end(),
              out.row(i).begin());
  }
  return out;
}

inline double accuracy(const Matrix &z, std::span<const std::uint16_t> labels) {
  detail::require(z.rows() == labels.size(), ErrorCode::shape_mismatch,
                  "accuracy: label count mismatch");
  if (labels.empty())
    return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (argmax(z.row(i)) == labels[i])
      ++correct;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

inline double accuracy(const MlpModel &m, const Dataset &ds) {
  return accuracy(logits(m, ds), ds.labels);
}

// ---- Optimization ---------------------------------------------------------

struct SgdConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// v <- momentum v + grad + weight_decay theta;  theta <- theta - lr v.
class Sgd {
public:
  Sgd(std::size_t n, SgdConfig cfg) : cfg_(cfg), velocity_(n, 0.0) {}

  void step(std::vector<double> &params, std::span<const double> grad) {
    detail::require(params.size() == velocity_.size() && grad.size() == params.size(),
                    ErrorCode::shape_mismatch, "sgd: size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity_[i] = cfg_.momentum * velocity_[i] + grad[i] + cfg_.weight_decay * params[i];
      params[i] -= cfg_.learning_rate * velocity_[i];
    }
  }

  const std::vector<double> &velocity() const noexcept { return velocity_; }

private:
  SgdConfig cfg_;
  std::vector<double> velocity_;
};

enum class AugTemperatureMode { base, inherit };

inline AugTemperatureMode parse_aug_temperature_mode(std::string_view s) {
  if (s == "base") return AugTemperatureMode::base;
  if (s == "inherit") return AugTemperatureMode::inherit;
  detail::fail(ErrorCode::parse, "unknown aug_temperature_mode '" + std::string(s) + "'");
}

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
  double alpha = 0.9;
  TemperaturePolicy policy;
  double r = 0.2;
  double t_e = 1.0;
  bool t_squared_scaling = true;
  AugTemperatureMode aug_temperature = AugTemperatureMode::base;

  void validate() const {
    detail::require(epochs >= 1, ErrorCode::invalid_argument, "epochs must be >= 1");
    detail::require(batch_size >= 1, ErrorCode::invalid_argument, "batch_size must be >= 1");
    detail::require(learning_rate > 0.0 && std::isfinite(learning_rate),
                    ErrorCode::invalid_argument, "learning_rate must be > 0");
    detail::require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::invalid_argument,
                    "alpha must be in [0, 1]");
    policy.validate();
  }

  SgdConfig sgd() const { return {learning_rate, momentum, weight_decay}; }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

using History = std::vector<EpochRecord>;

namespace detail {

/// Stream indices for the seeded random sources of a training run.
inline constexpr std::uint64_t kInitStream = 11;
inline constexpr std::uint64_t kShuffleStream = 12;

/// One optimization run over a fixed training set. `z_teacher` may be empty
/// when alpha == 0 (the distillation term is then skipped entirely).
inline History run_sgd(MlpModel &model, const AugmentedDataset &train,
                       const Matrix &z_teacher, std::span<const double> temperatures,
                       double alpha, bool t_squared, const TrainConfig &cfg,
                       const Dataset *test, const char *stage) {
  const std::size_t n = train.data.size();
  require(n > 0, ErrorCode::empty_input, "training set is empty");
  const std::size_t k = model.classes();
  require(train.data.dim == model.input_dim(), ErrorCode::shape_mismatch,
          "training features do not match model input dim");
  const bool distill = alpha > 0.0;
  if (distill)
    require(z_teacher.rows() == n && z_teacher.cols() == k, ErrorCode::shape_mismatch,
            "teacher logits do not match the training set");

  Sgd opt(model.params().size(), cfg.sgd());
  Rng shuffle = Rng::derive(cfg.seed, kShuffleStream);
  History history;
  Trace tr;
  std::vector<Trace> traces;
  ParamGrad grad(model.params().size());
  Dataset originals;
  originals.dim = train.data.dim;
  originals.classes = train.data.classes;
  originals.features.assign(train.data.features.begin(),
                            train.data.features.begin() +
                                static_cast<std::ptrdiff_t>(train.original_size * train.data.dim));
  originals.labels.assign(train.data.labels.begin(),
                          train.data.labels.begin() + static_cast<std::ptrdiff_t>(train.original_size));

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffle.permutation(n);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t bs = std::min(cfg.batch_size, n - start);
      Matrix zs(bs, k), zt(bs, k);
      std::vector<LabelMix> labels(bs);
      std::vector<double> temps(bs, 1.0);
      traces.resize(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        const std::size_t id = order[start + i];
        forward_trace(model, train.data.sample(id), traces[i]);
        std::copy(traces[i].activations.back().begin(),
                  traces[i].activations.back().end(), zs.row(i).begin());
        labels[i] = train.labels[id];
        if (distill) {
          std::copy(z_teacher.row(id).begin(), z_teacher.row(id).end(), zt.row(i).begin());
          temps[i] = temperatures[id];
        }
      }
      for (double v : zs.data())
        if (!std::isfinite(v))
          fail(ErrorCode::divergence, std::string(stage) + ": logits diverged at epoch " +
                                          std::to_string(epoch));
      const auto obj = total_objective(distill ? zt : zs, zs, labels, temps, alpha, t_squared);
      if (!std::isfinite(obj.loss))
        fail(ErrorCode::divergence, std::string(stage) + ": loss diverged at epoch " +
                                        std::to_string(epoch));
      loss_sum += obj.loss * static_cast<double>(bs);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = 0; i < bs; ++i)
        backward_trace(model, traces[i], obj.grad.row(i), grad);
      opt.step(model.params(), grad);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(n);
    if (!std::isfinite(rec.loss))
      fail(ErrorCode::divergence, std::string(stage) + ": loss diverged at epoch " +
                                      std::to_string(epoch));
    rec.train_accuracy = accuracy(model, originals);
    rec.test_accuracy = test ? accuracy(model, *test) : 0.0;
    history.push_back(rec);
  }
  return history;
}

inline std::vector<std::size_t> layer_dims(std::size_t input,
                                           std::span<const std::size_t> hidden,
                                           std::size_t classes) {
  std::vector<std::size_t> dims{input};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(classes);
  return dims;
}

} // namespace detail

struct TeacherResult {
  MlpModel model;
  Matrix logits; ///< N x K over the training set
  History history;
};

/// Cross-entropy SGD from a seeded He-uniform init. Returns the frozen
/// model and its logits over the whole training set.
inline TeacherResult pretrain_teacher(const Dataset &train,
                                      std::span<const std::size_t> hidden,
                                      const TrainConfig &cfg,
                                      const Dataset *test = nullptr) {
  cfg.validate();
  detail::require(!train.empty(), ErrorCode::empty_input, "training set is empty");
  TeacherResult out;
  out.model = MlpModel::init(detail::layer_dims(train.dim, hidden, train.classes),
                             Rng::derive(cfg.seed, detail::kInitStream).next_u64());
  const auto set = plain_training_set(train);
  out.history = detail::run_sgd(out.model, set, Matrix(), {}, 0.0, cfg.t_squared_scaling,
                                cfg, test, "pretrain");
  out.logits = logits(out.model, train);
  return out;
}

/// Per-row temperatures for a training set: manifest temperatures for the
/// originals; augmented rows get base_t or the lambda-weighted mean of their
/// sources' temperatures.
inline std::vector<double> training_temperatures(const AugmentedDataset &train,
                                                 const EnergyManifest &manifest,
                                                 const TrainConfig &cfg) {
  detail::require(manifest.n == train.original_size, ErrorCode::invalid_argument,
                  "manifest covers " + std::to_string(manifest.n) +
                      " samples but the dataset has " +
                      std::to_string(train.original_size));
  std::vector<double> temps(train.data.size());
  for (std::size_t i = 0; i < train.original_size; ++i) {
    const auto t = manifest.temperature_of(i);
    detail::require(t.has_value(), ErrorCode::invalid_argument,
                    "manifest has no row for sample " + std::to_string(i));
    temps[i] = *t;
  }
  for (std::size_t j = 0; j < train.provenance.size(); ++j) {
    const auto &p = train.provenance[j];
    double t = cfg.policy.base_t;
    if (cfg.aug_temperature == AugTemperatureMode::inherit)
      t = p.lambda * temps[p.src_a] + (1.0 - p.lambda) * temps[p.src_b];
    temps[train.original_size + j] = t;
  }
  return temps;
}

struct StudentResult {
  MlpModel model;
  History history;
};

/// Trains a fresh student on total_objective with per-sample temperatures.
/// Teacher logits for every row (augmented rows included) come from a
/// forward pass of the frozen teacher.
inline StudentResult distill_student(const AugmentedDataset &train,
                                     const MlpModel &teacher,
                                     const EnergyManifest &manifest,
                                     std::span<const std::size_t> hidden,
                                     const TrainConfig &cfg,
                                     const Dataset *test = nullptr) {
  cfg.validate();
  detail::require(teacher.input_dim() == train.data.dim &&
                      teacher.classes() == train.data.classes,
                  ErrorCode::shape_mismatch, "teacher does not match the dataset");
  const auto temps = training_temperatures(train, manifest, cfg);
  const Matrix zt = logits(teacher, train.data);
  StudentResult out;
  out.model = MlpModel::init(detail::layer_dims(train.data.dim, hidden, train.data.classes),
                             Rng::derive(cfg.seed, detail::kInitStream).next_u64());
  out.history = detail::run_sgd(out.model, train, zt, temps, cfg.alpha,
                                cfg.t_squared_scaling, cfg, test, "distill");
  return out;
}

// ---- EKDM checkpoint / EKDL logit dump -------------------------------------
//
// EKDM: "EKDM" | version u32 | dim count u32 | dims u32[] | params f64[]
// EKDL: "EKDL" | version u32 | N u64 | K u32 | logits f64[N*K] row-major

inline constexpr std::uint32_t kModelVersion = 1;
inline constexpr std::uint32_t kLogitVersion = 1;

inline std::vector<std::uint8_t> encode_model(const MlpModel &m) {
  io::ByteWriter w;
  w.magic("EKDM");
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(m.dims().size()));
  for (auto d : m.dims())
    w.u32(static_cast<std::uint32_t>(d));
  for (double p : m.params())
    w.f64(p);
  return w.bytes();
}

inline MlpModel decode_model(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("EKDM");
  const auto version = r.u32();
  detail::require(version == kModelVersion, ErrorCode::unsupported_version,
                  "unsupported checkpoint version " + std::to_string(version));
  const auto count = r.u32();
  detail::require(count >= 2 && count <= 64, ErrorCode::parse, "bad layer count");
  r.need(std::size_t{count} * 4);
  std::vector<std::size_t> dims(count);
  for (auto &d : dims) {
    d = r.u32();
    detail::require(d >= 1, ErrorCode::parse, "zero layer dim");
  }
  MlpModel m(dims);
  r.need(m.params().size() * 8);
  for (auto &p : m.params()) {
    p = r.f64();
    detail::require(std::isfinite(p), ErrorCode::non_finite, "non-finite parameter");
  }
  r.expect_end();
  return m;
}

inline void save_model(const std::filesystem::path &path, const MlpModel &m) {
  io::write_file(path, encode_model(m));
}

inline MlpModel load_model(const std::filesystem::path &path) {
  return decode_model(io::read_file(path));
}

inline std::vector<std::uint8_t> encode_logits(const Matrix &z) {
  io::ByteWriter w;
  w.magic("EKDL");
  w.u32(kLogitVersion);
  w.u64(z.rows());
  w.u32(static_cast<std::uint32_t>(z.cols()));
  for (double v : z.data())
    w.f64(v);
  return w.bytes();
}

inline Matrix decode_logits(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("EKDL");
  const auto version = r.u32();
  detail::require(version == kLogitVersion, ErrorCode::unsupported_version,
                  "unsupported logit dump version " + std::to_string(version));
  const auto n = r.u64();
  const auto k = r.u32();
  detail::require(k == 0 || n <= r.remaining() / 8 / k, ErrorCode::truncated,
                  "truncated payload");
  std::vector<double> data(n * k);
  for (auto &v : data)
    v = r.f64();
  r.expect_end();
  return Matrix(n, k, std::move(data));
}

inline void save_logits(const std::filesystem::path &path, const Matrix &z) {
  io::write_file(path, encode_logits(z));
}

inline Matrix load_logits(const std::filesystem::path &path) {
  return decode_logits(io::read_file(path));
}

} // namespace ekd

#endif // EKD_MODELS_HPP
