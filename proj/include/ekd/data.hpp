#ifndef EKD_DATA_HPP
#define EKD_DATA_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ekd/error.hpp"
#include "ekd/io.hpp"
#include "ekd/rng.hpp"

namespace ekd {

/// Labeled feature rows. Sample ids are the row positions 0..N-1.
/// Features are stored in 32-bit floats (the on-disk precision); all
/// arithmetic on them is done in double.
struct Dataset {
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::vector<float> features;
  std::vector<std::uint16_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  std::span<const float> sample(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
  std::span<float> sample(std::size_t i) {
    return {features.data() + i * dim, dim};
  }

  void push_back(std::span<const float> x, std::uint16_t label) {
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(label);
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(classes, 0);
    for (auto l : labels)
      ++counts[l];
    return counts;
  }

  void validate() const {
    detail::require(classes >= 1 && classes <= 65536, ErrorCode::invalid_argument,
                    "class count must be in [1, 65536]");
    detail::require(features.size() == labels.size() * dim,
                    ErrorCode::shape_mismatch,
                    "feature buffer does not match N x d");
    for (auto l : labels)
      detail::require(l < classes, ErrorCode::label_out_of_range,
                      "label out of range");
    for (float v : features)
      detail::require(std::isfinite(v), ErrorCode::non_finite,
                      "non-finite feature value");
  }

  friend bool operator==(const Dataset &, const Dataset &) = default;
};

struct DataSplit {
  Dataset train;
  Dataset test;
};

struct BlobParams {
  std::size_t classes = 6;
  std::size_t per_class = 500;
  std::size_t test_per_class = 300;
  std::size_t dim = 16;
  double separation = 3.0;
  double noise = 1.0;
  std::uint64_t seed = 7;
};

/// Exponential-decay class profile: n_k = max(1, round(n_max * f^(k/(K-1)))),
/// so the rarest-to-most-frequent ratio is f.
struct LongTailSpec {
  std::size_t classes = 6;
  std::size_t n_max = 500;
  double imbalance_factor = 0.5;

  std::vector<std::size_t> counts() const {
    detail::require(classes >= 2, ErrorCode::invalid_argument,
                    "long tail needs at least 2 classes");
    detail::require(imbalance_factor > 0.0 && imbalance_factor <= 1.0,
                    ErrorCode::invalid_argument,
                    "imbalance factor must be in (0, 1]");
    std::vector<std::size_t> n(classes);
    for (std::size_t k = 0; k < classes; ++k) {
      const double exponent =
          static_cast<double>(k) / static_cast<double>(classes - 1);
      const double v = std::round(static_cast<double>(n_max) *
                                  std::pow(imbalance_factor, exponent));
      n[k] = std::max<std::size_t>(1, static_cast<std::size_t>(v));
    }
    return n;
  }
};

namespace detail {

inline std::vector<std::vector<double>> blob_centers(const BlobParams &p) {
  constexpr int max_retries = 1000;
  Rng rng = Rng::derive(p.seed, 2);
  // Isotropic normal centers: expected pairwise distance is scale*sqrt(2d),
  // so scale = separation/sqrt(d) typically lands ~1.4x separation apart.
  const double scale = p.separation / std::sqrt(static_cast<double>(p.dim));
  std::vector<std::vector<double>> centers;
  for (std::size_t k = 0; k < p.classes; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < max_retries && !placed; ++attempt) {
      std::vector<double> c(p.dim);
      for (auto &v : c)
        v = scale * rng.normal();
      placed = true;
      for (const auto &other : centers) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < p.dim; ++j)
          d2 += (c[j] - other[j]) * (c[j] - other[j]);
        if (std::sqrt(d2) < p.separation) {
          placed = false;
          break;
        }
      }
      if (placed)
        centers.push_back(std::move(c));
    }
    require(placed, ErrorCode::invalid_argument,
            "infeasible class separation after bounded retries");
  }
  return centers;
}

inline std::vector<std::vector<double>>
sample_blobs(const std::vector<std::vector<double>> &centers,
             std::span<const std::size_t> counts, double noise, Rng &rng,
             std::vector<std::uint16_t> &labels) {
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < centers.size(); ++k) {
    for (std::size_t i = 0; i < counts[k]; ++i) {
      std::vector<double> x = centers[k];
      if (noise > 0.0)
        for (auto &v : x)
          v += noise * rng.normal();
      rows.push_back(std::move(x));
      labels.push_back(static_cast<std::uint16_t>(k));
    }
  }
  return rows;
}

inline DataSplit make_blob_split(const BlobParams &p,
                                 std::span<const std::size_t> train_counts,
                                 std::span<const std::size_t> test_counts) {
  require(p.classes >= 2, ErrorCode::invalid_argument, "need K >= 2");
  require(p.classes <= 65536, ErrorCode::invalid_argument, "too many classes");
  require(p.dim >= 2, ErrorCode::invalid_argument, "need d >= 2");
  require(p.noise >= 0.0 && std::isfinite(p.noise), ErrorCode::invalid_argument,
          "noise must be finite and non-negative");
  require(p.separation >= 0.0 && std::isfinite(p.separation),
          ErrorCode::invalid_argument, "separation must be finite and non-negative");

  const auto centers = blob_centers(p);
  DataSplit out;
  out.train.dim = out.test.dim = p.dim;
  out.train.classes = out.test.classes = p.classes;
  Rng train_rng = Rng::derive(p.seed, 0);
  Rng test_rng = Rng::derive(p.seed, 1);
  auto train = sample_blobs(centers, train_counts, p.noise, train_rng, out.train.labels);
  auto test = sample_blobs(centers, test_counts, p.noise, test_rng, out.test.labels);

  // Standardize with training statistics; apply the same map to the test rows.
  std::vector<double> mean(p.dim, 0.0), sd(p.dim, 0.0);
  for (const auto &x : train)
    for (std::size_t j = 0; j < p.dim; ++j)
      mean[j] += x[j];
  for (auto &m : mean)
    m /= static_cast<double>(train.size());
  for (const auto &x : train)
    for (std::size_t j = 0; j < p.dim; ++j)
      sd[j] += (x[j] - mean[j]) * (x[j] - mean[j]);
  for (auto &s : sd) {
    s = std::sqrt(s / static_cast<double>(train.size()));
    if (s == 0.0)
      s = 1.0;
  }
  auto emit = [&](const std::vector<std::vector<double>> &rows, Dataset &ds) {
    ds.features.reserve(rows.size() * p.dim);
    for (const auto &x : rows)
      for (std::size_t j = 0; j < p.dim; ++j)
        ds.features.push_back(static_cast<float>((x[j] - mean[j]) / sd[j]));
  };
  emit(train, out.train);
  emit(test, out.test);
  return out;
}

} // namespace detail

/// Gaussian clusters with a balanced test split drawn from the same centers.
inline DataSplit make_blobs_split(const BlobParams &p) {
  std::vector<std::size_t> train(p.classes, p.per_class);
  std::vector<std::size_t> test(p.classes, p.test_per_class);
  return detail::make_blob_split(p, train, test);
}

inline Dataset make_blobs(std::size_t classes, std::size_t n_per_class,
                          std::size_t dim, double class_separation,
                          double noise_sigma, std::uint64_t seed) {
  BlobParams p{classes, n_per_class, 0, dim, class_separation, noise_sigma, seed};
  return make_blobs_split(p).train;
}

/// Long-tailed training split (class k has spec.counts()[k] samples) with
/// a balanced test split. spec.classes overrides base.classes and
/// spec.n_max overrides base.per_class.
inline DataSplit make_long_tail_split(const LongTailSpec &spec, BlobParams base) {
  base.classes = spec.classes;
  base.per_class = spec.n_max;
  const auto train = spec.counts();
  std::vector<std::size_t> test(spec.classes, base.test_per_class);
  return detail::make_blob_split(base, train, test);
}

inline Dataset make_long_tail(const LongTailSpec &spec, const BlobParams &base) {
  return make_long_tail_split(spec, base).train;
}

// ---- EKDS file format ----------------------------------------------------
//
//   "EKDS" | version u32 | N u64 | d u32 | K u32 |
//   features f32[N*d] row-major | labels u16[N]        (all little-endian)

inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<std::uint8_t> encode_dataset(const Dataset &ds) {
  ds.validate();
  io::ByteWriter w;
  w.magic("EKDS");
  w.u32(kDatasetVersion);
  w.u64(ds.size());
  w.u32(static_cast<std::uint32_t>(ds.dim));
  w.u32(static_cast<std::uint32_t>(ds.classes));
  for (float v : ds.features)
    w.f32(v);
  for (auto l : ds.labels)
    w.u16(l);
  return w.bytes();
}

inline Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("EKDS");
  const auto version = r.u32();
  detail::require(version == kDatasetVersion, ErrorCode::unsupported_version,
                  "unsupported dataset version " + std::to_string(version));
  const auto n = r.u64();
  Dataset ds;
  ds.dim = r.u32();
  ds.classes = r.u32();
  detail::require(ds.classes >= 1 && ds.classes <= 65536, ErrorCode::parse,
                  "class count out of range");
  // Guard against overflow before checking the declared payload length.
  detail::require(ds.dim == 0 || n <= std::numeric_limits<std::uint64_t>::max() / 8 / ds.dim,
                  ErrorCode::truncated, "truncated payload");
  r.need(n * ds.dim * 4 + n * 2);
  ds.features.resize(n * ds.dim);
  for (auto &v : ds.features) {
    v = r.f32();
    detail::require(std::isfinite(v), ErrorCode::non_finite,
                    "non-finite feature value");
  }
  ds.labels.resize(n);
  for (auto &l : ds.labels) {
    l = r.u16();
    detail::require(l < ds.classes, ErrorCode::label_out_of_range,
                    "label out of range");
  }
  r.expect_end();
  return ds;
}

inline void save_dataset(const std::filesystem::path &path, const Dataset &ds) {
  io::write_file(path, encode_dataset(ds));
}

inline Dataset load_dataset(const std::filesystem::path &path) {
  return decode_dataset(io::read_file(path));
}

inline std::uint64_t dataset_checksum(const Dataset &ds) {
  return io::fnv1a64(encode_dataset(ds));
}

} // namespace ekd

#endif // EKD_DATA_HPP
