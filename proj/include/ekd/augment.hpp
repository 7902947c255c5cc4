#ifndef EKD_AUGMENT_HPP
#define EKD_AUGMENT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ekd/common.hpp"
#include "ekd/data.hpp"
#include "ekd/energy.hpp"
#include "ekd/rng.hpp"
#include "ekd/text.hpp"

namespace ekd {

enum class AugMethod { cutmix, mixup };

inline std::string_view to_string(AugMethod m) {
  return m == AugMethod::cutmix ? "cutmix" : "mixup";
}

inline AugMethod parse_aug_method(std::string_view s) {
  if (s == "cutmix") return AugMethod::cutmix;
  if (s == "mixup") return AugMethod::mixup;
  detail::fail(ErrorCode::parse, "unknown augmentation method '" + std::string(s) + "'");
}

/// Which energy bucket feeds the augmenter. Only `high` is the supported
/// production path; `low` and `mixed` exist to reproduce the bucket-choice
/// comparison experiment.
enum class AugSource { high, low, mixed };

inline std::string_view to_string(AugSource s) {
  switch (s) {
  case AugSource::high: return "high";
  case AugSource::low: return "low";
  case AugSource::mixed: return "mixed";
  }
  return "?";
}

inline AugSource parse_aug_source(std::string_view s) {
  if (s == "high") return AugSource::high;
  if (s == "low") return AugSource::low;
  if (s == "mixed") return AugSource::mixed;
  detail::fail(ErrorCode::parse, "unknown augmentation source '" + std::string(s) + "'");
}

/// Interpretation of a flat feature row as an H x W x C image (channel
/// innermost).
struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;

  std::size_t size() const noexcept { return height * width * channels; }

  /// Square single-channel reading of a d-dimensional row, if d is a square
  /// of at least 2x2.
  static std::optional<ImageShape> infer(std::size_t dim) {
    const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(dim))));
    if (s < 2 || s * s != dim)
      return std::nullopt;
    return ImageShape{s, s, 1};
  }

  friend bool operator==(const ImageShape &, const ImageShape &) = default;
};

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Box {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::size_t area() const noexcept { return (x1 - x0) * (y1 - y0); }
  friend bool operator==(const Box &, const Box &) = default;
};

struct Provenance {
  std::uint64_t new_id = 0;
  std::uint64_t src_a = 0;
  std::uint64_t src_b = 0;
  double lambda = 1.0;
  AugMethod method = AugMethod::mixup;
  std::optional<Box> box;

  friend bool operator==(const Provenance &, const Provenance &) = default;
};

struct AugmentedSample {
  std::vector<float> features;
  LabelMix label;
  Provenance provenance;

  /// Label weights as a distribution over `classes`.
  Distribution label_weights(std::size_t classes) const {
    Vector w(classes, 0.0);
    w[label.a] += label.lambda;
    w[label.b] += 1.0 - label.lambda;
    return Distribution(std::move(w));
  }
};

inline AugmentedSample mixup(std::span<const float> a, std::span<const float> b,
                             std::uint16_t label_a, std::uint16_t label_b,
                             double lambda) {
  detail::require(a.size() == b.size(), ErrorCode::shape_mismatch,
                  "mixup: feature shape mismatch");
  detail::require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::invalid_argument,
                  "mixup: lambda must be in [0, 1]");
  AugmentedSample s;
  s.features.resize(a.size());
  const double mu = 1.0 - lambda;
  for (std::size_t i = 0; i < a.size(); ++i)
    s.features[i] = static_cast<float>(lambda * a[i] + mu * b[i]);
  s.label = {label_a, label_b, lambda};
  s.provenance.lambda = lambda;
  s.provenance.method = AugMethod::mixup;
  return s;
}

/// Pastes `box` from b into a copy of a; lambda = 1 - area/(H W).
inline AugmentedSample cutmix_with_box(std::span<const float> a,
                                       std::span<const float> b,
                                       const ImageShape &shape,
                                       std::uint16_t label_a,
                                       std::uint16_t label_b, const Box &box) {
  detail::require(a.size() == b.size() && a.size() == shape.size(),
                  ErrorCode::shape_mismatch, "cutmix: image shape mismatch");
  detail::require(shape.height >= 2 && shape.width >= 2,
                  ErrorCode::invalid_argument, "cutmix: image smaller than 2x2");
  detail::require(box.x0 <= box.x1 && box.x1 <= shape.width && box.y0 <= box.y1 &&
                      box.y1 <= shape.height,
                  ErrorCode::invalid_argument, "cutmix: box outside image");
  AugmentedSample s;
  s.features.assign(a.begin(), a.end());
  const std::size_t c = shape.channels;
  for (std::size_t y = box.y0; y < box.y1; ++y)
    for (std::size_t x = box.x0; x < box.x1; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t idx = (y * shape.width + x) * c + ch;
        s.features[idx] = b[idx];
      }
  const double lambda =
      1.0 - static_cast<double>(box.area()) /
                static_cast<double>(shape.height * shape.width);
  s.label = {label_a, label_b, lambda};
  s.provenance.lambda = lambda;
  s.provenance.method = AugMethod::cutmix;
  s.provenance.box = box;
  return s;
}

/// Box of round(W sqrt(1-l)) x round(H sqrt(1-l)) around a uniformly drawn
/// center pixel, clipped to the image.
inline Box cutmix_box(const ImageShape &shape, double lambda_target, Rng &rng) {
  const double cut = std::sqrt(1.0 - lambda_target);
  const auto cut_w = static_cast<std::int64_t>(std::llround(static_cast<double>(shape.width) * cut));
  const auto cut_h = static_cast<std::int64_t>(std::llround(static_cast<double>(shape.height) * cut));
  const auto cx = static_cast<std::int64_t>(rng.below(shape.width));
  const auto cy = static_cast<std::int64_t>(rng.below(shape.height));
  auto clip = [](std::int64_t v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp<std::int64_t>(v, 0, static_cast<std::int64_t>(hi)));
  };
  const std::int64_t x0 = cx - cut_w / 2;
  const std::int64_t y0 = cy - cut_h / 2;
  return {clip(x0, shape.width), clip(y0, shape.height), clip(x0 + cut_w, shape.width),
          clip(y0 + cut_h, shape.height)};
}

inline AugmentedSample cutmix(std::span<const float> a, std::span<const float> b,
                              const ImageShape &shape, std::uint16_t label_a,
                              std::uint16_t label_b, double lambda_target,
                              Rng &rng) {
  detail::require(shape.height >= 2 && shape.width >= 2,
                  ErrorCode::invalid_argument, "cutmix: image smaller than 2x2");
  detail::require(lambda_target >= 0.0 && lambda_target <= 1.0,
                  ErrorCode::invalid_argument, "cutmix: lambda_target must be in [0, 1]");
  const Box box = cutmix_box(shape, lambda_target, rng);
  return cutmix_with_box(a, b, shape, label_a, label_b, box);
}

struct BucketSplit {
  std::vector<std::uint64_t> low;
  std::vector<std::uint64_t> else_;
  std::vector<std::uint64_t> high;
};

/// Disjoint id views of the dataset by bucket, each in ascending id order.
inline BucketSplit split_by_bucket(const Dataset &ds, const PartitionPlan &plan) {
  detail::require(plan.size() == ds.size(), ErrorCode::invalid_argument,
                  "split_by_bucket: plan does not cover the dataset");
  BucketSplit out;
  for (std::uint64_t id = 0; id < ds.size(); ++id) {
    const auto e = plan.find(id);
    detail::require(e.has_value(), ErrorCode::invalid_argument,
                    "split_by_bucket: id " + std::to_string(id) + " not in plan");
    switch (e->bucket) {
    case Bucket::low: out.low.push_back(id); break;
    case Bucket::else_: out.else_.push_back(id); break;
    case Bucket::high: out.high.push_back(id); break;
    }
  }
  return out;
}

/// Training set with appended augmented rows. Rows [0, original_size) are
/// the untouched originals; provenance[i] describes row original_size + i.
struct AugmentedDataset {
  Dataset data;
  std::vector<LabelMix> labels;
  std::vector<Provenance> provenance;
  std::size_t original_size = 0;

  std::size_t augmented_count() const noexcept { return provenance.size(); }
};

inline AugmentedDataset plain_training_set(const Dataset &ds) {
  AugmentedDataset out;
  out.data = ds;
  out.original_size = ds.size();
  out.labels.reserve(ds.size());
  for (auto l : ds.labels)
    out.labels.push_back(LabelMix::hard(l));
  return out;
}

struct HedaOptions {
  AugMethod method = AugMethod::cutmix;
  AugSource source = AugSource::high;
  std::uint64_t seed = 0;
  std::optional<ImageShape> shape; ///< required for cutmix; inferred if unset
};

namespace detail {

/// One augmented sample per entry of `sources`; the partner is drawn
/// uniformly from `pool` minus the source itself. Sample i uses the stream
/// Rng::derive(seed, i), so generation order cannot change the output.
inline void append_augmented(AugmentedDataset &out, const Dataset &ds,
                             std::span<const std::uint64_t> sources,
                             std::span<const std::uint64_t> pool,
                             const HedaOptions &opt, std::uint64_t stream_offset) {
  std::optional<ImageShape> shape = opt.shape;
  if (opt.method == AugMethod::cutmix) {
    if (!shape)
      shape = ImageShape::infer(ds.dim);
    require(shape.has_value() && shape->size() == ds.dim,
            ErrorCode::invalid_argument,
            "cutmix: feature dimension is not an image shape (set image_h/image_w)");
  }
  for (std::size_t i = 0; i < sources.size(); ++i) {
    Rng rng = Rng::derive(opt.seed, stream_offset + i);
    const std::uint64_t a = sources[i];
    // Uniform over pool without `a`: draw from |pool|-1 slots, skip a's slot.
    const auto a_pos = static_cast<std::size_t>(
        std::find(pool.begin(), pool.end(), a) - pool.begin());
    std::size_t j = static_cast<std::size_t>(rng.below(pool.size() - 1));
    if (a_pos < pool.size() && j >= a_pos)
      ++j;
    const std::uint64_t b = pool[j];
    const double lambda = rng.beta(1.0, 1.0);
    AugmentedSample s =
        opt.method == AugMethod::mixup
            ? mixup(ds.sample(a), ds.sample(b), ds.labels[a], ds.labels[b], lambda)
            : cutmix(ds.sample(a), ds.sample(b), *shape, ds.labels[a], ds.labels[b],
                     lambda, rng);
    s.provenance.new_id = out.data.size();
    s.provenance.src_a = a;
    s.provenance.src_b = b;
    const auto hard = s.label.lambda >= 0.5 ? s.label.a : s.label.b;
    out.data.push_back(s.features, hard);
    out.labels.push_back(s.label);
    out.provenance.push_back(s.provenance);
  }
}

} // namespace detail

/// Appends one augmented sample per source-bucket sample (HIGH by default)
/// to a copy of the dataset. Partners come from the same bucket.
inline AugmentedDataset build_heda_dataset(const Dataset &ds, const PartitionPlan &plan,
                                           const HedaOptions &opt) {
  const auto split = split_by_bucket(ds, plan);
  AugmentedDataset out = plain_training_set(ds);
  const std::size_t count = split.high.size();
  auto need_pair = [](std::size_t n, const char *bucket) {
    detail::require(n >= 2, ErrorCode::invalid_argument,
                    std::string("augmentation needs at least 2 samples in the ") +
                        bucket + " bucket for pairing");
  };
  switch (opt.source) {
  case AugSource::high:
    need_pair(split.high.size(), "HIGH");
    detail::append_augmented(out, ds, split.high, split.high, opt, 0);
    break;
  case AugSource::low:
    need_pair(split.low.size(), "LOW");
    detail::append_augmented(out, ds, split.low, split.low, opt, 0);
    break;
  case AugSource::mixed: {
    need_pair(split.low.size(), "LOW");
    need_pair(split.high.size(), "HIGH");
    // Same budget as the other modes, split half and half. Sources are the
    // lowest-energy LOW samples and the highest-energy HIGH samples.
    const std::size_t n_low = count / 2;
    const auto low_rank = plan.ids_in(Bucket::low);
    const auto high_rank = plan.ids_in(Bucket::high);
    std::vector<std::uint64_t> low_src(low_rank.begin(), low_rank.begin() + static_cast<std::ptrdiff_t>(n_low));
    std::vector<std::uint64_t> high_src(high_rank.end() - static_cast<std::ptrdiff_t>(count - n_low), high_rank.end());
    detail::append_augmented(out, ds, low_src, split.low, opt, 0);
    detail::append_augmented(out, ds, high_src, split.high, opt, n_low);
    break;
  }
  }
  return out;
}

/// Full-dataset augmentation (one augmented sample per original, partners
/// from the whole set): the all-samples cost baseline.
inline AugmentedDataset augment_all(const Dataset &ds, const HedaOptions &opt) {
  detail::require(ds.size() >= 2, ErrorCode::invalid_argument,
                  "augmentation needs at least 2 samples");
  AugmentedDataset out = plain_training_set(ds);
  std::vector<std::uint64_t> ids(ds.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    ids[i] = i;
  detail::append_augmented(out, ds, ids, ids, opt, 0);
  return out;
}

// ---- Provenance side file -------------------------------------------------

inline constexpr std::string_view kProvenanceColumns =
    "new_id,src_a,src_b,lambda,method,box_x0,box_y0,box_x1,box_y1";

inline std::string format_provenance(std::span<const Provenance> rows) {
  std::string out(kProvenanceColumns);
  out += "\n";
  for (const auto &p : rows) {
    out += std::to_string(p.new_id) + "," + std::to_string(p.src_a) + "," +
           std::to_string(p.src_b) + "," + text::fmt_double(p.lambda) + "," +
           std::string(to_string(p.method)) + ",";
    if (p.box)
      out += std::to_string(p.box->x0) + "," + std::to_string(p.box->y0) + "," +
             std::to_string(p.box->x1) + "," + std::to_string(p.box->y1);
    else
      out += ",,,";
    out += "\n";
  }
  return out;
}

inline std::vector<Provenance> parse_provenance(std::string_view content) {
  const auto ls = text::lines(content);
  detail::require(!ls.empty() && ls.front() == kProvenanceColumns, ErrorCode::parse,
                  "provenance column header mismatch");
  std::vector<Provenance> out;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    if (ls[i].empty())
      continue;
    const auto f = text::split(ls[i], ',');
    detail::require(f.size() == 9, ErrorCode::parse, "provenance row needs 9 fields");
    Provenance p;
    p.new_id = text::parse_int<std::uint64_t>(f[0], "new_id");
    p.src_a = text::parse_int<std::uint64_t>(f[1], "src_a");
    p.src_b = text::parse_int<std::uint64_t>(f[2], "src_b");
    p.lambda = text::parse_double(f[3], "lambda");
    p.method = parse_aug_method(f[4]);
    if (!f[5].empty())
      p.box = Box{text::parse_int<std::size_t>(f[5]), text::parse_int<std::size_t>(f[6]),
                  text::parse_int<std::size_t>(f[7]), text::parse_int<std::size_t>(f[8])};
    out.push_back(p);
  }
  return out;
}

inline void save_augmented(const std::filesystem::path &data_path,
                           const std::filesystem::path &provenance_path,
                           const AugmentedDataset &ads) {
  save_dataset(data_path, ads.data);
  io::write_text(provenance_path, format_provenance(ads.provenance));
}

/// Rebuilds label mixtures from the provenance rows and the original labels.
inline AugmentedDataset load_augmented(const std::filesystem::path &data_path,
                                       const std::filesystem::path &provenance_path) {
  AugmentedDataset out;
  out.data = load_dataset(data_path);
  out.provenance = parse_provenance(io::read_text(provenance_path));
  detail::require(out.provenance.size() <= out.data.size(), ErrorCode::parse,
                  "more provenance rows than samples");
  out.original_size = out.data.size() - out.provenance.size();
  out.labels.reserve(out.data.size());
  for (std::size_t i = 0; i < out.original_size; ++i)
    out.labels.push_back(LabelMix::hard(out.data.labels[i]));
  for (std::size_t i = 0; i < out.provenance.size(); ++i) {
    const auto &p = out.provenance[i];
    detail::require(p.new_id == out.original_size + i && p.src_a < out.original_size &&
                        p.src_b < out.original_size,
                    ErrorCode::parse, "provenance ids inconsistent with dataset");
    out.labels.push_back({out.data.labels[p.src_a], out.data.labels[p.src_b], p.lambda});
  }
  return out;
}

} // namespace ekd

#endif // EKD_AUGMENT_HPP
