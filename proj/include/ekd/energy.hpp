#ifndef EKD_ENERGY_HPP
#define EKD_ENERGY_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ekd/common.hpp"
#include "ekd/io.hpp"
#include "ekd/kdloss.hpp"
#include "ekd/numcore.hpp"
#include "ekd/text.hpp"

namespace ekd {

/// Energy of a logit vector: -T_E * log sum_j exp(z_j / T_E).
/// Lower energy means a more confident model.
inline double energy_score(std::span<const double> z, double t_e) {
  detail::require(std::isfinite(t_e) && t_e > 0.0, ErrorCode::invalid_argument,
                  "invalid energy temperature");
  detail::require(z.size() >= 2, ErrorCode::invalid_argument,
                  "energy needs at least 2 logits");
  detail::require_finite(z);
  return -t_e * detail::lse_scaled(z, t_e);
}

/// log p(x) up to the additive constant log C: -E(x) / T_E.
inline double log_unnormalized_density(std::span<const double> z, double t_e) {
  return -energy_score(z, t_e) / t_e;
}

struct EnergyRecord {
  std::uint64_t sample_id = 0;
  double energy = 0.0;
  std::size_t rank = 0; ///< 1-based position in ascending energy order

  friend bool operator==(const EnergyRecord &, const EnergyRecord &) = default;
};

/// Scores every row and returns the records sorted by ascending energy,
/// ties broken by ascending sample id.
inline std::vector<EnergyRecord> rank_dataset(const Matrix &logits, double t_e,
                                              std::span<const std::uint64_t> ids) {
  detail::require(logits.rows() >= 1, ErrorCode::empty_input,
                  "rank_dataset: empty logit matrix");
  detail::require(ids.size() == logits.rows(), ErrorCode::shape_mismatch,
                  "rank_dataset: one id per row required");
  std::vector<EnergyRecord> recs(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i)
    recs[i] = {ids[i], energy_score(logits.row(i), t_e), 0};
  std::sort(recs.begin(), recs.end(), [](const auto &a, const auto &b) {
    return a.energy < b.energy || (a.energy == b.energy && a.sample_id < b.sample_id);
  });
  for (std::size_t i = 0; i < recs.size(); ++i)
    recs[i].rank = i + 1;
  return recs;
}

/// Row i gets sample id i.
inline std::vector<EnergyRecord> rank_dataset(const Matrix &logits, double t_e) {
  std::vector<std::uint64_t> ids(logits.rows());
  for (std::size_t i = 0; i < ids.size(); ++i)
    ids[i] = i;
  return rank_dataset(logits, t_e, ids);
}

/// Low/else/high split of an energy ranking.
///
/// With n = floor(N r), ranks 1..n are LOW and ranks N-n+1..N are HIGH.
/// Membership is decided by rank so bucket sizes stay exact under tied
/// energies; the thresholds (energy at rank n and at rank N-n+1) are kept for
/// reporting.
struct PartitionPlan {
  struct Entry {
    std::uint64_t sample_id = 0;
    double energy = 0.0;
    std::size_t rank = 0;
    Bucket bucket = Bucket::else_;
    friend bool operator==(const Entry &, const Entry &) = default;
  };

  double r = 0.0;
  std::size_t n_boundary = 0;
  double e_low = 0.0;
  double e_high = 0.0;
  std::vector<Entry> entries; ///< ascending rank order

  std::size_t size() const noexcept { return entries.size(); }

  std::size_t count(Bucket b) const {
    return static_cast<std::size_t>(std::count_if(
        entries.begin(), entries.end(), [b](const Entry &e) { return e.bucket == b; }));
  }

  /// Ids in `b`, in ascending rank order.
  std::vector<std::uint64_t> ids_in(Bucket b) const {
    std::vector<std::uint64_t> out;
    for (const auto &e : entries)
      if (e.bucket == b)
        out.push_back(e.sample_id);
    return out;
  }

  std::optional<Entry> find(std::uint64_t id) const {
    auto it = std::lower_bound(by_id_.begin(), by_id_.end(), id,
                               [](const auto &p, std::uint64_t v) { return p.first < v; });
    if (it == by_id_.end() || it->first != id)
      return std::nullopt;
    return entries[it->second];
  }

  void index() {
    by_id_.clear();
    by_id_.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i)
      by_id_.emplace_back(entries[i].sample_id, i);
    std::sort(by_id_.begin(), by_id_.end());
    for (std::size_t i = 0; i + 1 < by_id_.size(); ++i)
      detail::require(by_id_[i].first != by_id_[i + 1].first,
                      ErrorCode::invalid_argument, "duplicate sample id");
  }

  friend bool operator==(const PartitionPlan &a, const PartitionPlan &b) {
    return a.r == b.r && a.n_boundary == b.n_boundary && a.e_low == b.e_low &&
           a.e_high == b.e_high && a.entries == b.entries;
  }

private:
  std::vector<std::pair<std::uint64_t, std::size_t>> by_id_;
};

/// floor(n r). The product is nudged by a relative 1e-12 first so that
/// fractions like 0.29 (stored as 0.28999...) still give floor(100*0.29) = 29.
inline std::size_t boundary_count(std::size_t n, double r) {
  const double x = static_cast<double>(n) * r;
  return static_cast<std::size_t>(std::floor(x + std::abs(x) * 1e-12));
}

inline PartitionPlan partition(std::span<const EnergyRecord> records, double r) {
  detail::require(r > 0.0 && r <= 0.5, ErrorCode::invalid_argument,
                  "r outside (0, 0.5]: buckets would overlap or be empty");
  const std::size_t n = records.size();
  const std::size_t boundary = boundary_count(n, r);
  detail::require(boundary >= 1, ErrorCode::invalid_argument,
                  "floor(N*r) = 0: buckets would overlap or be empty");
  for (std::size_t i = 0; i < n; ++i) {
    detail::require(records[i].rank == i + 1, ErrorCode::invalid_argument,
                    "records must be in ascending rank order");
    if (i > 0)
      detail::require(records[i - 1].energy <= records[i].energy,
                      ErrorCode::invalid_argument, "records not sorted by energy");
  }

  PartitionPlan plan;
  plan.r = r;
  plan.n_boundary = boundary;
  plan.e_low = records[boundary - 1].energy;
  plan.e_high = records[n - boundary].energy;
  plan.entries.reserve(n);
  for (const auto &rec : records) {
    Bucket b = Bucket::else_;
    if (rec.rank <= boundary)
      b = Bucket::low;
    else if (rec.rank > n - boundary)
      b = Bucket::high;
    plan.entries.push_back({rec.sample_id, rec.energy, rec.rank, b});
  }
  plan.index();
  return plan;
}

// ---- Energy manifest ------------------------------------------------------

struct ManifestRow {
  std::uint64_t sample_id = 0;
  /// Stored at float precision so the 9-significant-digit text form is exact.
  float energy = 0.0f;
  std::size_t rank = 0;
  Bucket bucket = Bucket::else_;
  double temperature = 0.0;

  friend bool operator==(const ManifestRow &, const ManifestRow &) = default;
};

struct ManifestInfo {
  std::size_t classes = 0;
  double t_e = 1.0;
  std::string teacher_checksum;
};

struct EnergyManifest {
  std::size_t n = 0;
  std::size_t classes = 0;
  double r = 0.0;
  double t_e = 1.0;
  std::string policy;
  std::string teacher_checksum;
  std::vector<ManifestRow> rows; ///< ascending sample id

  /// Temperature for a sample id; nullopt if the id is not in the manifest.
  std::optional<double> temperature_of(std::uint64_t id) const {
    if (id < rows.size() && rows[id].sample_id == id)
      return rows[id].temperature;
    auto it = std::lower_bound(rows.begin(), rows.end(), id,
                               [](const ManifestRow &r, std::uint64_t v) { return r.sample_id < v; });
    if (it == rows.end() || it->sample_id != id)
      return std::nullopt;
    return it->temperature;
  }

  friend bool operator==(const EnergyManifest &, const EnergyManifest &) = default;
};

inline EnergyManifest build_manifest(const PartitionPlan &plan,
                                     std::span<const EnergyRecord> records,
                                     const TemperaturePolicy &policy,
                                     const ManifestInfo &info) {
  policy.validate();
  detail::require(records.size() == plan.size(), ErrorCode::invalid_argument,
                  "build_manifest: plan and records cover different id sets");
  EnergyManifest m;
  m.n = plan.size();
  m.classes = info.classes;
  m.r = plan.r;
  m.t_e = info.t_e;
  m.policy = policy.describe();
  m.teacher_checksum = info.teacher_checksum;
  m.rows.reserve(records.size());
  for (const auto &rec : records) {
    const auto entry = plan.find(rec.sample_id);
    detail::require(entry.has_value() && entry->rank == rec.rank,
                    ErrorCode::invalid_argument,
                    "build_manifest: id mismatch for sample " +
                        std::to_string(rec.sample_id));
    m.rows.push_back({rec.sample_id, static_cast<float>(rec.energy), rec.rank,
                      entry->bucket,
                      assign_temperature(entry->bucket, rec.rank, m.n, policy)});
  }
  std::sort(m.rows.begin(), m.rows.end(),
            [](const auto &a, const auto &b) { return a.sample_id < b.sample_id; });
  return m;
}

inline constexpr std::string_view kManifestColumns =
    "sample_id,energy,rank,bucket,temperature";

inline std::string format_manifest(const EnergyManifest &m) {
  std::string out;
  out += "# N=" + std::to_string(m.n) + "\n";
  out += "# K=" + std::to_string(m.classes) + "\n";
  out += "# r=" + text::fmt_double(m.r) + "\n";
  out += "# T_E=" + text::fmt_double(m.t_e) + "\n";
  out += "# policy=" + m.policy + "\n";
  out += "# teacher_checksum=" + m.teacher_checksum + "\n";
  out += kManifestColumns;
  out += "\n";
  for (const auto &row : m.rows) {
    out += std::to_string(row.sample_id) + "," + text::fmt_sig(row.energy, 9) +
           "," + std::to_string(row.rank) + "," + std::string(to_string(row.bucket)) +
           "," + text::fmt_double(row.temperature) + "\n";
  }
  return out;
}

inline EnergyManifest parse_manifest(std::string_view content) {
  EnergyManifest m;
  bool saw_columns = false;
  bool have_n = false;
  for (auto line : text::lines(content)) {
    if (line.empty())
      continue;
    if (line.front() == '#') {
      const auto kv = text::trim(line.substr(1));
      const auto eq = kv.find('=');
      detail::require(eq != std::string_view::npos, ErrorCode::parse,
                      "manifest header line without '='");
      const auto key = kv.substr(0, eq);
      const auto val = kv.substr(eq + 1);
      if (key == "N") {
        m.n = text::parse_int<std::size_t>(val, "N");
        have_n = true;
      } else if (key == "K") {
        m.classes = text::parse_int<std::size_t>(val, "K");
      } else if (key == "r") {
        m.r = text::parse_double(val, "r");
      } else if (key == "T_E") {
        m.t_e = text::parse_double(val, "T_E");
      } else if (key == "policy") {
        m.policy = std::string(val);
      } else if (key == "teacher_checksum") {
        m.teacher_checksum = std::string(val);
      }
      continue;
    }
    if (!saw_columns) {
      detail::require(line == kManifestColumns, ErrorCode::parse,
                      "manifest column header mismatch");
      saw_columns = true;
      continue;
    }
    const auto f = text::split(line, ',');
    detail::require(f.size() == 5, ErrorCode::parse, "manifest row needs 5 fields");
    ManifestRow row;
    row.sample_id = text::parse_int<std::uint64_t>(f[0], "sample_id");
    row.energy = static_cast<float>(text::parse_double(f[1], "energy"));
    row.rank = text::parse_int<std::size_t>(f[2], "rank");
    row.bucket = parse_bucket(f[3]);
    row.temperature = text::parse_double(f[4], "temperature");
    detail::require(row.temperature > 0.0, ErrorCode::parse,
                    "manifest temperature must be positive");
    m.rows.push_back(row);
  }
  detail::require(saw_columns, ErrorCode::parse, "manifest has no column header");
  detail::require(have_n && m.n == m.rows.size(), ErrorCode::parse,
                  "manifest row count does not match N");
  for (std::size_t i = 1; i < m.rows.size(); ++i)
    detail::require(m.rows[i - 1].sample_id < m.rows[i].sample_id,
                    ErrorCode::parse, "manifest rows must be in ascending id order");
  return m;
}

inline void save_manifest(const std::filesystem::path &path, const EnergyManifest &m) {
  io::write_text(path, format_manifest(m));
}

inline EnergyManifest load_manifest(const std::filesystem::path &path) {
  return parse_manifest(io::read_text(path));
}

} // namespace ekd

#endif // EKD_ENERGY_HPP
