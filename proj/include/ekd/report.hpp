#ifndef EKD_REPORT_HPP
#define EKD_REPORT_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "ekd/common.hpp"
#include "ekd/energy.hpp"
#include "ekd/models.hpp"
#include "ekd/numcore.hpp"
#include "ekd/text.hpp"

namespace ekd {

struct BucketStats {
  std::size_t count = 0;
  double mean_max_prob = 0.0;
  double mean_entropy = 0.0;
  Vector mean_prediction; ///< class-averaged softmax vector
};

/// Softmax (T = 1) confidence statistics per energy bucket, indexed by Bucket.
struct BucketConfidenceStats {
  std::array<BucketStats, 3> buckets;

  const BucketStats &operator[](Bucket b) const {
    return buckets[static_cast<std::size_t>(b)];
  }
};

inline BucketConfidenceStats bucket_confidence(const Matrix &logits,
                                               const PartitionPlan &plan) {
  detail::require(plan.size() == logits.rows(), ErrorCode::shape_mismatch,
                  "bucket_confidence: plan does not cover the logit rows");
  const std::size_t k = logits.cols();
  BucketConfidenceStats out;
  for (auto &b : out.buckets)
    b.mean_prediction.assign(k, 0.0);
  Vector p(k);
  for (const auto &e : plan.entries) {
    detail::require(e.sample_id < logits.rows(), ErrorCode::shape_mismatch,
                    "bucket_confidence: sample id outside the logit matrix");
    auto &b = out.buckets[static_cast<std::size_t>(e.bucket)];
    detail::softmax_into(logits.row(e.sample_id), 1.0, p);
    ++b.count;
    double mx = 0.0, h = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      mx = std::max(mx, p[j]);
      if (p[j] > 0.0)
        h -= p[j] * std::log(p[j]);
      b.mean_prediction[j] += p[j];
    }
    b.mean_max_prob += mx;
    b.mean_entropy += h;
  }
  for (auto &b : out.buckets) {
    if (b.count == 0)
      continue;
    const double inv = 1.0 / static_cast<double>(b.count);
    b.mean_max_prob *= inv;
    b.mean_entropy *= inv;
    for (auto &v : b.mean_prediction)
      v *= inv;
  }
  return out;
}

/// |corr(student) - corr(teacher)| over class-logit columns (Pearson across
/// samples). Symmetric with an exactly-zero diagonal.
struct CorrelationDisparity {
  Matrix disparity;
  double mean_off_diagonal = 0.0;
};

/// K x K Pearson correlation of the logit columns.
inline Matrix logit_correlation(const Matrix &z) {
  const std::size_t n = z.rows(), k = z.cols();
  detail::require(n >= 2, ErrorCode::invalid_argument,
                  "correlation needs at least 2 samples");
  Vector mean(k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j)
      mean[j] += z(i, j);
  for (auto &m : mean)
    m /= static_cast<double>(n);
  Matrix cov(k, k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < k; ++a) {
      const double da = z(i, a) - mean[a];
      for (std::size_t b = a; b < k; ++b)
        cov(a, b) += da * (z(i, b) - mean[b]);
    }
  Matrix corr(k, k);
  for (std::size_t a = 0; a < k; ++a)
    detail::require(cov(a, a) > 0.0, ErrorCode::invalid_argument,
                    "degenerate logit column " + std::to_string(a));
  for (std::size_t a = 0; a < k; ++a) {
    corr(a, a) = 1.0;
    for (std::size_t b = a + 1; b < k; ++b) {
      const double c = cov(a, b) / std::sqrt(cov(a, a) * cov(b, b));
      corr(a, b) = corr(b, a) = std::clamp(c, -1.0, 1.0);
    }
  }
  return corr;
}

inline CorrelationDisparity correlation_disparity(const Matrix &z_s, const Matrix &z_t) {
  check_same_shape(z_s, z_t, "correlation_disparity");
  const auto cs = logit_correlation(z_s);
  const auto ct = logit_correlation(z_t);
  const std::size_t k = z_s.cols();
  CorrelationDisparity out;
  out.disparity = Matrix(k, k);
  double sum = 0.0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b)
      if (a != b) {
        out.disparity(a, b) = std::abs(cs(a, b) - ct(a, b));
        sum += out.disparity(a, b);
      }
  if (k > 1)
    out.mean_off_diagonal = sum / static_cast<double>(k * (k - 1));
  return out;
}

/// Per-epoch sample-count increase from appending floor(N r) augmented
/// samples: (N + floor(N r)) / N - 1. At a fixed batch size this is the
/// relative increase in optimizer work.
inline double cost_report(std::size_t base_n, double r) {
  detail::require(r >= 0.0 && r <= 1.0, ErrorCode::invalid_argument,
                  "cost_report: r must be in [0, 1]");
  detail::require(base_n >= 1, ErrorCode::invalid_argument, "cost_report: N must be >= 1");
  const auto extra = boundary_count(base_n, r);
  return static_cast<double>(base_n + extra) / static_cast<double>(base_n) - 1.0;
}

// ---- Serialization ----------------------------------------------------------

inline nlohmann::json to_json(const BucketConfidenceStats &s) {
  nlohmann::json j = nlohmann::json::object();
  for (auto b : {Bucket::low, Bucket::else_, Bucket::high}) {
    const auto &st = s[b];
    j[std::string(to_string(b))] = {{"count", st.count},
                                    {"mean_max_prob", st.mean_max_prob},
                                    {"mean_entropy", st.mean_entropy},
                                    {"mean_prediction", st.mean_prediction}};
  }
  return j;
}

inline nlohmann::json to_json(const History &h) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto &e : h)
    arr.push_back({{"epoch", e.epoch},
                   {"loss", e.loss},
                   {"train_accuracy", e.train_accuracy},
                   {"test_accuracy", e.test_accuracy}});
  return arr;
}

inline std::string bucket_confidence_csv(const BucketConfidenceStats &s) {
  const std::size_t k = s.buckets[0].mean_prediction.size();
  std::string out = "bucket,count,mean_max_prob,mean_entropy";
  for (std::size_t j = 0; j < k; ++j)
    out += ",mean_pred_" + std::to_string(j);
  out += "\n";
  for (auto b : {Bucket::low, Bucket::else_, Bucket::high}) {
    const auto &st = s[b];
    out += std::string(to_string(b)) + "," + std::to_string(st.count) + "," +
           text::fmt_double(st.mean_max_prob) + "," + text::fmt_double(st.mean_entropy);
    for (double v : st.mean_prediction)
      out += "," + text::fmt_double(v);
    out += "\n";
  }
  return out;
}

inline std::string correlation_disparity_csv(const CorrelationDisparity &d) {
  const std::size_t k = d.disparity.rows();
  std::string out = "# mean_off_diagonal=" + text::fmt_double(d.mean_off_diagonal) + "\nclass";
  for (std::size_t j = 0; j < k; ++j)
    out += ",c" + std::to_string(j);
  out += "\n";
  for (std::size_t a = 0; a < k; ++a) {
    out += std::to_string(a);
    for (std::size_t b = 0; b < k; ++b)
      out += "," + text::fmt_double(d.disparity(a, b));
    out += "\n";
  }
  return out;
}

/// Accumulates JSON-lines metric records (one object per line).
class MetricsLog {
public:
  void add(nlohmann::json record) { lines_ += record.dump() + "\n"; }
  const std::string &str() const noexcept { return lines_; }

private:
  std::string lines_;
};

} // namespace ekd

#endif // EKD_REPORT_HPP
