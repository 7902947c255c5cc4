#ifndef EKD_NUMCORE_HPP
#define EKD_NUMCORE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ekd/error.hpp"

namespace ekd {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Entries are finite on construction and
/// every binary operation checks shapes.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    detail::require(std::isfinite(fill), ErrorCode::non_finite,
                    "non-finite input");
  }
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    detail::require(data_.size() == rows_ * cols_, ErrorCode::shape_mismatch,
                    "matrix data size does not match shape");
    for (double v : data_)
      detail::require(std::isfinite(v), ErrorCode::non_finite,
                      "non-finite input");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double &operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  const std::vector<double> &data() const noexcept { return data_; }
  std::vector<double> &data() noexcept { return data_; }

  friend bool operator==(const Matrix &, const Matrix &) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void check_same_shape(const Matrix &a, const Matrix &b,
                             const char *what) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                  ErrorCode::shape_mismatch,
                  std::string(what) + ": shape mismatch (" +
                      std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                      " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()) + ")");
}

/// Probability vector: entries in [0,1] summing to 1 within 1e-9.
class Distribution {
public:
  explicit Distribution(Vector probs) : probs_(std::move(probs)) {
    detail::require(!probs_.empty(), ErrorCode::empty_input, "empty input");
    double sum = 0.0;
    for (double p : probs_) {
      detail::require(std::isfinite(p) && p >= 0.0 && p <= 1.0,
                      ErrorCode::invalid_argument,
                      "distribution entry outside [0,1]");
      sum += p;
    }
    detail::require(std::abs(sum - 1.0) <= 1e-9, ErrorCode::invalid_argument,
                    "distribution does not sum to 1");
  }

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  const Vector &probs() const noexcept { return probs_; }

private:
  Vector probs_;
};

namespace detail {

inline void require_finite(std::span<const double> z) {
  require(!z.empty(), ErrorCode::empty_input, "empty input");
  for (double v : z)
    require(std::isfinite(v), ErrorCode::non_finite, "non-finite input");
}

inline void require_temperature(double t) {
  require(std::isfinite(t) && t > 0.0, ErrorCode::invalid_argument,
          "invalid temperature");
}

/// log sum exp(z_j / t) with the max shifted out. No validation.
inline double lse_scaled(std::span<const double> z, double t) {
  const double m = *std::max_element(z.begin(), z.end()) / t;
  double s = 0.0;
  for (double v : z)
    s += std::exp(v / t - m);
  return m + std::log(s);
}

/// softmax(z / t) written into out. No validation.
inline void softmax_into(std::span<const double> z, double t,
                         std::span<double> out) {
  const double m = *std::max_element(z.begin(), z.end()) / t;
  double s = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    out[j] = std::exp(z[j] / t - m);
    s += out[j];
  }
  for (auto &v : out)
    v /= s;
}

/// KL(softmax(a/t) || softmax(b/t)) through log-softmax differences, which
/// keeps precision when the two distributions are close.
inline double kl_logits(std::span<const double> a, std::span<const double> b,
                        double t) {
  const double la = lse_scaled(a, t);
  const double lb = lse_scaled(b, t);
  double kl = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double log_p = a[j] / t - la;
    const double log_q = b[j] / t - lb;
    kl += std::exp(log_p) * (log_p - log_q);
  }
  return std::max(kl, 0.0);
}

} // namespace detail

/// Lowest index of the maximum entry.
inline std::size_t argmax(std::span<const double> z) {
  detail::require(!z.empty(), ErrorCode::empty_input, "empty input");
  std::size_t best = 0;
  for (std::size_t j = 1; j < z.size(); ++j)
    if (z[j] > z[best])
      best = j;
  return best;
}

inline double log_sum_exp(std::span<const double> z) {
  detail::require_finite(z);
  return detail::lse_scaled(z, 1.0);
}

inline Distribution softmax_t(std::span<const double> z, double temperature) {
  detail::require_temperature(temperature);
  detail::require_finite(z);
  Vector out(z.size());
  detail::softmax_into(z, temperature, out);
  return Distribution(std::move(out));
}

/// Sum p_j ln(p_j / q_j) with 0 ln 0 := 0.
inline double kl_div(const Distribution &p, const Distribution &q) {
  detail::require(p.size() == q.size(), ErrorCode::shape_mismatch,
                  "kl_div: length mismatch");
  double kl = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] == 0.0)
      continue;
    detail::require(q[j] > 0.0, ErrorCode::invalid_argument,
                    "kl_div: q has zero mass where p is positive");
    kl += p[j] * std::log(p[j] / q[j]);
  }
  return std::max(kl, 0.0);
}

inline double entropy(const Distribution &p) {
  double h = 0.0;
  for (double v : p.probs())
    if (v > 0.0)
      h -= v * std::log(v);
  return h;
}

/// d/dz_s KL(softmax(z_t/T) || softmax(z_s/T)) = (softmax(z_s/T) - softmax(z_t/T)) / T.
inline Vector kl_grad_wrt_student_logits(std::span<const double> z_t,
                                         std::span<const double> z_s,
                                         double temperature) {
  detail::require(z_t.size() == z_s.size(), ErrorCode::shape_mismatch,
                  "kl_grad: length mismatch");
  detail::require_temperature(temperature);
  detail::require_finite(z_t);
  detail::require_finite(z_s);
  Vector p(z_t.size()), q(z_s.size());
  detail::softmax_into(z_t, temperature, p);
  detail::softmax_into(z_s, temperature, q);
  for (std::size_t j = 0; j < q.size(); ++j)
    q[j] = (q[j] - p[j]) / temperature;
  return q;
}

namespace detail {
inline void require_label(std::size_t label, std::size_t k) {
  require(label < k, ErrorCode::label_out_of_range,
          "label " + std::to_string(label) + " out of range for " +
              std::to_string(k) + " classes");
}
} // namespace detail

inline double cross_entropy(std::span<const double> z, std::size_t label) {
  detail::require_finite(z);
  detail::require_label(label, z.size());
  return detail::lse_scaled(z, 1.0) - z[label];
}

/// Gradient of cross_entropy w.r.t. z: softmax(z) - onehot(label).
inline Vector cross_entropy_grad(std::span<const double> z, std::size_t label) {
  detail::require_finite(z);
  detail::require_label(label, z.size());
  Vector g(z.size());
  detail::softmax_into(z, 1.0, g);
  g[label] -= 1.0;
  return g;
}

/// Cross-entropy against a soft target (mixed labels from augmentation):
/// -sum_j w_j log softmax(z)_j. Gradient is softmax(z) - w.
inline double cross_entropy_soft(std::span<const double> z,
                                 std::span<const double> target) {
  detail::require(z.size() == target.size(), ErrorCode::shape_mismatch,
                  "cross_entropy_soft: length mismatch");
  detail::require_finite(z);
  const double lse = detail::lse_scaled(z, 1.0);
  double loss = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j)
    if (target[j] != 0.0)
      loss += target[j] * (lse - z[j]);
  return loss;
}

} // namespace ekd

#endif // EKD_NUMCORE_HPP
