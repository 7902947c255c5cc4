#ifndef EKD_KDLOSS_HPP
#define EKD_KDLOSS_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ekd/common.hpp"
#include "ekd/numcore.hpp"

namespace ekd {

enum class PolicyMode { constant, energy_two_sided, gradation };

inline std::string_view to_string(PolicyMode m) {
  switch (m) {
  case PolicyMode::constant: return "constant";
  case PolicyMode::energy_two_sided: return "energy";
  case PolicyMode::gradation: return "gradation";
  }
  return "?";
}

inline PolicyMode parse_policy_mode(std::string_view s) {
  if (s == "constant") return PolicyMode::constant;
  if (s == "energy") return PolicyMode::energy_two_sided;
  if (s == "gradation") return PolicyMode::gradation;
  detail::fail(ErrorCode::parse, "unknown policy '" + std::string(s) +
                                     "' (expected constant|energy|gradation)");
}

/// How a per-sample distillation temperature is chosen.
///
/// - constant: every sample uses base_t.
/// - energy_two_sided: LOW samples use base_t + t_plus (softer targets for
///   confident samples), HIGH samples use base_t + t_minus (sharper targets
///   for uncertain ones), ELSE samples use base_t.
/// - gradation: the energy ranking is cut into `segments` contiguous pieces
///   and piece s gets t_min + s (t_max - t_min) / (segments - 1).
struct TemperaturePolicy {
  PolicyMode mode = PolicyMode::energy_two_sided;
  double base_t = 4.0;
  int t_plus = 2;
  int t_minus = -2;
  std::size_t segments = 10;
  double t_min = 2.0;
  double t_max = 6.0;

  void validate() const {
    detail::require(std::isfinite(base_t) && base_t > 0.0,
                    ErrorCode::invalid_argument, "base_t must be > 0");
    detail::require(t_plus >= 0, ErrorCode::invalid_argument,
                    "t_plus must be a non-negative integer");
    detail::require(t_minus <= 0, ErrorCode::invalid_argument,
                    "t_minus must be a non-positive integer");
    if (mode == PolicyMode::energy_two_sided)
      detail::require(base_t + t_minus > 0.0, ErrorCode::invalid_argument,
                      "base_t + t_minus must stay positive");
    if (mode == PolicyMode::gradation) {
      detail::require(segments >= 2, ErrorCode::invalid_argument,
                      "gradation needs at least 2 segments");
      detail::require(std::isfinite(t_min) && std::isfinite(t_max) &&
                          t_min > 0.0 && t_min <= t_max,
                      ErrorCode::invalid_argument,
                      "gradation needs 0 < t_min <= t_max");
    }
  }

  /// Compact descriptor recorded in manifest headers.
  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    os << to_string(mode) << ":base_t=" << base_t;
    if (mode == PolicyMode::energy_two_sided)
      os << ":t_plus=" << t_plus << ":t_minus=" << t_minus;
    if (mode == PolicyMode::gradation)
      os << ":segments=" << segments << ":t_min=" << t_min << ":t_max=" << t_max;
    return os.str();
  }
};

/// Gradation segment index for a 1-based rank among n samples.
inline std::size_t gradation_segment(std::size_t rank, std::size_t n,
                                     std::size_t segments) {
  const std::size_t s = (rank - 1) * segments / n;
  return std::min(segments - 1, s);
}

inline double assign_temperature(Bucket bucket, std::size_t rank, std::size_t n,
                                 const TemperaturePolicy &policy) {
  policy.validate();
  detail::require(rank >= 1 && rank <= n, ErrorCode::invalid_argument,
                  "rank must be in [1, N]");
  double t = policy.base_t;
  switch (policy.mode) {
  case PolicyMode::constant:
    break;
  case PolicyMode::energy_two_sided:
    if (bucket == Bucket::low)
      t = policy.base_t + policy.t_plus;
    else if (bucket == Bucket::high)
      t = policy.base_t + policy.t_minus;
    break;
  case PolicyMode::gradation: {
    const auto s = gradation_segment(rank, n, policy.segments);
    t = policy.t_min + static_cast<double>(s) * (policy.t_max - policy.t_min) /
                           static_cast<double>(policy.segments - 1);
    break;
  }
  }
  detail::require(t > 0.0, ErrorCode::invalid_argument,
                  "assigned temperature must be positive");
  return t;
}

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

/// T^2 * KL(softmax(z_t/T) || softmax(z_s/T)) and its gradient in z_s.
/// With t_squared_scaling off the raw KL is returned.
inline LossGrad kd_loss_constant(std::span<const double> z_t,
                                 std::span<const double> z_s, double temperature,
                                 bool t_squared_scaling = true) {
  LossGrad out;
  out.grad = kl_grad_wrt_student_logits(z_t, z_s, temperature);
  const double scale = t_squared_scaling ? temperature * temperature : 1.0;
  out.loss = scale * detail::kl_logits(z_t, z_s, temperature);
  for (auto &g : out.grad)
    g *= scale;
  return out;
}

struct DistillLossBatch {
  std::vector<double> losses;
  std::vector<double> temperatures;
  double mean = 0.0;
  /// Gradient of `mean` w.r.t. the student logits.
  Matrix grad;
};

/// Per-sample distillation loss where row i is evaluated at temperatures[i].
/// The mean is a sequential sum in row order divided by N.
inline DistillLossBatch energy_kd_loss(const Matrix &z_t, const Matrix &z_s,
                                       std::span<const double> temperatures,
                                       bool t_squared_scaling = true) {
  check_same_shape(z_t, z_s, "energy_kd_loss");
  detail::require(temperatures.size() == z_t.rows(), ErrorCode::shape_mismatch,
                  "energy_kd_loss: one temperature per sample required");
  detail::require(z_t.rows() > 0, ErrorCode::empty_input, "empty input");
  const std::size_t n = z_t.rows();
  DistillLossBatch out;
  out.losses.resize(n);
  out.temperatures.assign(temperatures.begin(), temperatures.end());
  out.grad = Matrix(n, z_t.cols());
  const double inv_n = 1.0 / static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto lg = kd_loss_constant(z_t.row(i), z_s.row(i), temperatures[i],
                               t_squared_scaling);
    out.losses[i] = lg.loss;
    sum += lg.loss;
    auto g = out.grad.row(i);
    for (std::size_t j = 0; j < g.size(); ++j)
      g[j] = lg.grad[j] * inv_n;
  }
  out.mean = sum * inv_n;
  return out;
}

struct ObjectiveResult {
  double loss = 0.0;
  double ce_mean = 0.0;
  double kd_mean = 0.0;
  /// Gradient of `loss` w.r.t. the student logits.
  Matrix grad;
};

/// (1 - alpha) * mean cross-entropy + alpha * mean distillation loss.
/// Labels may be mixtures (augmented samples); the cross-entropy term is then
/// lambda * CE(a) + (1 - lambda) * CE(b).
inline ObjectiveResult total_objective(const Matrix &z_t, const Matrix &z_s,
                                       std::span<const LabelMix> labels,
                                       std::span<const double> temperatures,
                                       double alpha,
                                       bool t_squared_scaling = true) {
  detail::require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::invalid_argument,
                  "alpha must be in [0, 1]");
  detail::require(labels.size() == z_s.rows(), ErrorCode::shape_mismatch,
                  "total_objective: one label per sample required");
  auto kd = energy_kd_loss(z_t, z_s, temperatures, t_squared_scaling);
  const std::size_t n = z_s.rows();
  const std::size_t k = z_s.cols();
  const double inv_n = 1.0 / static_cast<double>(n);

  ObjectiveResult out;
  out.kd_mean = kd.mean;
  out.grad = Matrix(n, k);
  std::vector<double> p(k);
  double ce_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = z_s.row(i);
    const auto &lab = labels[i];
    detail::require_label(lab.a, k);
    detail::require_label(lab.b, k);
    const double lse = detail::lse_scaled(z, 1.0);
    ce_sum += lab.lambda * (lse - z[lab.a]) + (1.0 - lab.lambda) * (lse - z[lab.b]);
    detail::softmax_into(z, 1.0, p);
    p[lab.a] -= lab.lambda;
    p[lab.b] -= 1.0 - lab.lambda;
    auto g = out.grad.row(i);
    const auto gk = kd.grad.row(i);
    for (std::size_t j = 0; j < k; ++j)
      g[j] = (1.0 - alpha) * p[j] * inv_n + alpha * gk[j];
  }
  out.ce_mean = ce_sum * inv_n;
  out.loss = (1.0 - alpha) * out.ce_mean + alpha * out.kd_mean;
  return out;
}

inline ObjectiveResult total_objective(const Matrix &z_t, const Matrix &z_s,
                                       std::span<const std::size_t> labels,
                                       std::span<const double> temperatures,
                                       double alpha,
                                       bool t_squared_scaling = true) {
  std::vector<LabelMix> mixes;
  mixes.reserve(labels.size());
  for (auto l : labels) {
    detail::require_label(l, z_s.cols());
    mixes.push_back(LabelMix::hard(static_cast<std::uint16_t>(l)));
  }
  return total_objective(z_t, z_s, mixes, temperatures, alpha, t_squared_scaling);
}

} // namespace ekd

#endif // EKD_KDLOSS_HPP
