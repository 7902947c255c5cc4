#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "ekd/numcore.hpp"
#include "test_support.hpp"

using namespace ekd;
using ekd::test::finite_diff;
using ekd::test::max_rel_err;

namespace {

// Frozen from a 50-digit mpmath evaluation.
constexpr double kLseExample = 2.4643687841079448;
constexpr double kSigmoid1 = 0.7310585786300049;
constexpr double kKlQuarter = 0.13081203594113696;
constexpr double kCeTen = 4.5398899216864647e-05;

ErrorCode code_of(auto &&fn) {
  try {
    fn();
  } catch (const Error &e) {
    return e.code();
  }
  ADD_FAILURE() << "expected ekd::Error";
  return ErrorCode::invalid_argument;
}

} // namespace

TEST(LogSumExp, Examples) {
  EXPECT_NEAR(log_sum_exp(std::vector<double>{0, 0, 0, 0}), std::log(4.0), 1e-12);
  EXPECT_NEAR(log_sum_exp(std::vector<double>{1000, 0}), 1000.0, 1e-12);
  EXPECT_NEAR(log_sum_exp(std::vector<double>{2, 1, 0.5}), kLseExample, 1e-12);
  EXPECT_NEAR(log_sum_exp(std::vector<double>{-1000, -1000}), -1000.0 + std::log(2.0), 1e-9);
}

TEST(LogSumExp, Errors) {
  EXPECT_EQ(code_of([] { log_sum_exp(std::vector<double>{}); }), ErrorCode::empty_input);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_EQ(code_of([&] { log_sum_exp(std::vector<double>{1, nan}); }), ErrorCode::non_finite);
  EXPECT_EQ(code_of([&] { log_sum_exp(std::vector<double>{inf, 0}); }), ErrorCode::non_finite);
}

TEST(LogSumExp, MatchesExtendedPrecisionAndShift) {
  Rng rng(101);
  for (int i = 0; i < 500; ++i) {
    const auto z = test::random_vector(rng, 2 + rng.below(9), 5.0);
    const double lse = log_sum_exp(z);
    EXPECT_NEAR(lse, static_cast<double>(test::lse_direct(z)), 1e-12 * std::max(1.0, std::abs(lse)));
    const double c = rng.uniform(-50, 50);
    auto shifted = z;
    for (auto &v : shifted)
      v += c;
    EXPECT_NEAR(log_sum_exp(shifted), lse + c, 1e-10 * std::max(1.0, std::abs(lse + c)));
  }
}

TEST(Softmax, Examples) {
  for (double t : {0.1, 1.0, 7.0}) {
    const auto p = softmax_t(std::vector<double>{0, 0}, t);
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[1], 0.5);
  }
  const auto q = softmax_t(std::vector<double>{std::log(3.0), 0}, 1.0);
  EXPECT_NEAR(q[0], 0.75, 1e-12);
  EXPECT_NEAR(q[1], 0.25, 1e-12);
  const auto s = softmax_t(std::vector<double>{2, 0}, 2.0);
  EXPECT_NEAR(s[0], kSigmoid1, 1e-12);
  EXPECT_NEAR(s[1], 1.0 - kSigmoid1, 1e-12);
}

TEST(Softmax, RejectsBadTemperature) {
  EXPECT_EQ(code_of([] { softmax_t(std::vector<double>{1, 2}, 0.0); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { softmax_t(std::vector<double>{1, 2}, -1.0); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { softmax_t(std::vector<double>{}, 1.0); }), ErrorCode::empty_input);
}

TEST(Softmax, Properties) {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.below(12);
    const auto z = test::random_vector(rng, k, 4.0);
    const double t = rng.uniform(0.2, 8.0);
    const auto p = softmax_t(z, t);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      EXPECT_GE(p[j], 0.0);
      sum += p[j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_EQ(argmax(p.probs()), argmax(z));
    const auto ref = test::softmax_direct(z, t);
    for (std::size_t j = 0; j < k; ++j)
      EXPECT_NEAR(p[j], ref[j], 1e-13);
    auto shifted = z;
    const double c = rng.uniform(-100, 100);
    for (auto &v : shifted)
      v += c;
    const auto ps = softmax_t(shifted, t);
    for (std::size_t j = 0; j < k; ++j)
      EXPECT_NEAR(ps[j], p[j], 1e-12);
  }
}

TEST(Softmax, EntropyGrowsWithTemperature) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto z = test::random_vector(rng, 5, 2.0);
    double prev = -1.0;
    for (double t = 0.5; t <= 16.0; t *= 2.0) {
      const double h = entropy(softmax_t(z, t));
      EXPECT_GE(h, prev - 1e-12);
      prev = h;
    }
  }
}

TEST(Argmax, LowestIndexOnTies) {
  EXPECT_EQ(argmax(std::vector<double>{1, 3, 3, 2}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{5, 5}), 0u);
  EXPECT_EQ(code_of([] { argmax(std::vector<double>{}); }), ErrorCode::empty_input);
}

TEST(Distribution, Validates) {
  EXPECT_NO_THROW(Distribution({0.25, 0.75}));
  EXPECT_EQ(code_of([] { Distribution({0.5, 0.6}); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { Distribution({-0.1, 1.1}); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { Distribution({}); }), ErrorCode::empty_input);
}

TEST(KlDiv, Examples) {
  const Distribution half({0.5, 0.5});
  EXPECT_EQ(kl_div(half, half), 0.0);
  EXPECT_NEAR(kl_div(Distribution({0.75, 0.25}), half), kKlQuarter, 1e-12);
  EXPECT_NEAR(kl_div(Distribution({1.0, 0.0}), half), std::log(2.0), 1e-12);
  EXPECT_EQ(code_of([&] { kl_div(half, Distribution({0.2, 0.3, 0.5})); }), ErrorCode::shape_mismatch);
}

TEST(KlDiv, NonNegativeAndMatchesOracle) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.below(8);
    const auto p = softmax_t(test::random_vector(rng, k, 3.0), 1.0);
    const auto q = softmax_t(test::random_vector(rng, k, 3.0), 1.0);
    const double kl = kl_div(p, q);
    EXPECT_GE(kl, 0.0);
    EXPECT_NEAR(kl, test::kl_direct(p.probs(), q.probs()), 1e-12);
  }
}

TEST(KlGrad, ZeroAtEquality) {
  Rng rng(5);
  const auto z = test::random_vector(rng, 6, 2.0);
  for (double g : kl_grad_wrt_student_logits(z, z, 3.0))
    EXPECT_EQ(g, 0.0);
}

TEST(KlGrad, MatchesFiniteDifferences) {
  Rng rng(17);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t k = 2 + rng.below(9);
    const auto zt = test::random_vector(rng, k, 2.0);
    const auto zs = test::random_vector(rng, k, 2.0);
    const double t = rng.uniform(0.5, 6.0);
    const auto analytic = kl_grad_wrt_student_logits(zt, zs, t);
    const auto numeric = finite_diff(
        [&](const std::vector<double> &x) {
          return kl_div(softmax_t(zt, t), softmax_t(x, t));
        },
        zs);
    worst = std::max(worst, max_rel_err(analytic, numeric));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(KlGrad, TemperatureScaling) {
  // For equal-magnitude logit gaps at large T the gradient shrinks like 1/T^2;
  // at fixed probabilities doubling T halves it exactly.
  Rng rng(23);
  const auto zt = test::random_vector(rng, 5, 1.0);
  const auto zs = test::random_vector(rng, 5, 1.0);
  auto zt2 = zt, zs2 = zs;
  for (auto &v : zt2)
    v *= 2.0;
  for (auto &v : zs2)
    v *= 2.0;
  const auto g1 = kl_grad_wrt_student_logits(zt, zs, 1.5);
  const auto g2 = kl_grad_wrt_student_logits(zt2, zs2, 3.0);
  for (std::size_t j = 0; j < g1.size(); ++j)
    EXPECT_NEAR(g2[j], 0.5 * g1[j], 1e-14);
}

TEST(CrossEntropy, Examples) {
  EXPECT_NEAR(cross_entropy(std::vector<double>{0, 0}, 0), std::log(2.0), 1e-12);
  EXPECT_NEAR(cross_entropy(std::vector<double>{10, 0}, 0), kCeTen, 1e-14);
  EXPECT_EQ(code_of([] { cross_entropy(std::vector<double>{0, 0}, 2); }),
            ErrorCode::label_out_of_range);
}

TEST(CrossEntropy, GradMatchesFiniteDifferences) {
  Rng rng(29);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t k = 2 + rng.below(9);
    const auto z = test::random_vector(rng, k, 3.0);
    const std::size_t y = rng.below(k);
    const auto analytic = cross_entropy_grad(z, y);
    const auto numeric =
        finite_diff([&](const std::vector<double> &x) { return cross_entropy(x, y); }, z);
    worst = std::max(worst, max_rel_err(analytic, numeric));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(CrossEntropy, SoftTargetReducesToHard) {
  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    const auto z = test::random_vector(rng, 4, 2.0);
    const std::size_t y = rng.below(4);
    std::vector<double> onehot(4, 0.0);
    onehot[y] = 1.0;
    EXPECT_NEAR(cross_entropy_soft(z, onehot), cross_entropy(z, y), 1e-14);
  }
}

TEST(Matrix, RejectsNonFiniteAndBadShape) {
  EXPECT_EQ(code_of([] { Matrix(1, 2, std::vector<double>{1.0, NAN}); }), ErrorCode::non_finite);
  EXPECT_EQ(code_of([] { Matrix(2, 2, std::vector<double>{1.0}); }), ErrorCode::shape_mismatch);
  EXPECT_EQ(code_of([] { check_same_shape(Matrix(2, 3), Matrix(3, 2), "x"); }),
            ErrorCode::shape_mismatch);
}
