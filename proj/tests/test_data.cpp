#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "ekd/data.hpp"
#include "test_support.hpp"

using namespace ekd;

namespace {

ErrorCode decode_error(const std::vector<std::uint8_t> &bytes) {
  try {
    decode_dataset(bytes);
  } catch (const Error &e) {
    return e.code();
  }
  ADD_FAILURE() << "decode unexpectedly succeeded";
  return ErrorCode::invalid_argument;
}

Dataset tiny() {
  Dataset ds;
  ds.dim = 3;
  ds.classes = 4;
  ds.push_back(std::vector<float>{1.0f, -2.5f, 0.125f}, 0);
  ds.push_back(std::vector<float>{3.0f, 4.0f, -0.0f}, 3);
  return ds;
}

} // namespace

TEST(Blobs, ShapesAndLabelHistogram) {
  BlobParams p;
  p.classes = 4;
  p.per_class = 25;
  p.test_per_class = 10;
  p.dim = 5;
  const auto split = make_blobs_split(p);
  EXPECT_EQ(split.train.size(), 100u);
  EXPECT_EQ(split.test.size(), 40u);
  EXPECT_EQ(split.train.dim, 5u);
  EXPECT_EQ(split.train.classes, 4u);
  EXPECT_EQ(split.train.class_counts(), (std::vector<std::size_t>{25, 25, 25, 25}));
  EXPECT_EQ(split.test.class_counts(), (std::vector<std::size_t>{10, 10, 10, 10}));
}

TEST(Blobs, ZeroNoiseCollapsesClasses) {
  const auto ds = make_blobs(3, 10, 4, 3.0, 0.0, 5);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = 0; j < ds.size(); ++j) {
      const bool same = std::equal(ds.sample(i).begin(), ds.sample(i).end(), ds.sample(j).begin());
      EXPECT_EQ(same, ds.labels[i] == ds.labels[j]);
    }
}

TEST(Blobs, TrainingSplitIsStandardized) {
  const auto ds = make_blobs(6, 200, 8, 3.0, 1.0, 9);
  for (std::size_t j = 0; j < ds.dim; ++j) {
    double m = 0.0, s = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      m += ds.sample(i)[j];
    m /= static_cast<double>(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
      s += (ds.sample(i)[j] - m) * (ds.sample(i)[j] - m);
    s = std::sqrt(s / static_cast<double>(ds.size()));
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(s, 1.0, 1e-4);
  }
}

TEST(Blobs, DeterministicPerSeed) {
  EXPECT_EQ(make_blobs(4, 20, 6, 3.0, 1.0, 11), make_blobs(4, 20, 6, 3.0, 1.0, 11));
  EXPECT_NE(make_blobs(4, 20, 6, 3.0, 1.0, 11), make_blobs(4, 20, 6, 3.0, 1.0, 12));
}

TEST(Blobs, CentersRespectSeparation) {
  BlobParams p;
  p.classes = 8;
  p.dim = 6;
  p.separation = 4.0;
  const auto c = detail::blob_centers(p);
  for (std::size_t a = 0; a < c.size(); ++a)
    for (std::size_t b = a + 1; b < c.size(); ++b) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < p.dim; ++j)
        d2 += (c[a][j] - c[b][j]) * (c[a][j] - c[b][j]);
      EXPECT_GE(std::sqrt(d2), 4.0);
    }
}

TEST(Blobs, InfeasibleSeparationFails) {
  BlobParams p;
  p.classes = 200;
  p.dim = 2;
  p.per_class = 1;
  try {
    make_blobs_split(p);
    FAIL() << "expected infeasible separation";
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
    EXPECT_NE(std::string(e.what()).find("infeasible"), std::string::npos);
  }
}

TEST(LongTail, Counts) {
  EXPECT_EQ((LongTailSpec{2, 100, 0.5}.counts()), (std::vector<std::size_t>{100, 50}));
  EXPECT_EQ((LongTailSpec{5, 160, 0.5}.counts()),
            (std::vector<std::size_t>{160, 135, 113, 95, 80}));
  EXPECT_EQ((LongTailSpec{4, 30, 1.0}.counts()), (std::vector<std::size_t>{30, 30, 30, 30}));
  EXPECT_EQ((LongTailSpec{3, 10, 0.001}.counts()).back(), 1u);
  EXPECT_THROW((LongTailSpec{3, 10, 0.0}.counts()), Error);
  EXPECT_THROW((LongTailSpec{1, 10, 0.5}.counts()), Error);
}

TEST(LongTail, ProfileAndBalancedTest) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const LongTailSpec spec{2 + rng.below(8), 50 + rng.below(500), rng.uniform(0.05, 1.0)};
    const auto n = spec.counts();
    for (std::size_t k = 1; k < n.size(); ++k)
      EXPECT_LE(n[k], n[k - 1]);
    const double ratio = static_cast<double>(n.back()) / static_cast<double>(n.front());
    EXPECT_NEAR(ratio, spec.imbalance_factor, 1.0 / static_cast<double>(n.front()) + 1e-12);
  }
  BlobParams base;
  base.test_per_class = 7;
  base.dim = 4;
  const auto split = make_long_tail_split({4, 40, 0.25}, base);
  EXPECT_EQ(split.train.class_counts(), (LongTailSpec{4, 40, 0.25}.counts()));
  EXPECT_EQ(split.test.class_counts(), (std::vector<std::size_t>{7, 7, 7, 7}));
}

TEST(Ekds, RoundTripIsByteIdentical) {
  const auto ds = make_blobs(5, 30, 7, 3.0, 1.0, 21);
  const auto bytes = encode_dataset(ds);
  const auto back = decode_dataset(bytes);
  EXPECT_EQ(back, ds);
  EXPECT_EQ(encode_dataset(back), bytes);
  const auto dir = test::scratch_dir("ekds");
  save_dataset(dir / "a.ekds", ds);
  EXPECT_EQ(load_dataset(dir / "a.ekds"), ds);
  EXPECT_EQ(dataset_checksum(ds), dataset_checksum(back));
}

TEST(Ekds, HeaderLayout) {
  const auto bytes = encode_dataset(tiny());
  ASSERT_EQ(bytes.size(), 4 + 4 + 8 + 4 + 4 + 2 * 3 * 4 + 2 * 2u);
  EXPECT_EQ(std::memcmp(bytes.data(), "EKDS", 4), 0);
  EXPECT_EQ(bytes[4], 1); // version, little-endian
  EXPECT_EQ(bytes[8], 2); // N
  EXPECT_EQ(bytes[16], 3); // d
  EXPECT_EQ(bytes[20], 4); // K
}

TEST(Ekds, DecodeErrors) {
  const auto good = encode_dataset(tiny());

  auto truncated = good;
  truncated.pop_back();
  EXPECT_EQ(decode_error(truncated), ErrorCode::truncated);
  EXPECT_EQ(decode_error(std::vector<std::uint8_t>(good.begin(), good.begin() + 10)),
            ErrorCode::truncated);

  auto bad_label = good;
  bad_label[bad_label.size() - 2] = 4; // label == K
  EXPECT_EQ(decode_error(bad_label), ErrorCode::label_out_of_range);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(decode_error(bad_magic), ErrorCode::bad_magic);

  auto bad_version = good;
  bad_version[4] = 9;
  EXPECT_EQ(decode_error(bad_version), ErrorCode::unsupported_version);

  auto nan = good;
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan.data() + 24, &q, 4);
  EXPECT_EQ(decode_error(nan), ErrorCode::non_finite);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(decode_error(trailing), ErrorCode::parse);
}

TEST(Ekds, ValidateRejectsBadDatasets) {
  auto ds = tiny();
  ds.labels[0] = 4;
  EXPECT_THROW(encode_dataset(ds), Error);
  ds = tiny();
  ds.features.pop_back();
  EXPECT_THROW(encode_dataset(ds), Error);
}
