#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "fedpriv/data.hpp"
#include "fedpriv/errors.hpp"
#include "test_util.hpp"

using namespace fedpriv;

namespace {

// Rows as (features, label) tuples for multiset comparison.
std::vector<std::pair<std::vector<double>, std::uint32_t>> rows_of(const Dataset& d) {
  std::vector<std::pair<std::vector<double>, std::uint32_t>> out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto r = d.row(i);
    out.emplace_back(std::vector<double>(r.begin(), r.end()), d.labels[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset merge(const std::vector<Dataset>& shards) {
  Dataset all{shards.front().dim, shards.front().num_classes, {}, {}};
  for (const auto& s : shards) {
    for (std::size_t i = 0; i < s.size(); ++i) all.push_back(s.row(i), s.labels[i]);
  }
  return all;
}

}  // namespace

TEST(Synthetic, DeterministicAndBalanced) {
  const SyntheticSpec spec{100, 3, 2, 3.0, 1.0};
  EXPECT_EQ(gen_synthetic(spec, 4), gen_synthetic(spec, 4));
  EXPECT_NE(gen_synthetic(spec, 4), gen_synthetic(spec, 5));
  const Dataset d = gen_synthetic(spec, 4);
  EXPECT_EQ(std::count(d.labels.begin(), d.labels.end(), 0u), 50);
  for (std::size_t classes = 2; classes <= 13; ++classes) {
    const Dataset e = gen_synthetic({97, 5, classes, 2.0, 1.0}, classes);
    std::map<std::uint32_t, int> counts;
    for (auto y : e.labels) ++counts[y];
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end(),
                                              [](auto& a, auto& b) { return a.second < b.second; });
    EXPECT_LE(hi->second - lo->second, 1);
    EXPECT_EQ(counts.size(), classes);
  }
  EXPECT_THROW(gen_synthetic({10, 2, 1, 3.0, 1.0}, 1), ParameterError);
}

TEST(Synthetic, NoiselessWellSeparatedClustersAreLinearlySeparable) {
  const Dataset d = gen_synthetic({200, 4, 3, 10.0, 0.0}, 1);
  const EncoderConfig cfg{{4, 3}, {}};
  ParamVector p = ParamVector::zeros(cfg);
  p += local_train(d, p, cfg, {30, 16, 0.1, std::nullopt, 1}).delta;
  EXPECT_EQ(evaluate(p, cfg, d).accuracy, 1.0);
}

TEST(Partition, SingleClientGetsEverything) {
  const Dataset d = gen_synthetic({50, 2, 2, 3.0, 1.0}, 1);
  const auto shards = partition(d, {PartitionKind::kDirichlet, 0.3, 1}, 2);
  ASSERT_EQ(shards.size(), 1u);
  EXPECT_EQ(shards[0], d);
}

TEST(Partition, ConservationForAllSpecs) {
  const Dataset d = gen_synthetic({300, 3, 4, 3.0, 1.0}, 3);
  for (PartitionKind kind : {PartitionKind::kIid, PartitionKind::kDirichlet}) {
    for (double alpha : {0.05, 0.3, 5.0}) {
      for (std::size_t k : {2u, 7u, 30u}) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
          const auto shards = partition(d, {kind, alpha, k}, seed);
          ASSERT_EQ(shards.size(), k);
          for (const auto& s : shards) EXPECT_FALSE(s.empty());
          EXPECT_EQ(rows_of(merge(shards)), rows_of(d));
        }
      }
    }
  }
  EXPECT_THROW(partition(d, {PartitionKind::kIid, 0.3, 301}, 0), ParameterError);
}

TEST(Partition, LowAlphaProducesSkew) {
  const Dataset d = gen_synthetic({1000, 2, 2, 3.0, 1.0}, 4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto shards = partition(d, {PartitionKind::kDirichlet, 0.1, 10}, seed);
    bool skewed = false;
    for (const auto& s : shards) {
      const auto ones = std::count(s.labels.begin(), s.labels.end(), 1u);
      const double frac = static_cast<double>(ones) / static_cast<double>(s.size());
      skewed = skewed || frac > 0.8 || frac < 0.2;
    }
    EXPECT_TRUE(skewed) << "seed " << seed;
  }
}

TEST(Split, HoldsOutRequestedFraction) {
  const Dataset d = gen_synthetic({500, 2, 2, 3.0, 1.0}, 5);
  const Split s = train_test_split(d, 0.2, 1);
  EXPECT_EQ(s.test.size(), 100u);
  EXPECT_EQ(s.train.size(), 400u);
  Dataset both = s.train;
  for (std::size_t i = 0; i < s.test.size(); ++i) both.push_back(s.test.row(i), s.test.labels[i]);
  EXPECT_EQ(rows_of(both), rows_of(d));
}

class IdxTest : public ::testing::Test {
 protected:
  std::filesystem::path dir = testkit::scratch_dir("idx");
  std::filesystem::path images = dir / "images.idx";
  std::filesystem::path labels = dir / "labels.idx";
};

TEST_F(IdxTest, HandCraftedFile) {
  std::vector<std::uint8_t> img;
  testkit::put_be32(img, 0x00000803);
  testkit::put_be32(img, 1);
  testkit::put_be32(img, 2);
  testkit::put_be32(img, 2);
  for (std::uint8_t px : {0, 255, 128, 64}) img.push_back(px);
  std::vector<std::uint8_t> lab;
  testkit::put_be32(lab, 0x00000801);
  testkit::put_be32(lab, 1);
  lab.push_back(7);
  testkit::write_bytes(images, img);
  testkit::write_bytes(labels, lab);
  const Dataset d = load_idx(images, labels);
  EXPECT_EQ(d.dim, 4u);
  EXPECT_EQ(d.features, (std::vector<double>{0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0}));
  EXPECT_EQ(d.labels, (std::vector<std::uint32_t>{7}));
  EXPECT_EQ(d.num_classes, 8u);
}

TEST_F(IdxTest, WriterRoundTrip) {
  Dataset d{6, 10, {}, {}};
  std::mt19937_64 rng(6);
  for (int i = 0; i < 25; ++i) {
    std::vector<double> x(6);
    for (double& v : x) v = static_cast<double>(rng() % 256) / 255.0;
    d.push_back(x, static_cast<std::uint32_t>(i % 10));
  }
  testkit::write_idx(images, labels, d, 2, 3);
  EXPECT_EQ(load_idx(images, labels), d);
}

TEST_F(IdxTest, RejectsMalformedFiles) {
  Dataset d{4, 2, {0, 1, 0, 1, 1, 0, 1, 0}, {0, 1}};
  testkit::write_idx(images, labels, d, 2, 2);
  const std::vector<std::uint8_t> good_img = [&] {
    std::ifstream in(images, std::ios::binary);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
  }();

  auto bad_magic = good_img;
  bad_magic[3] = 0x02;
  testkit::write_bytes(images, bad_magic);
  EXPECT_THROW(load_idx(images, labels), FormatError);

  auto truncated = good_img;
  truncated.pop_back();
  testkit::write_bytes(images, truncated);
  EXPECT_THROW(load_idx(images, labels), FormatError);

  testkit::write_bytes(images, good_img);
  std::vector<std::uint8_t> lab;
  testkit::put_be32(lab, 0x00000801);
  testkit::put_be32(lab, 3);
  for (int i = 0; i < 3; ++i) lab.push_back(0);
  testkit::write_bytes(labels, lab);
  EXPECT_THROW(load_idx(images, labels), FormatError);

  EXPECT_THROW(load_idx(dir / "missing", labels), FormatError);
}
