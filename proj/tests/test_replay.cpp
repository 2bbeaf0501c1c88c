#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "uda/replay.hpp"

using namespace uda;

namespace {

// Row i holds (i, label); class c has `per_class[c]` rows.
LabeledSet tagged_set(const std::vector<std::size_t>& per_class) {
  std::size_t n = 0;
  for (std::size_t k : per_class) n += k;
  LabeledSet s{Tensor::zeros({n, 2}), {}, per_class.size(), "source", Split::train};
  std::size_t r = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    for (std::size_t i = 0; i < per_class[c]; ++i, ++r) {
      s.x.at(r, 0) = static_cast<double>(r);
      s.x.at(r, 1) = static_cast<double>(c);
      s.y.push_back(c);
    }
  }
  return s;
}

double chi_squared(const std::vector<std::size_t>& counts, double expected) {
  double x = 0.0;
  for (std::size_t c : counts) x += (c - expected) * (c - expected) / expected;
  return x;
}

}  // namespace

TEST(SampleMemory, SizesLabelsAndNoDuplicates) {
  const auto s = tagged_set({30, 25, 40});
  const auto m = sample_memory(s, 8, 7);
  EXPECT_EQ(m.classes(), 3u);
  EXPECT_EQ(m.size(), 24u);
  EXPECT_TRUE(m.shortfalls().empty());
  for (std::size_t c = 0; c < 3; ++c) {
    std::set<double> ids;
    for (std::size_t r = 0; r < m.items(c).rows(); ++r) {
      EXPECT_EQ(m.items(c).at(r, 1), static_cast<double>(c));
      ids.insert(m.items(c).at(r, 0));
    }
    EXPECT_EQ(ids.size(), 8u);
  }
  const auto labels = m.labels();
  const Tensor flat = m.inputs();
  for (std::size_t i = 0; i < labels.size(); ++i) EXPECT_EQ(flat.at(i, 1), static_cast<double>(labels[i]));
}

TEST(SampleMemory, UniformWithinClass) {
  // 10k single draws from a 10-row class; chi-squared with 9 dof, p = 0.001 cut.
  const auto s = tagged_set({10, 3});
  std::vector<std::size_t> counts(10, 0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto m = sample_memory(s, 1, seed);
    ++counts[static_cast<std::size_t>(m.items(0).at(0, 0))];
  }
  EXPECT_LT(chi_squared(counts, 1000.0), 27.88);
}

TEST(SampleMemory, ShortfallRecorded) {
  const auto s = tagged_set({5, 20});
  const auto m = sample_memory(s, 8, 1);
  EXPECT_EQ(m.items(0).rows(), 5u);
  EXPECT_EQ(m.items(1).rows(), 8u);
  ASSERT_EQ(m.shortfalls().size(), 1u);
  EXPECT_EQ(m.shortfalls()[0], (std::pair<std::size_t, std::size_t>{0, 3}));
}

TEST(SampleMemory, EmptyClassAndZeroCapacity) {
  const auto s = tagged_set({0, 6});
  const auto m = sample_memory(s, 4, 1);
  EXPECT_EQ(m.items(0).rows(), 0u);
  EXPECT_EQ(m.size(), 4u);
  EXPECT_THROW(sample_memory(s, 0, 1), ContractError);
}

TEST(SampleMemory, SeedDeterminism) {
  const auto s = tagged_set({30, 30});
  EXPECT_EQ(sample_memory(s, 8, 3).checksum(), sample_memory(s, 8, 3).checksum());
  EXPECT_NE(sample_memory(s, 8, 3).checksum(), sample_memory(s, 8, 4).checksum());
}

TEST(JointBatch, ShapesAndReplacementUniformity) {
  const auto s = tagged_set({4, 4});
  const auto m = sample_memory(s, 4, 2);
  const UnlabeledSet t{Tensor::zeros({50, 2}), "target", Split::train};
  TargetSampler sampler(t.size());
  std::mt19937_64 rng(9);
  std::map<double, std::size_t> hits;
  for (int i = 0; i < 1250; ++i) {
    const auto b = draw_joint_minibatch(m, t, sampler, 8, rng);
    ASSERT_EQ(b.xs.rows(), 8u);
    ASSERT_EQ(b.xt.rows(), 8u);
    for (std::size_t r = 0; r < 8; ++r) {
      EXPECT_EQ(b.xs.at(r, 1), static_cast<double>(b.ys[r]));
      ++hits[b.xs.at(r, 0)];
    }
  }
  ASSERT_EQ(hits.size(), 8u);
  std::vector<std::size_t> counts;
  for (const auto& [id, n] : hits) counts.push_back(n);
  EXPECT_LT(chi_squared(counts, 1250.0), 24.32);  // 7 dof, p = 0.001
}

TEST(JointBatch, EmptyMemoryRejected) {
  const MemoryBuffer m(4, 2, 2);
  const UnlabeledSet t{Tensor::zeros({10, 2}), "target", Split::train};
  TargetSampler sampler(t.size());
  std::mt19937_64 rng(1);
  EXPECT_THROW(draw_joint_minibatch(m, t, sampler, 4, rng), ContractError);
}

TEST(TargetSampler, EachEpochIsAPermutation) {
  TargetSampler sampler(12);
  std::mt19937_64 rng(4);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::set<std::size_t> seen;
    for (int i = 0; i < 3; ++i) {
      for (std::size_t r : sampler.next(4, rng)) seen.insert(r);
    }
    EXPECT_EQ(seen.size(), 12u);
  }
  EXPECT_EQ(sampler.epoch(), 3u);
  EXPECT_THROW(sampler.next(13, rng), ContractError);
}

TEST(MemoryExport, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "uda_replay_test";
  std::filesystem::create_directories(dir);
  const auto s = tagged_set({3, 12, 9});
  const auto m = sample_memory(s, 6, 11);
  export_memory(m, dir / "mem");
  const auto back = import_memory(dir / "mem");
  EXPECT_EQ(back.checksum(), m.checksum());
  EXPECT_EQ(back.capacity(), 6u);
  EXPECT_EQ(back.classes(), 3u);
  EXPECT_EQ(back.labels(), m.labels());
  EXPECT_EQ(back.shortfalls(), m.shortfalls());
  std::filesystem::remove_all(dir);
}

TEST(MemoryExport, MissingFilesAreFormatErrors) {
  EXPECT_THROW(import_memory(std::filesystem::temp_directory_path() / "uda_no_such_memory"), FormatError);
}
