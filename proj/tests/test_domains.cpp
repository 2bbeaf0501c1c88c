#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "uda/domains.hpp"

using namespace uda;

namespace {

void put_be32(std::string& s, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xff));
}

// count images of rows x cols; pixel k of image i is (i * 7 + k) % 256.
std::string idx_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols) {
  std::string s;
  put_be32(s, 0x00000803);
  put_be32(s, count);
  put_be32(s, rows);
  put_be32(s, cols);
  for (std::uint32_t i = 0; i < count; ++i) {
    for (std::uint32_t k = 0; k < rows * cols; ++k) s.push_back(static_cast<char>((i * 7 + k) % 256));
  }
  return s;
}

std::string idx_labels(const std::vector<unsigned char>& labels) {
  std::string s;
  put_be32(s, 0x00000801);
  put_be32(s, static_cast<std::uint32_t>(labels.size()));
  for (unsigned char c : labels) s.push_back(static_cast<char>(c));
  return s;
}

LabeledSet load(const std::string& img, const std::string& lab, const IdxOptions& opt = {}) {
  std::istringstream a(img), b(lab);
  return load_idx(a, b, opt);
}

// Leave-one-out k-NN accuracy at telling two samples apart.
double two_sample_accuracy(const Tensor& a, const Tensor& b, std::size_t k) {
  const std::size_t n = a.rows() + b.rows();
  auto point = [&](std::size_t i) { return i < a.rows() ? a.row(i) : b.row(i - a.rows()); };
  std::size_t hit = 0;
  std::vector<std::pair<double, bool>> d(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = point(i);
    std::size_t w = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto q = point(j);
      double s = 0.0;
      for (std::size_t c = 0; c < p.size(); ++c) s += (p[c] - q[c]) * (p[c] - q[c]);
      d[w++] = {s, j < a.rows()};
    }
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    std::size_t votes_a = 0;
    for (std::size_t j = 0; j < k; ++j) votes_a += d[j].second;
    hit += ((2 * votes_a > k) == (i < a.rows()));
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

}  // namespace

TEST(TwoMoons, ShapesLabelsAndBalance) {
  auto [s, t] = gen_two_moons(1000, 0.1, 30, 1);
  EXPECT_EQ(s.x.rows(), 1000u);
  EXPECT_EQ(t.x.cols(), 2u);
  s.validate();
  t.validate();
  EXPECT_EQ(std::count(s.y.begin(), s.y.end(), 0u), 500);
  EXPECT_EQ(s.domain, "source");
  EXPECT_EQ(t.domain, "target");
}

TEST(TwoMoons, SeedDeterminism) {
  auto [a, at] = gen_two_moons(100, 0.1, 30, 5);
  auto [b, bt] = gen_two_moons(100, 0.1, 30, 5);
  auto [c, ct] = gen_two_moons(100, 0.1, 30, 6);
  EXPECT_EQ(fnv1a(a.x.data()), fnv1a(b.x.data()));
  EXPECT_EQ(fnv1a(at.x.data()), fnv1a(bt.x.data()));
  EXPECT_NE(fnv1a(a.x.data()), fnv1a(c.x.data()));
}

TEST(TwoMoons, PreconditionsChecked) {
  EXPECT_THROW(gen_two_moons(3, 0.1, 0, 1), ContractError);
  EXPECT_THROW(gen_two_moons(10, -0.1, 0, 1), ContractError);
}

TEST(TwoMoons, ZeroRotationIsIndistinguishable) {
  auto [s, t] = gen_two_moons(1000, 0.1, 0, 3);
  const double acc = two_sample_accuracy(s.x, t.x, 15);
  EXPECT_NEAR(acc, 0.5, 0.05);
}

TEST(TwoMoons, LargeRotationIsDistinguishable) {
  auto [s, t] = gen_two_moons(1000, 0.1, 90, 3);
  EXPECT_GT(two_sample_accuracy(s.x, t.x, 15), 0.8);
}

TEST(TwoMoons, RotationPreservesNorms) {
  auto [s, t] = gen_two_moons(200, 0.1, 0, 4);
  auto [s2, t2] = gen_two_moons(200, 0.1, 77, 4);
  for (std::size_t r = 0; r < t.x.rows(); ++r) {
    EXPECT_NEAR(std::hypot(t.x.at(r, 0), t.x.at(r, 1)), std::hypot(t2.x.at(r, 0), t2.x.at(r, 1)), 1e-12);
  }
}

TEST(Rotate2d, HalfTurnNegates) {
  Tensor x({2, 2}, {1.0, 2.0, -3.0, 0.5});
  const Tensor r = rotate2d(x, 180);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.data()[i], -x.data()[i], 1e-12);
  EXPECT_THROW(rotate2d(Tensor::zeros({2, 3}), 10), ShapeError);
}

TEST(Stream, TrainEvalDisjoint) {
  const auto d = two_moons_stream(800, 200, 0.1, 30, 2);
  EXPECT_EQ(d.source_train.size(), 800u);
  EXPECT_EQ(d.source_eval.size(), 200u);
  EXPECT_EQ(d.target_train.size(), 800u);
  EXPECT_EQ(d.target_eval.size(), 200u);
  EXPECT_TRUE(disjoint(d.source_train.x, d.source_eval.x));
  EXPECT_TRUE(disjoint(d.target_train.x, d.target_eval.x));
  EXPECT_EQ(d.source_eval.split, Split::eval);
}

TEST(Disjoint, DetectsSharedRow) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {5, 6, 3, 4});
  EXPECT_FALSE(disjoint(a, b));
}

TEST(GaussianShift, ZeroShiftSameMeans) {
  Tensor means({2, 2}, {2, 0, -2, 0});
  Tensor cov({2, 2}, {0.25, 0, 0, 0.25});
  auto [s, t] = gen_gaussian_shift(means, means, cov, 4000, 8);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t j = 0; j < 2; ++j) {
      double ms = 0, mt = 0;
      for (std::size_t i = c; i < 4000; i += 2) {
        ms += s.x.at(i, j) / 2000.0;
        mt += t.x.at(i, j) / 2000.0;
      }
      EXPECT_NEAR(ms, means.at(c, j), 0.05);
      EXPECT_NEAR(mt, ms, 0.05);
    }
  }
}

TEST(GaussianShift, LargeShiftMakesSourceModelChance) {
  // Nearest-class-mean fit on the source; with the shift along the class
  // axis every target point falls on one side, so accuracy is 1/2 exactly.
  Tensor ms({2, 2}, {2, 0, -2, 0});
  Tensor mt({2, 2}, {102, 0, 98, 0});
  Tensor cov({2, 2}, {0.25, 0, 0, 0.25});
  auto [s, t] = gen_gaussian_shift(ms, mt, cov, 1000, 2);
  double m0 = 0, m1 = 0;
  for (std::size_t i = 0; i < s.size(); ++i) (s.y[i] == 0 ? m0 : m1) += s.x.at(i, 0) / 500.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double x = t.x.at(i, 0);
    hit += (std::abs(x - m0) < std::abs(x - m1) ? 0u : 1u) == t.y[i];
  }
  EXPECT_DOUBLE_EQ(static_cast<double>(hit) / static_cast<double>(t.size()), 0.5);
}

TEST(GaussianShift, NonPdCovarianceRejected) {
  Tensor means({2, 2}, {0, 0, 1, 1});
  EXPECT_THROW(gen_gaussian_shift(means, means, Tensor({2, 2}, {1, 2, 2, 1}), 10, 1), ContractError);
  EXPECT_THROW(gen_gaussian_shift(means, means, Tensor({2, 2}, {1, 0.5, 0, 1}), 10, 1), ContractError);
  EXPECT_THROW(gen_gaussian_shift(means, means, Tensor({2, 2}, {0, 0, 0, 1}), 10, 1), ContractError);
}

TEST(Cholesky, ReconstructsCovariance) {
  Tensor cov({3, 3}, {4, 2, 0.4, 2, 3, 0.5, 0.4, 0.5, 1});
  const Tensor l = cholesky(cov);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double v = 0;
      for (std::size_t k = 0; k < 3; ++k) v += l.at(i, k) * l.at(j, k);
      EXPECT_NEAR(v, cov.at(i, j), 1e-12);
    }
  }
}

TEST(Idx, FourImageFixture) {
  const auto s = load(idx_images(4, 28, 28), idx_labels({0, 1, 2, 1}));
  EXPECT_EQ(s.size(), 4u);
  EXPECT_EQ(s.dim(), 784u);
  EXPECT_EQ(s.y, (std::vector<std::size_t>{0, 1, 2, 1}));
  EXPECT_DOUBLE_EQ(s.x.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(s.x.at(1, 1), 8.0 / 255.0);
  EXPECT_DOUBLE_EQ(s.x.at(3, 300), ((3 * 7 + 300) % 256) / 255.0);
}

TEST(Idx, InvertIsAnInvolution) {
  IdxOptions opt;
  opt.transform = PixelTransform::invert;
  const auto plain = load(idx_images(2, 4, 4), idx_labels({0, 1}));
  const auto inv = load(idx_images(2, 4, 4), idx_labels({0, 1}), opt);
  for (std::size_t i = 0; i < plain.x.size(); ++i) EXPECT_DOUBLE_EQ(inv.x.data()[i], 1.0 - plain.x.data()[i]);
  Tensor twice = inv.x;
  invert_pixels(twice.data());
  for (std::size_t i = 0; i < plain.x.size(); ++i) EXPECT_NEAR(twice.data()[i], plain.x.data()[i], 1e-15);
}

TEST(Idx, ColorNoiseDeterministicAndBounded) {
  IdxOptions opt;
  opt.transform = PixelTransform::color_noise;
  opt.seed = 4;
  const auto a = load(idx_images(3, 5, 5), idx_labels({0, 1, 2}), opt);
  const auto b = load(idx_images(3, 5, 5), idx_labels({0, 1, 2}), opt);
  EXPECT_EQ(fnv1a(a.x.data()), fnv1a(b.x.data()));
  for (double v : a.x.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Idx, LimitPerClass) {
  IdxOptions opt;
  opt.limit_per_class = 2;
  const auto s = load(idx_images(9, 2, 2), idx_labels({0, 0, 0, 1, 1, 1, 2, 2, 2}), opt);
  EXPECT_LE(s.size(), 6u);
  EXPECT_EQ(s.y, (std::vector<std::size_t>{0, 0, 1, 1, 2, 2}));
}

TEST(Idx, MalformedInputs) {
  std::string bad = idx_images(2, 2, 2);
  bad[3] = 0x01;
  EXPECT_THROW(load(bad, idx_labels({0, 1})), FormatError);
  std::string cut = idx_images(2, 2, 2);
  cut.pop_back();
  EXPECT_THROW(load(cut, idx_labels({0, 1})), FormatError);
  EXPECT_THROW(load(idx_images(2, 2, 2), idx_labels({0, 1, 1})), FormatError);
  EXPECT_THROW(load(idx_images(1, 2, 2), idx_labels({11})), FormatError);
}

TEST(Csv, LayoutAndHiddenTargetLabels) {
  const auto d = two_moons_stream(4, 2, 0.1, 30, 1);
  std::ostringstream os;
  write_csv(os, d);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "domain,split,label,x0,x1");
  std::size_t rows = 0, hidden = 0;
  while (std::getline(is, line)) {
    ++rows;
    if (line.rfind("target,train,NA,", 0) == 0) ++hidden;
  }
  EXPECT_EQ(rows, 12u);
  EXPECT_EQ(hidden, 4u);
}
