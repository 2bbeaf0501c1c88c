#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "uda/checkpoint.hpp"
#include "uda/networks.hpp"

using namespace uda;

TEST(Margin, HandExamples) {
  const std::vector<double> logits = {2.0, 0.5, -1.0};
  EXPECT_DOUBLE_EQ(margin(logits, 0), 1.5);
  EXPECT_DOUBLE_EQ(margin(logits, 1), -1.5);
  const std::vector<double> flat = {0.3, 0.3, 0.3};
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(margin(flat, c), 0.0);
}

TEST(Margin, SingleClassRejected) {
  const std::vector<double> one = {1.0};
  EXPECT_THROW(margin(one, 0), ContractError);
}

TEST(Margin, SignAndShiftProperties) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> l(2 + trial % 5);
    for (double& v : l) v = n(rng);
    const std::size_t top = argmax_label(l);
    EXPECT_GE(margin(l, top), 0.0);
    for (std::size_t c = 0; c < l.size(); ++c) {
      if (c != top) {
        EXPECT_LE(margin(l, c), 0.0);
      }
    }
    std::vector<double> shifted = l;
    const double k = n(rng) * 10;
    for (double& v : shifted) v += k;
    EXPECT_EQ(argmax_label(shifted), top);
    for (std::size_t c = 0; c < l.size(); ++c) {
      EXPECT_NEAR(margin(shifted, c), margin(l, c), 1e-12);
    }
  }
}

TEST(Margin, DifferentiableFormRoutesToArgmax) {
  Tape tape;
  Var logits = tape.leaf(Tensor::matrix({{2.0, 0.5, -1.0}, {1.0, 1.0, 0.0}}));
  const std::size_t cls[] = {0, 2};
  Var m = margin(logits, cls);
  EXPECT_EQ(m.value(), Tensor::matrix({{1.5}, {-1.0}}).reshaped({2}));
  Tensor g = tape.backward(sum(m)).of(logits);
  EXPECT_EQ(g, Tensor::matrix({{1.0, -1.0, 0.0}, {-1.0, 0.0, 1.0}}));
}

TEST(Argmax, Examples) {
  EXPECT_EQ(argmax_label(std::vector<double>{0.1, 0.9}), 1u);
  EXPECT_EQ(argmax_label(std::vector<double>{3, 3, 1}), 0u);
  EXPECT_EQ(argmax_label(std::vector<double>{-5}), 0u);
  EXPECT_THROW(argmax_label(std::vector<double>{}), ShapeError);
}

TEST(Ramp, Branches) {
  EXPECT_EQ(ramp(-0.5, 1.0), 1.0);
  EXPECT_EQ(ramp(0.5, 1.0), 0.5);
  EXPECT_EQ(ramp(2.0, 1.0), 0.0);
  EXPECT_THROW(ramp(0.1, 0.0), ContractError);
  EXPECT_THROW(ramp(0.1, -1.0), ContractError);
}

TEST(Ramp, EndpointsAndMonotone) {
  for (double rho : {0.1, 1.0, 3.7}) {
    EXPECT_EQ(ramp(0.0, rho), 1.0);
    EXPECT_EQ(ramp(rho, rho), 0.0);
    double prev = 1.0;
    for (int i = -20; i <= 60; ++i) {
      const double v = ramp(i * rho / 40.0, rho);
      EXPECT_LE(v, prev);
      EXPECT_GE(v, 0.0);
      prev = v;
    }
  }
}

TEST(DomainFeature, DannIsIdentity) {
  Tape tape;
  Var f = tape.constant(Tensor::matrix({{1.0, 2.0}}));
  Var logits = tape.constant(Tensor::matrix({{0.3, -0.3}}));
  EXPECT_EQ(domain_feature(FeatureMode::dann, f, logits).value(), f.value());
}

TEST(DomainFeature, CdanOuterProduct) {
  Tape tape;
  Var f = tape.constant(Tensor::matrix({{1.0, 0.0}}));
  Var logits = tape.constant(Tensor::matrix({{0.0, 0.0}}));
  Var z = domain_feature(FeatureMode::cdan, f, logits);
  EXPECT_EQ(z.value(), Tensor::matrix({{0.5, 0.5, 0.0, 0.0}}));
}

TEST(DomainFeature, CdanDimension) {
  std::mt19937_64 rng(2);
  NetworkConfig cfg;
  cfg.feature_dim = 4;
  cfg.classes = 3;
  TaskModel task(cfg, rng);
  Tape tape;
  Var z = domain_feature(FeatureMode::cdan, task.bind(tape, false),
                         tape.constant(Tensor::zeros({5, 2})));
  EXPECT_EQ(z.shape(), (Shape{5, 12}));
  EXPECT_EQ(domain_feature_dim(FeatureMode::cdan, 4, 3), 12u);
}

TEST(TaskModel, ComposesExtractorAndPredictor) {
  std::mt19937_64 rng(9);
  NetworkConfig cfg;
  cfg.classes = 3;
  TaskModel task(cfg, rng);
  Tensor x = Tensor::matrix({{0.1, -0.2}, {1.5, 0.7}});
  const Tensor logits = task.logits(x);
  EXPECT_EQ(logits.shape(), (Shape{2, 3}));
  EXPECT_EQ(logits, task.predictor().apply(task.extractor().apply(x)));
}

TEST(TaskModel, SeedDeterminesParameters) {
  std::mt19937_64 a(17), b(17), c(18);
  EXPECT_EQ(TaskModel({}, a).checksum(), TaskModel({}, b).checksum());
  std::mt19937_64 a2(17);
  EXPECT_NE(TaskModel({}, a2).checksum(), TaskModel({}, c).checksum());
}

TEST(DiscriminatorHead, OutputWidthByKind) {
  std::mt19937_64 rng(4);
  DiscriminatorHead scalar(HeadKind::scalar, 32, 32, 5, rng);
  DiscriminatorHead multi(HeadKind::multiclass, 32, 32, 5, rng);
  EXPECT_EQ(scalar.apply(Tensor::zeros({3, 32})).shape(), (Shape{3, 1}));
  EXPECT_EQ(multi.apply(Tensor::zeros({3, 32})).shape(), (Shape{3, 5}));
  EXPECT_EQ(scalar.net().depth(), 2u);
}

TEST(DiscriminatorHead, HeadsDoNotShareStorage) {
  std::mt19937_64 rng(4);
  DiscriminatorHead hs(HeadKind::multiclass, 8, 8, 2, rng);
  DiscriminatorHead ht(HeadKind::multiclass, 8, 8, 2, rng);
  const auto before = hs.checksum();
  for (Tensor* p : ht.parameters()) p->data()[0] += 1.0;
  EXPECT_EQ(hs.checksum(), before);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(21);
  TaskModel task({}, rng);
  std::stringstream buf;
  write_records(buf, to_records(task.named_parameters()));
  const auto recs = read_records(buf);
  ASSERT_EQ(recs.size(), task.named_parameters().size());
  EXPECT_EQ(recs.front().name, "task.extractor.0.weight");

  std::mt19937_64 other(99);
  TaskModel copy({}, other);
  load_into(copy.extractor(), "task.extractor", recs);
  load_into(copy.predictor(), "task.predictor", recs);
  EXPECT_EQ(copy.checksum(), task.checksum());
}

TEST(Checkpoint, HeaderLayout) {
  std::stringstream buf;
  write_records(buf, {{"a", Tensor::vector({1.0})}});
  const std::string s = buf.str();
  ASSERT_GE(s.size(), 9u);
  EXPECT_EQ(s.substr(0, 4), "UDAC");
  EXPECT_EQ(static_cast<unsigned char>(s[4]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(s[5]), 1u);  // count, little-endian
  EXPECT_EQ(s.size(), 4u + 1 + 4 + (4 + 1) + 4 + 8 + 8);
}

TEST(Checkpoint, CorruptInputRejected) {
  std::stringstream bad_magic("XXXX");
  EXPECT_THROW(read_records(bad_magic), FormatError);
  std::stringstream good;
  write_records(good, {{"w", Tensor::vector({1.0, 2.0})}});
  std::string cut = good.str();
  cut.resize(cut.size() - 3);
  std::stringstream truncated(cut);
  EXPECT_THROW(read_records(truncated), FormatError);
}

TEST(Checkpoint, ShapeMismatchOnLoad) {
  std::mt19937_64 rng(1);
  NetworkConfig small;
  small.hidden = 4;
  TaskModel a(small, rng);
  TaskModel b({}, rng);
  const auto recs = to_records(a.named_parameters());
  EXPECT_THROW(load_into(b.extractor(), "task.extractor", recs), FormatError);
}
