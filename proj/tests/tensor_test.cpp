#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "lgrin/tensor.hpp"
#include "support.hpp"

namespace {

using namespace lgrin;
using lgrin::testing::analytic_gradient;
using lgrin::testing::max_relative_error;
using lgrin::testing::numeric_gradient;
using lgrin::testing::random_tensor;

TEST(Tensor, RejectsValueCountMismatch) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_EQ(Tensor(Shape{2, 3}).size(), 6u);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Tape t;
  Var out = matmul(t.constant(Tensor::identity(2)), t.constant(Tensor::matrix({{3, 1}, {2, 4}})));
  EXPECT_EQ(out.value(), Tensor::matrix({{3, 1}, {2, 4}}));
}

TEST(Matmul, HandArithmetic) {
  Tape t;
  Var out = matmul(t.constant(Tensor::matrix({{1, 2}, {3, 4}})), t.constant(Tensor::matrix({{5}, {6}})));
  EXPECT_EQ(out.value(), Tensor::matrix({{17}, {39}}));
}

TEST(Matmul, ZeroFactor) {
  Tape t;
  Var out = matmul(t.constant(Tensor::zeros({2, 3})), t.constant(random_tensor({3, 2}, 1)));
  EXPECT_EQ(out.value(), Tensor::zeros({2, 2}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  Tape t;
  try {
    matmul(t.constant(Tensor::zeros({2, 3})), t.constant(Tensor::zeros({2, 2})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2x2"), std::string::npos) << msg;
  }
}

TEST(Relu, SignCases) {
  Tape t;
  EXPECT_EQ(relu(t.constant(Tensor::vector({-1, 0, 2}))).value(), Tensor::vector({0, 0, 2}));
}

TEST(Relu, GradientIsUpstreamOnPositiveSideOnly) {
  Tape t;
  Var x = t.parameter(Tensor::vector({-1, 0, 3}), 0);
  Var y = relu(x);
  t.backward(sum(mul(y, t.constant(Tensor::vector({1, 1, 2})))));
  EXPECT_EQ(t.grad(x), Tensor::vector({0, 0, 2}));
}

TEST(ConcatFeatures, WidthsAddUp) {
  Tape t;
  Var out = concat_features({t.constant(Tensor::zeros({4, 128})), t.constant(Tensor::zeros({4, 64})),
                             t.constant(Tensor::zeros({4, 7}))});
  EXPECT_EQ(out.shape(), (Shape{4, 199}));
}

TEST(ConcatFeatures, SinglePartIsUnchanged) {
  Tape t;
  const Tensor a = random_tensor({3, 2}, 2);
  EXPECT_EQ(concat_features({t.constant(a)}).value(), a);
}

TEST(ConcatFeatures, RowMismatchThrows) {
  Tape t;
  EXPECT_THROW(concat_features({t.constant(Tensor::zeros({3, 2})), t.constant(Tensor::zeros({2, 2}))}), ShapeError);
}

TEST(ConcatFeatures, SlicingRecoversPartsAndGradientSplits) {
  Tape t;
  const Tensor a = random_tensor({3, 2}, 3), b = random_tensor({3, 4}, 4);
  Var va = t.parameter(a, 0), vb = t.parameter(b, 1);
  Var out = concat_features({va, vb});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(out.value()(i, j), a(i, j));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out.value()(i, 2 + j), b(i, j));
  }
  const Tensor up = random_tensor({3, 6}, 5);
  t.backward(sum(mul(out, t.constant(up))));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(t.grad(va)(i, j), up(i, j));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(t.grad(vb)(i, j), up(i, 2 + j));
  }
}

TEST(NeighborhoodMax, AllTrueMaskGivesColumnMax) {
  Tape t;
  Var out = neighborhood_max(t.constant(Tensor::matrix({{1, 5}, {2, 0}, {3, 3}})), NeighborMask(3, true));
  EXPECT_EQ(out.value(), Tensor::matrix({{3, 5}, {3, 5}, {3, 5}}));
}

TEST(NeighborhoodMax, IdentityMaskIsPassthrough) {
  Tape t;
  const Tensor h = random_tensor({5, 3}, 6);
  EXPECT_EQ(neighborhood_max(t.constant(h), NeighborMask::identity(5)).value(), h);
}

TEST(NeighborhoodMax, HandEvaluation) {
  Tape t;
  NeighborMask mask(2, true);
  mask.set(1, 0, false);
  EXPECT_EQ(neighborhood_max(t.constant(Tensor::matrix({{1}, {9}})), mask).value(), Tensor::matrix({{9}, {9}}));
}

TEST(NeighborhoodMax, EmptyRowIsRejected) {
  Tape t;
  NeighborMask mask(2, false);
  mask.set(0, 0, true);
  EXPECT_THROW(neighborhood_max(t.constant(Tensor::zeros({2, 1})), mask), ContractError);
}

TEST(NeighborhoodMax, AllTrueEqualsBroadcastReadout) {
  Tape t;
  const Tensor h = random_tensor({6, 4}, 7);
  const Tensor nm = neighborhood_max(t.constant(h), NeighborMask(6, true)).value();
  const Tensor r = readout(t.constant(h), ReadoutMode::max).value();
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(nm(i, j), r[j]);
}

TEST(NeighborhoodMax, TiesRouteToLowestIndex) {
  Tape t;
  Var h = t.parameter(Tensor::matrix({{2}, {2}, {1}}), 0);
  t.backward(sum(neighborhood_max(h, NeighborMask(3, true))));
  EXPECT_EQ(t.grad(h), Tensor::matrix({{3}, {0}, {0}}));
}

TEST(Readout, MeanAndMaxByHand) {
  Tape t;
  Var h = t.constant(Tensor::matrix({{1, 3}, {3, 5}}));
  EXPECT_EQ(readout(h, ReadoutMode::mean).value(), Tensor::vector({2, 4}));
  EXPECT_EQ(readout(h, ReadoutMode::max).value(), Tensor::vector({3, 5}));
}

TEST(Readout, SingleRow) {
  Tape t;
  Var h = t.constant(Tensor::matrix({{4, -1, 2}}));
  EXPECT_EQ(readout(h, ReadoutMode::mean).value(), Tensor::vector({4, -1, 2}));
  EXPECT_EQ(readout(h, ReadoutMode::max).value(), Tensor::vector({4, -1, 2}));
}

TEST(Readout, RowPermutationInvariant) {
  const Tensor h = random_tensor({7, 3}, 8);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(9);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor hp({7, 3});
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 3; ++j) hp(i, j) = h(perm[i], j);
  Tape t;
  EXPECT_EQ(readout(t.constant(h), ReadoutMode::max).value(), readout(t.constant(hp), ReadoutMode::max).value());
  const Tensor a = readout(t.constant(h), ReadoutMode::mean).value();
  const Tensor b = readout(t.constant(hp), ReadoutMode::mean).value();
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a[j], b[j], 1e-15);
}

TEST(WeightedReadout, SelectorZeroAndAverage) {
  Tape t;
  Var h = t.constant(Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}));
  EXPECT_EQ(weighted_readout(h, t.constant(Tensor::vector({1, 0, 0}))).value(), Tensor::vector({1, 2}));
  EXPECT_EQ(weighted_readout(h, t.constant(Tensor::vector({0, 0, 0}))).value(), Tensor::vector({0, 0}));
  Var h2 = t.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  EXPECT_EQ(weighted_readout(h2, t.constant(Tensor::vector({0.5, 0.5}))).value(), Tensor::vector({2, 3}));
}

TEST(WeightedReadout, LengthMismatchThrows) {
  Tape t;
  EXPECT_THROW(weighted_readout(t.constant(Tensor::zeros({3, 2})), t.constant(Tensor::zeros({2}))), ShapeError);
}

TEST(CrossEntropy, ClosedForms) {
  Tape t;
  EXPECT_NEAR(cross_entropy_logits(t.constant(Tensor::vector({0.3, 0.3, 0.3, 0.3})), 2).value().item(), std::log(4.0),
              1e-15);
  EXPECT_LT(cross_entropy_logits(t.constant(Tensor::vector({100, 0, 0})), 0).value().item(), 1e-6);
  EXPECT_NEAR(cross_entropy_logits(t.constant(Tensor::vector({0, 0})), 0).value().item(), std::log(2.0), 1e-15);
}

TEST(CrossEntropy, StableForHugeLogits) {
  Tape t;
  const double v = cross_entropy_logits(t.constant(Tensor::vector({1000, -1000})), 1).value().item();
  EXPECT_NEAR(v, 2000.0, 1e-9);
}

TEST(CrossEntropy, LabelOutOfRange) {
  Tape t;
  EXPECT_THROW(cross_entropy_logits(t.constant(Tensor::vector({0, 0})), 2), IndexError);
}

TEST(Backward, SumGivesOnes) {
  Tape t;
  Var w = t.parameter(random_tensor({3, 4}, 10), 0);
  t.backward(sum(w));
  EXPECT_EQ(t.grad(w), Tensor({3, 4}, 1.0));
}

TEST(Backward, FrobeniusGivesTwiceW) {
  Tape t;
  const Tensor w0 = random_tensor({3, 2}, 11);
  Var w = t.parameter(w0, 0);
  t.backward(sum(mul(w, w)));
  for (std::size_t k = 0; k < w0.size(); ++k) EXPECT_DOUBLE_EQ(t.grad(w)[k], 2.0 * w0[k]);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape t;
  Var w = t.parameter(Tensor::zeros({2}), 0);
  EXPECT_THROW(t.backward(w), ContractError);
}

TEST(Backward, UnreachedParameterGetsZeros) {
  Tape t;
  Var a = t.parameter(Tensor::vector({1, 2}), 0);
  t.parameter(Tensor::zeros({3, 3}), 1);
  t.backward(sum(a));
  const auto grads = t.parameter_gradients();
  ASSERT_EQ(grads.size(), 2u);
  EXPECT_EQ(grads.at(1), Tensor::zeros({3, 3}));
}

// Finite-difference agreement for every differentiable op on random inputs.

class OpGradient : public ::testing::TestWithParam<std::uint64_t> {};

void expect_fd_agreement(const lgrin::testing::ScalarFn& f, const Tensor& x) {
  Tape probe;
  probe.track_kinks();
  f(probe, probe.constant(x));
  if (probe.kink_margin() < 1e-3) GTEST_SKIP() << "sample point lies near a kink";
  EXPECT_LT(max_relative_error(analytic_gradient(f, x), numeric_gradient(f, x)), 1e-4);
}

TEST_P(OpGradient, MatmulBothSides) {
  const std::uint64_t s = GetParam();
  const Tensor a = random_tensor({3, 4}, s), b = random_tensor({4, 2}, s + 100), w = random_tensor({3, 2}, s + 200);
  expect_fd_agreement([&](Tape& t, Var x) { return sum(mul(matmul(x, t.constant(b)), t.constant(w))); }, a);
  expect_fd_agreement([&](Tape& t, Var x) { return sum(mul(matmul(t.constant(a), x), t.constant(w))); }, b);
}

TEST_P(OpGradient, AddBiasScaleTransposeReshape) {
  const std::uint64_t s = GetParam();
  const Tensor x0 = random_tensor({3, 4}, s), b = random_tensor({4}, s + 1), w = random_tensor({4, 3}, s + 2);
  expect_fd_agreement(
      [&](Tape& t, Var x) { return sum(mul(transpose(scale(add_bias(x, t.constant(b)), -1.7)), t.constant(w))); }, x0);
  expect_fd_agreement([&](Tape& t, Var x) {
    Var y = add_bias(t.constant(x0), x);
    return sum(mul(y, y));
  }, b);
  expect_fd_agreement([&](Tape& t, Var x) { return sum(mul(reshape(x, {4, 3}), t.constant(w))); }, x0);
}

TEST_P(OpGradient, ReluAndNeighborhoodMax) {
  const std::uint64_t s = GetParam();
  const Tensor x0 = random_tensor({5, 3}, s), w = random_tensor({5, 3}, s + 1);
  NeighborMask mask = NeighborMask::identity(5);
  std::mt19937_64 rng(s);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      if (rng() % 2) mask.set(i, j, true);
  expect_fd_agreement([&](Tape& t, Var x) { return sum(mul(relu(x), t.constant(w))); }, x0);
  expect_fd_agreement([&](Tape& t, Var x) { return sum(mul(neighborhood_max(x, mask), t.constant(w))); }, x0);
}

TEST_P(OpGradient, ReadoutsConcatAndCrossEntropy) {
  const std::uint64_t s = GetParam();
  const Tensor h0 = random_tensor({4, 3}, s), p0 = random_tensor({4}, s + 1);
  auto head = [&](Tape&, Var h, Var p) {
    Var g = concat_features({readout(h, ReadoutMode::max), weighted_readout(h, p), readout(h, ReadoutMode::mean)});
    return cross_entropy_logits(g, static_cast<std::size_t>(s % 9));
  };
  expect_fd_agreement([&](Tape& t, Var h) { return head(t, h, t.constant(p0)); }, h0);
  expect_fd_agreement([&](Tape& t, Var p) { return head(t, t.constant(h0), p); }, p0);
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Values(1, 2, 3, 4, 5));

TEST(Determinism, IdenticalInputsGiveBitIdenticalOutputs) {
  auto run = [] {
    Tape t;
    Var h = t.constant(random_tensor({6, 5}, 12));
    Var w = t.constant(random_tensor({5, 4}, 13));
    return readout(relu(matmul(h, w)), ReadoutMode::mean).value();
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
