// Copyright 2026 The MVTF Authors
//
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>

#include <algorithm>

#include <sstream>

#include "mvtf/grad_check.hpp"
#include "mvtf/nn.hpp"
#include "mvtf/tensor_io.hpp"
#include "test_util.hpp"

using namespace mvtf;
using mvtf::testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

VarXd c(TensorXd t) { return VarXd::constant(std::move(t)); }

}  // namespace

TEST(Diffcore, MatmulIdentityRowsSelectEntries) {
  TensorXd sel({2, 3}, {1, 0, 0, 0, 1, 0});
  TensorXd v({3, 1}, {4.5, -2.0, 7.0});
  auto out = matmul(c(sel), c(v));
  EXPECT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(out.value()[0], 4.5);
  EXPECT_DOUBLE_EQ(out.value()[1], -2.0);
}

TEST(Diffcore, FlattenKeepsRowMajorOrderAndReshapeInverts) {
  std::vector<double> vals(24);
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<double>(i);
  auto x = c(TensorXd({2, 3, 4}, vals));
  auto flat = flatten(x, 1);
  EXPECT_EQ(flat.shape(), (Shape{2, 12}));
  EXPECT_TRUE(std::ranges::equal(flat.value().values(), vals));
  EXPECT_EQ(reshape(flat, {2, 3, 4}).value(), x.value());
}

TEST(Diffcore, SoftmaxOfEqualLogitsIsUniform) {
  auto y = softmax(c(TensorXd({3}, {0, 0, 0})), 0);
  for (double v : y.value().values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Diffcore, SoftmaxRowsSumToOneOnChosenAxis) {
  std::mt19937_64 rng(3);
  auto y = softmax(c(random_tensor({2, 5, 3}, rng, -4, 4)), 1);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t k = 0; k < 3; ++k) {
      double total = 0;
      for (std::size_t j = 0; j < 5; ++j) total += y.value().at({b, j, k});
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Diffcore, ShapeErrorCarriesBothShapes) {
  try {
    add(c(TensorXd({2, 3})), c(TensorXd({4})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.lhs(), (Shape{2, 3}));
    EXPECT_EQ(e.rhs(), (Shape{4}));
  }
  EXPECT_THROW(matmul(c(TensorXd({2, 3})), c(TensorXd({2, 3}))), ShapeError);
}

TEST(Diffcore, EmptyReductionIsDegenerate) {
  EXPECT_THROW(mean(c(TensorXd({2, 0})), 1), DegenerateInput);
  EXPECT_THROW(softmax(c(TensorXd({0})), 0), DegenerateInput);
}

TEST(Diffcore, LayerNormExamples) {
  auto ones = c(TensorXd::ones({3}));
  auto zeros = c(TensorXd::zeros({3}));
  auto flat = layer_norm(c(TensorXd({3}, {1, 1, 1})), ones, zeros, 1e-5);
  for (double v : flat.value().values()) EXPECT_EQ(v, 0.0);

  auto pm = layer_norm(c(TensorXd({2}, {-1, 1})), c(TensorXd::ones({2})), c(TensorXd::zeros({2})), 1e-12);
  EXPECT_NEAR(pm.value()[0], -1.0, 1e-10);
  EXPECT_NEAR(pm.value()[1], 1.0, 1e-10);

  std::mt19937_64 rng(1);
  TensorXd beta = random_tensor({4}, rng);
  auto collapsed = layer_norm(c(random_tensor({5, 4}, rng)), c(TensorXd::zeros({4})), c(beta), 1e-5);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(collapsed.value().at({r, i}), beta[i]);
  }
  EXPECT_THROW(layer_norm(c(TensorXd({2, 0})), c(TensorXd({0})), c(TensorXd({0}))), DegenerateInput);
}

TEST(Diffcore, LayerNormStandardisesRows) {
  std::mt19937_64 rng(2);
  auto y = layer_norm(c(random_tensor({6, 16}, rng, -3, 5)), c(TensorXd::ones({16})), c(TensorXd::zeros({16})));
  for (std::size_t r = 0; r < 6; ++r) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 16; ++i) m += y.value().at({r, i});
    m /= 16;
    for (std::size_t i = 0; i < 16; ++i) v += std::pow(y.value().at({r, i}) - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 16, 1.0, 1e-4);
  }
}

TEST(Diffcore, LinearExamples) {
  TensorXd eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  std::mt19937_64 rng(4);
  TensorXd x = random_tensor({2, 3}, rng);
  EXPECT_EQ(linear(c(x), c(eye), c(TensorXd::zeros({3}))).value(), x);

  auto y = linear(c(TensorXd({2}, {1, 2})), c(TensorXd({2, 1}, {1, 1})), c(TensorXd({1}, {3})));
  EXPECT_EQ(y.value()[0], 6.0);

  TensorXd b({3}, {0.5, -1, 2});
  auto z = linear(c(TensorXd::zeros({4, 3})), c(random_tensor({3, 3}, rng)), c(b));
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(z.value().at({r, i}), b[i]);
  }
  EXPECT_THROW(linear(c(TensorXd({2, 4})), c(eye), c(TensorXd::zeros({3}))), ShapeError);
}

TEST(Diffcore, GradientsAccumulateAcrossUses) {
  auto x = VarXd::parameter(TensorXd({2}, {1.5, -2.0}));
  auto y = sum_all(add(mul(x, x), x));  // d/dx = 2x + 1
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -3.0);
  sum_all(x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 5.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Diffcore, NoGradGuardSkipsRecording) {
  auto x = VarXd::parameter(TensorXd({2}, {1, 2}));
  NoGradGuard guard;
  EXPECT_FALSE(tanh(x).requires_grad());
}

TEST(Diffcore, PrimitivesAreDeterministic) {
  std::mt19937_64 rng(5);
  TensorXd a = random_tensor({7, 9}, rng), w = random_tensor({9, 5}, rng);
  auto f = [&] {
    return softmax(layer_norm(linear(c(a), c(w), VarXd()), c(TensorXd::ones({5})), c(TensorXd::zeros({5}))), 1)
        .value();
  };
  EXPECT_EQ(f(), f());
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
  std::mt19937_64 rng(6);
  auto report = grad_check("constant", [](const std::vector<VarXd>&) { return VarXd::constant(TensorXd({2}, {1, 2})); },
                           {random_tensor({3}, rng)});
  EXPECT_EQ(report.max_rel_error, 0.0);
}

TEST(GradCheck, NonFiniteForwardThrows) {
  EXPECT_THROW(grad_check("log0", [](const std::vector<VarXd>& v) { return log(v[0]); }, {TensorXd({1}, {0.0})}),
               NumericalError);
}

// Three random small shapes per primitive.
class PrimitiveGradients : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradients, MatchFiniteDifferences) {
  const int trial = GetParam();
  std::mt19937_64 rng(100 + trial);
  const std::size_t r = 2 + trial, k = 3 + trial, n = 1 + 2 * trial;

  auto check = [&](const char* name, const DifferentiableFn& f, std::vector<TensorXd> in) {
    auto rep = grad_check(name, f, in);
    EXPECT_LT(rep.max_rel_error, kGradTol) << name << " trial " << trial;
  };

  check("linear", [](const auto& v) { return linear(v[0], v[1], v[2]); },
        {random_tensor({r, k}, rng), random_tensor({k, n}, rng), random_tensor({n}, rng)});
  check("layer_norm", [](const auto& v) { return layer_norm(v[0], v[1], v[2]); },
        {random_tensor({r, 8}, rng), random_tensor({8}, rng), random_tensor({8}, rng)});
  check("matmul", [](const auto& v) { return matmul(v[0], v[1]); },
        {random_tensor({r, k}, rng), random_tensor({k, n}, rng)});
  check("bmm_t", [](const auto& v) { return bmm(v[0], v[1], true); },
        {random_tensor({2, r, k}, rng), random_tensor({2, n, k}, rng)});
  check("bmm", [](const auto& v) { return bmm(v[0], v[1]); },
        {random_tensor({2, r, k}, rng), random_tensor({2, k, n}, rng)});
  check("elementwise", [](const auto& v) {
    return div(mul(sigmoid(v[0]), tanh(v[1])), add_scalar(exp(v[2]), 0.5));
  }, {random_tensor({r, k}, rng), random_tensor({r, k}, rng), random_tensor({r, k}, rng)});
  check("broadcast", [](const auto& v) {
    return add(mul_leading(v[0], v[1]), div(v[0], v[2]));
  }, {random_tensor({r, k}, rng), random_tensor({r}, rng), random_tensor({k}, rng, 1, 2)});
  check("log_sqrt", [](const auto& v) { return log(sqrt(square(v[0]))); }, {random_tensor({r, k}, rng, 0.5, 2)});
  check("softmax", [](const auto& v) { return softmax(v[0], 1); }, {random_tensor({r, k, n}, rng)});
  check("stddev", [](const auto& v) { return stddev(v[0], 1); }, {random_tensor({r, k, n}, rng)});
  check("reductions", [](const auto& v) { return mean(sum(v[0], 2), 0); }, {random_tensor({r, k, n}, rng)});
  check("structural", [](const auto& v) {
    auto cat = concat<double>({v[0], v[1]}, 1);
    return permute(slice(cat, 1, 1, cat.dim(1)), {2, 0, 1});
  }, {random_tensor({r, k, n}, rng), random_tensor({r, 2, n}, rng)});
  check("outer", [](const auto& v) { return outer(v[0], v[1]); }, {random_tensor({r, 4}, rng), random_tensor({r, 4}, rng)});
  check("sym_outer", [](const auto& v) { return outer(v[0], v[1], true); },
        {random_tensor({r, 4}, rng), random_tensor({r, 4}, rng)});
  check("unfold", [](const auto& v) { return unfold_time(v[0], 3); }, {random_tensor({2, r + 2, 3}, rng)});
  check("frames", [](const auto& v) { return overlap_add(frame_signal(v[0], 4, 2), 2, 11); },
        {random_tensor({2, 11}, rng)});
  check("lstm", [](const auto& v) { return lstm(v[0], v[1], v[2], v[3]); },
        {random_tensor({2, r + 2, 3}, rng), random_tensor({3, 16}, rng), random_tensor({4, 16}, rng),
         random_tensor({16}, rng)});
  check("lstm_reverse", [](const auto& v) { return lstm(v[0], v[1], v[2], v[3], true); },
        {random_tensor({2, r + 2, 3}, rng), random_tensor({3, 16}, rng), random_tensor({4, 16}, rng),
         random_tensor({16}, rng)});
}

INSTANTIATE_TEST_SUITE_P(ThreeShapes, PrimitiveGradients, ::testing::Values(0, 1, 2));

TEST(TensorIo, RoundTripIsBitIdentical) {
  std::mt19937_64 rng(7);
  TensorXd t = random_tensor({50, 64}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  EXPECT_EQ(read_tensor<double>(ss), t);

  TensorXf f = t.cast<float>();
  std::stringstream sf;
  write_tensor(sf, f);
  EXPECT_EQ(read_tensor<float>(sf), f);
}

TEST(TensorIo, HeaderLayoutIsFixed) {
  std::stringstream ss;
  write_tensor(ss, TensorXf({2, 3}));
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 2 + 1 + 1 + 2 * 4 + 6 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "MVTF");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 0);  // f32
  EXPECT_EQ(bytes[7], 2);  // rank
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes[12], 3);
}

TEST(TensorIo, CorruptInputsAreFormatErrors) {
  std::stringstream ss;
  write_tensor(ss, TensorXd({4, 4}, 1.0));
  std::string bytes = ss.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_tensor<double>(truncated), FormatError);
  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream bad_magic(bad);
  EXPECT_THROW(read_tensor<double>(bad_magic), FormatError);
  bad = bytes;
  bad[4] = 9;
  std::stringstream bad_version(bad);
  EXPECT_THROW(read_tensor<double>(bad_version), FormatError);
}
