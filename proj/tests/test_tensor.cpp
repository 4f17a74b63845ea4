#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mldcn/gradcheck.hpp"
#include "mldcn/ops.hpp"
#include "mldcn/random.hpp"
#include "test_util.hpp"

using namespace mldcn;
using mldcn::testing::expect_error;

namespace {

Matrix eval_binary(Var (*op)(Var, Var), const Matrix& a, const Matrix& b) {
  Tape t;
  return op(t.constant(a), t.constant(b)).value();
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Matrix b = Matrix::from_rows({{3, 4}, {5, 6}});
  EXPECT_EQ(eval_binary(matmul, Matrix::identity(2), b), b);
}

TEST(Matmul, ZeroAnnihilates) {
  EXPECT_EQ(eval_binary(matmul, Matrix(2, 2), Matrix::from_rows({{1, 2}, {3, 4}})), Matrix(2, 2));
}

TEST(Matmul, HandEvaluatedProduct) {
  const Matrix c = eval_binary(matmul, Matrix::from_rows({{1, 2}, {3, 4}}), Matrix::from_rows({{5}, {6}}));
  EXPECT_EQ(c, Matrix::from_rows({{17}, {39}}));
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Tape t;
  try {
    matmul(t.constant(Matrix(2, 3)), t.constant(Matrix(2, 3)));
    FAIL() << "expected a shape error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape);
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, BackwardAccumulatesBothGradients) {
  Param a("a", Matrix::from_rows({{1, 2}, {3, 4}}));
  Param b("b", Matrix::from_rows({{5, 6}, {7, 8}}));
  Tape t;
  t.backward(sum_all(matmul(t.param(a), t.param(b))));
  // dA = 1 * B^T, dB = A^T * 1 with an all-ones upstream gradient.
  EXPECT_EQ(a.grad, Matrix::from_rows({{11, 15}, {11, 15}}));
  EXPECT_EQ(b.grad, Matrix::from_rows({{4, 4}, {6, 6}}));
}

TEST(MatmulNt, EqualsProductWithExplicitTranspose) {
  Rng rng(3);
  const Matrix a = normal_matrix(3, 4, 1.0, rng), b = normal_matrix(5, 4, 1.0, rng);
  Tape t;
  const Matrix got = matmul_nt(t.constant(a), t.constant(b)).value();
  const Matrix want = matmul(t.constant(a), t.constant(b.transposed())).value();
  EXPECT_LT(max_abs_diff(got, want), 1e-14);
}

TEST(Hadamard, IdentityZeroAndHandCase) {
  const Matrix a = Matrix::from_rows({{1.5, -2}, {3, 4}});
  EXPECT_EQ(eval_binary(hadamard, a, Matrix(2, 2, 1.0)), a);
  EXPECT_EQ(eval_binary(hadamard, a, Matrix(2, 2)), Matrix(2, 2));
  EXPECT_EQ(eval_binary(hadamard, Matrix::from_rows({{2, 3}}), Matrix::from_rows({{4, 5}})),
            Matrix::from_rows({{8, 15}}));
}

TEST(Hadamard, ShapeMismatchIsShapeError) {
  Tape t;
  expect_error(ErrorCode::shape, [&] { hadamard(t.constant(Matrix(1, 2)), t.constant(Matrix(2, 1))); });
  expect_error(ErrorCode::shape, [&] { add(t.constant(Matrix(1, 2)), t.constant(Matrix(1, 3))); });
}

TEST(Backward, SquareRule) {
  Param a("a", Matrix::from_rows({{1, -2}, {0.5, 3}}));
  Tape t;
  const Var x = t.param(a);
  t.backward(sum_all(hadamard(x, x)));
  for (std::size_t k = 0; k < a.value.size(); ++k) EXPECT_DOUBLE_EQ(a.grad[k], 2 * a.value[k]);
}

TEST(Backward, LinearMapGradientIsBroadcastInput) {
  // loss = sum(x W) with x fixed (1 x 3), W 3 x 2: dW[i][j] = x[i].
  Param w("w", Matrix(3, 2, 0.7));
  const Matrix x = Matrix::from_rows({{1, 2, 3}});
  Tape t;
  t.backward(sum_all(matmul(t.constant(x), t.param(w))));
  EXPECT_EQ(w.grad, Matrix::from_rows({{1, 1}, {2, 2}, {3, 3}}));
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape t;
  const Var v = t.constant(Matrix(2, 1));
  expect_error(ErrorCode::contract, [&] { t.backward(v); });
}

TEST(Backward, GradientsAccumulateAcrossUsesAndCalls) {
  Param a("a", Matrix::from_rows({{2}}));
  for (int pass = 0; pass < 2; ++pass) {
    Tape t;
    const Var x = t.param(a);
    t.backward(sum_all(add(x, x)));
  }
  EXPECT_EQ(a.grad[0], 4.0);
  a.zero_grad();
  EXPECT_EQ(a.grad, Matrix(1, 1));
}

TEST(Relu, ExamplesAndSubgradientAtZero) {
  Param x("x", Matrix::from_rows({{-1, 0, 2}}));
  Tape t;
  const Var y = relu(t.param(x));
  EXPECT_EQ(y.value(), Matrix::from_rows({{0, 0, 2}}));
  t.backward(sum_all(y));
  EXPECT_EQ(x.grad, Matrix::from_rows({{0, 0, 1}}));
}

TEST(Relu, PropagatesNaN) {
  Tape t;
  const Matrix y = relu(t.constant(Matrix::from_rows({{std::nan(""), -1.0}}))).value();
  EXPECT_TRUE(std::isnan(y[0]));
  EXPECT_EQ(y[1], 0.0);
}

TEST(Sigmoid, HalfAtZeroAndOpenInterval) {
  Tape t;
  const Matrix y = sigmoid(t.constant(Matrix::from_rows({{0, 40, -40, 800, -800}}))).value();
  EXPECT_EQ(y[0], 0.5);
  for (double v : y.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_TRUE(std::isfinite(v));
  }
  EXPECT_GT(y[2], 0.0);
}

TEST(Softmax, SymmetricRowAndRowSums) {
  Tape t;
  EXPECT_EQ(softmax_rows(t.constant(Matrix::from_rows({{0, 0}}))).value(), Matrix::from_rows({{0.5, 0.5}}));
  Rng rng(11);
  Matrix x = normal_matrix(50, 7, 30.0, rng);
  const Matrix y = softmax_rows(t.constant(x)).value();
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double s = 0.0;
    for (double v : y.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(LayerNorm, ConstantRowCollapsesToBias) {
  Tape t;
  const Var y = layernorm_rows(t.constant(Matrix(1, 4, 5.0)), t.constant(Matrix(1, 4, 1.0)), t.constant(Matrix(1, 4)));
  EXPECT_EQ(y.value(), Matrix(1, 4));
}

TEST(LayerNorm, TwoEntryRowNormalizesToMinusOnePlusOne) {
  Tape t;
  const Var y = layernorm_rows(t.constant(Matrix::from_rows({{1, 3}})), t.constant(Matrix(1, 2, 1.0)),
                               t.constant(Matrix(1, 2)), 1e-300);
  EXPECT_NEAR(y.value()[0], -1.0, 1e-15);
  EXPECT_NEAR(y.value()[1], 1.0, 1e-15);
}

TEST(LayerNorm, ZeroGainBroadcastsBias) {
  Tape t;
  const Matrix bias = Matrix::from_rows({{0.25, -1, 3}});
  const Var y = layernorm_rows(t.constant(Matrix::from_rows({{1, 7, -2}, {0, 4, 4}})), t.constant(Matrix(1, 3)),
                               t.constant(bias));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y.value()(i, j), bias[j]);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
  Rng rng(5);
  const Matrix x = normal_matrix(40, 16, 3.0, rng);
  Tape t;
  const Matrix y =
      layernorm_rows(t.constant(x), t.constant(Matrix(1, 16, 1.0)), t.constant(Matrix(1, 16)), 1e-5).value();
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double mean = 0.0, var = 0.0;
    for (double v : y.row(i)) mean += v;
    mean /= 16;
    for (double v : y.row(i)) var += (v - mean) * (v - mean);
    var /= 16;
    EXPECT_LT(std::abs(mean), 1e-10);
    // eps is inside the square root, so the variance is var / (var + eps).
    double xm = 0.0, xv = 0.0;
    for (double v : x.row(i)) xm += v;
    xm /= 16;
    for (double v : x.row(i)) xv += (v - xm) * (v - xm);
    xv /= 16;
    EXPECT_NEAR(var, xv / (xv + 1e-5), 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(LayerNorm, UnitVarianceWithinTightToleranceForWideRows) {
  // With eps inside the square root the output variance is v / (v + eps), so
  // the 1e-8 bound needs an input variance of at least 1e3.
  Rng rng(6);
  const Matrix x = normal_matrix(20, 32, 100.0, rng);
  Tape t;
  const Matrix y =
      layernorm_rows(t.constant(x), t.constant(Matrix(1, 32, 1.0)), t.constant(Matrix(1, 32)), 1e-5).value();
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double mean = 0.0, var = 0.0;
    for (double v : y.row(i)) mean += v;
    mean /= 32;
    for (double v : y.row(i)) var += (v - mean) * (v - mean);
    EXPECT_LT(std::abs(mean), 1e-10);
    EXPECT_NEAR(var / 32, 1.0, 1e-8);
  }
}

TEST(LayerNorm, BadParametersAreRejected) {
  Tape t;
  const Var x = t.constant(Matrix(2, 3, 1.0));
  expect_error(ErrorCode::shape, [&] { layernorm_rows(x, t.constant(Matrix(1, 2)), t.constant(Matrix(1, 2))); });
  expect_error(ErrorCode::contract,
               [&] { layernorm_rows(x, t.constant(Matrix(1, 3)), t.constant(Matrix(1, 3)), 0.0); });
}

TEST(RowBias, OnlyRowVectorsBroadcast) {
  Tape t;
  const Var x = t.constant(Matrix::from_rows({{1, 2}, {3, 4}}));
  EXPECT_EQ(add_row_bias(x, t.constant(Matrix::from_rows({{10, 20}}))).value(),
            Matrix::from_rows({{11, 22}, {13, 24}}));
  expect_error(ErrorCode::shape, [&] { add_row_bias(x, t.constant(Matrix(2, 2))); });
  expect_error(ErrorCode::shape, [&] { add_row_bias(x, t.constant(Matrix(1, 3))); });
}

TEST(ConcatCols, WidthsAddAndGradientsSplit) {
  Param a("a", Matrix::from_rows({{1}, {2}}));
  Param b("b", Matrix::from_rows({{3, 4}, {5, 6}}));
  Tape t;
  const Var c = concat_cols({t.param(a), t.param(b)});
  EXPECT_EQ(c.value(), Matrix::from_rows({{1, 3, 4}, {2, 5, 6}}));
  const Matrix w = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  t.backward(sum_all(hadamard(c, t.constant(w))));
  EXPECT_EQ(a.grad, Matrix::from_rows({{1}, {4}}));
  EXPECT_EQ(b.grad, Matrix::from_rows({{2, 3}, {5, 6}}));
  expect_error(ErrorCode::shape, [&] { concat_cols({t.constant(Matrix(1, 1)), t.constant(Matrix(2, 1))}); });
}

TEST(EmbeddingLookup, ScatterAddsIntoLookedUpRows) {
  Param table("emb", Matrix::from_rows({{1, 1}, {2, 2}, {3, 3}}));
  const std::vector<std::uint32_t> ids{2, 0, 2};
  Tape t;
  const Var e = embedding_lookup(t.param(table), ids, "f");
  EXPECT_EQ(e.value(), Matrix::from_rows({{3, 3}, {1, 1}, {3, 3}}));
  t.backward(sum_all(e));
  EXPECT_EQ(table.grad, Matrix::from_rows({{1, 1}, {0, 0}, {2, 2}}));
  const std::vector<std::uint32_t> bad{3};
  try {
    embedding_lookup(t.param(table), bad, "site");
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::lookup);
    EXPECT_NE(std::string(err.what()).find("site"), std::string::npos);
    EXPECT_NE(std::string(err.what()).find("3"), std::string::npos);
  }
}

TEST(Bce, LogitZeroIsLogTwo) {
  for (double y : {0.0, 1.0}) {
    Tape t;
    const std::vector<double> labels{y};
    EXPECT_NEAR(bce_with_logits(t.constant(Matrix(1, 1)), labels).value()[0], std::log(2.0), 1e-15);
  }
}

TEST(Bce, LargeLogitMatchesClosedForm) {
  Tape t;
  const std::vector<double> labels{1.0};
  const double got = bce_with_logits(t.constant(Matrix(1, 1, 20.0)), labels).value()[0];
  EXPECT_NEAR(got, std::log1p(std::exp(-20.0)), 1e-24);
  EXPECT_NEAR(got, 2.06e-9, 1e-11);
}

TEST(Bce, GradientIsSigmoidMinusLabelOverBatch) {
  Rng rng(17);
  Param z("z", normal_matrix(32, 1, 4.0, rng));
  std::vector<double> labels(32);
  for (double& y : labels) y = rng.bernoulli(0.5) ? 1.0 : 0.0;
  Tape t;
  t.backward(bce_with_logits(t.param(z), labels));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double want = (1.0 / (1.0 + std::exp(-z.value[i])) - labels[i]) / 32.0;
    EXPECT_NEAR(z.grad[i] * 32.0, want * 32.0, 1e-10);
  }
}

TEST(Bce, NonBinaryLabelIsContractError) {
  Tape t;
  const std::vector<double> labels{0.5};
  expect_error(ErrorCode::contract, [&] { bce_with_logits(t.constant(Matrix(1, 1)), labels); });
}

TEST(FlopCounter, FollowsTheConvention) {
  Tape t;
  const Var x = t.constant(Matrix(3, 4, 1.0));
  const Var w = t.constant(Matrix(4, 5, 1.0));
  const Var y = matmul(x, w);
  EXPECT_EQ(t.flops(), 2u * 3 * 4 * 5);
  const std::uint64_t before = t.flops();
  add_row_bias(y, t.constant(Matrix(1, 5)));
  EXPECT_EQ(t.flops() - before, 15u);
  const std::uint64_t ln_before = t.flops();
  layernorm_rows(y, t.constant(Matrix(1, 5, 1.0)), t.constant(Matrix(1, 5)));
  EXPECT_EQ(t.flops() - ln_before, 75u);
  const std::uint64_t sm_before = t.flops();
  softmax_rows(y);
  EXPECT_EQ(t.flops() - sm_before, 75u);
  const std::uint64_t free_before = t.flops();
  concat_cols({x, x});
  column(x, 1);
  EXPECT_EQ(t.flops(), free_before);
}

TEST(Determinism, RepeatedForwardAndBackwardAreBitIdentical) {
  auto run = [] {
    Rng rng(99);
    Param w("w", normal_matrix(6, 6, 1.0, rng));
    Param g("g", Matrix(1, 6, 1.0)), b("b", Matrix(1, 6));
    const Matrix x = normal_matrix(5, 6, 1.0, rng);
    Tape t;
    const Var h = layernorm_rows(relu(matmul(t.constant(x), t.param(w))), t.param(g), t.param(b));
    const Var loss = sum_all(hadamard(h, softmax_rows(h)));
    t.backward(loss);
    return std::make_pair(loss.value(), w.grad);
  };
  EXPECT_EQ(run(), run());
}

// ---- gradcheck -------------------------------------------------------------

TEST(Gradcheck, LinearLayerIsExactToRoundoff) {
  Rng rng(1);
  Param w("w", normal_matrix(5, 3, 1.0, rng));
  Param b("b", normal_matrix(1, 3, 1.0, rng));
  const Matrix x = normal_matrix(4, 5, 1.0, rng);
  const Matrix c = normal_matrix(4, 3, 1.0, rng);
  std::vector<Param*> params{&w, &b};
  const auto res = gradcheck(
      [&](Tape& t) {
        return sum_all(hadamard(add_row_bias(matmul(t.constant(x), t.param(w)), t.param(b)), t.constant(c)));
      },
      params);
  EXPECT_LT(res.max_relative_error, 1e-9);
  EXPECT_EQ(res.checked, 18u);
  EXPECT_EQ(res.excluded, 0u);
}

TEST(Gradcheck, EntryAtReluKinkIsExcluded) {
  // Pre-activation x*w is exactly 0 for w = 0; perturbing w crosses the kink.
  Param w("w", Matrix::from_rows({{0.0, 1.0}}));
  const Matrix x = Matrix::from_rows({{2.0, 3.0}});
  std::vector<Param*> params{&w};
  const auto res =
      gradcheck([&](Tape& t) { return sum_all(relu(hadamard(t.constant(x), t.param(w)))); }, params);
  EXPECT_EQ(res.excluded, 1u);
  EXPECT_EQ(res.checked, 1u);
  EXPECT_LT(res.max_relative_error, 1e-9);
}

TEST(Gradcheck, SmoothOpsPass) {
  Rng rng(2);
  Param x("x", normal_matrix(3, 6, 1.0, rng));
  Param g("g", normal_matrix(1, 6, 1.0, rng));
  Param b("b", normal_matrix(1, 6, 1.0, rng));
  Param s("s", normal_matrix(3, 1, 1.0, rng));
  const Matrix c = normal_matrix(3, 6, 1.0, rng);
  std::vector<Param*> params{&x, &g, &b, &s};
  const auto res = gradcheck(
      [&](Tape& t) {
        const Var h = layernorm_rows(t.param(x), t.param(g), t.param(b));
        const Var p = softmax_rows(scale_rows(h, t.param(s)));
        return sum_all(hadamard(add(sigmoid(h), p), t.constant(c)));
      },
      params);
  EXPECT_LT(res.max_relative_error, 1e-6);
}

// A square op whose backward rule forgets the factor 2.
Var broken_square(Var x) {
  Matrix y = x.value();
  for (double& v : y.data()) v *= v;
  Tape& t = *x.tape;
  return t.record(std::move(y), t.needs_grad(x.id),
                  [ix = x.id](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    const Matrix& xv = tp.value(ix);
                    Matrix& gx = tp.grad(ix);
                    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * xv[k];
                  },
                  x.value().size());
}

TEST(Gradcheck, DetectsCorruptedBackwardRule) {
  Param x("x", Matrix::from_rows({{0.5, -1.5, 2.0}}));
  std::vector<Param*> params{&x};
  const auto res = gradcheck([&](Tape& t) { return sum_all(broken_square(t.param(x))); }, params);
  EXPECT_GT(res.max_relative_error, 0.4);
  EXPECT_EQ(res.worst_param, "x");
}

TEST(Gradcheck, NonDeterministicForwardIsContractError) {
  Param x("x", Matrix(1, 1, 1.0));
  std::vector<Param*> params{&x};
  int calls = 0;
  expect_error(ErrorCode::contract, [&] {
    gradcheck(
        [&](Tape& t) {
          ++calls;
          return sum_all(add(t.param(x), t.constant(Matrix(1, 1, calls))));
        },
        params);
  });
}
