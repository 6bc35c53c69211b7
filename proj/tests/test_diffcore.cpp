// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

using namespace trj;

namespace {

Matrix<double> random_matrix(int r, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
  return m;
}

void expect_passes(const Fragment<double>& f, const ParameterStore<double>& p, const char* what) {
  const auto report = gradient_check(f, p);
  EXPECT_TRUE(report.passed) << what << ": " << report.worst()->name << " rel " << report.max_relative_error();
}

}  // namespace

TEST(Autodiff, AffineIdentity) {
  Tape<double> t;
  Matrix<double> xv(3, 1);
  xv << 0.5, -2.0, 4.0;
  Var<double> x = t.variable(xv);
  Var<double> y = ad::affine(t.constant(Matrix<double>::Identity(3, 3)), x, t.constant(Matrix<double>::Zero(3, 1)));
  EXPECT_EQ(y.value(), xv);
  // Row i of dy/dx via a unit seed.
  for (int i = 0; i < 3; ++i) {
    Tape<double> u;
    Var<double> xi = u.variable(xv);
    Var<double> yi = ad::affine(u.constant(Matrix<double>::Identity(3, 3)), xi, u.constant(Matrix<double>::Zero(3, 1)));
    const Matrix<double> seed = Matrix<double>::Identity(3, 3).col(i);
    u.backward(yi, &seed);
    EXPECT_EQ(xi.grad(), seed);
  }
}

TEST(Autodiff, KlAgainstClosedForm) {
  Tape<double> t;
  EXPECT_DOUBLE_EQ(ad::kl_unit_gaussian(t.constant(Matrix<double>::Zero(1, 1)), t.constant(Matrix<double>::Zero(1, 1))).scalar(), 0.0);
  EXPECT_DOUBLE_EQ(ad::kl_unit_gaussian(t.constant(Matrix<double>::Ones(1, 1)), t.constant(Matrix<double>::Zero(1, 1))).scalar(), 0.5);
}

TEST(Autodiff, NonFiniteValueNamesPrimitive) {
  Tape<double> t;
  try {
    ad::log(t.constant(Matrix<double>::Constant(1, 1, -1.0)));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.primitive(), "log");
  }
}

TEST(Autodiff, ConstantsKeepNoAdjoint) {
  Tape<double> t;
  Var<double> c = t.constant(Matrix<double>::Ones(2, 2));
  Var<double> v = t.variable(Matrix<double>::Ones(2, 2));
  Var<double> s = ad::sum(c * v + c);
  t.backward(s);
  EXPECT_FALSE(t.has_grad(c.id()));
  EXPECT_EQ(v.grad(), Matrix<double>::Ones(2, 2));
}

TEST(GradientCheck, SquareAtThree) {
  ParameterStore<double> p;
  p.add("x", Matrix<double>::Constant(1, 1, 3.0));
  const Fragment<double> f = [](Binding<double>& b) { return ad::sum(ad::square(b("x"))); };
  EXPECT_DOUBLE_EQ(evaluate_with_gradients(f, p).gradients.at("x")(0, 0), 6.0);
  const auto report = gradient_check(f, p);
  EXPECT_TRUE(report.passed);
  EXPECT_LE(report.parameters[0].max_absolute_error, 1e-8);
}

TEST(GradientCheck, DetectsAWrongAdjoint) {
  ParameterStore<double> p;
  p.add("x", Matrix<double>::Constant(2, 1, 0.7));
  // A primitive whose recorded adjoint is off by a factor of two.
  const Fragment<double> f = [](Binding<double>& b) {
    Var<double> x = b("x");
    Matrix<double> v = x.value().array().square().matrix();
    Var<double> y = x.tape()->record("bad_square", v, {x}, [x](Tape<double>& t) {
      t.accumulate(x.id(), (t.upstream().array() * 4.0 * x.value().array()).matrix());
    });
    return ad::sum(y);
  };
  EXPECT_FALSE(gradient_check(f, p).passed);
}

TEST(GradientCheck, GruStep) {
  Rng rng(3);
  const int in = 3, H = 4, B = 2;
  ParameterStore<double> p;
  p.add("Wx", random_matrix(3 * H, in, rng));
  p.add("bx", random_matrix(3 * H, 1, rng));
  p.add("Wh", random_matrix(3 * H, H, rng));
  p.add("bh", random_matrix(3 * H, 1, rng));
  p.add("h", random_matrix(H, B, rng));
  const Matrix<double> x = random_matrix(in, B, rng);
  const Matrix<double> target = random_matrix(H, B, rng);
  const Fragment<double> f = [&](Binding<double>& b) {
    Var<double> gx = ad::affine(b("Wx"), b.tape().constant(x), b("bx"));
    Var<double> h = ad::gru_cell(gx, b("h"), b("Wh"), b("bh"));
    return ad::sum(ad::square(h - b.tape().constant(target)));
  };
  expect_passes(f, p, "gru");
}

TEST(GradientCheck, ElementwisePrimitives) {
  Rng rng(4);
  ParameterStore<double> p;
  p.add("a", random_matrix(3, 4, rng));
  p.add("b", random_matrix(3, 4, rng, 0.5, 2.0));
  p.add("w", random_matrix(2, 3, rng));
  const Matrix<double> mask = (random_matrix(3, 3, rng).array() > -0.5).cast<double>().matrix() +
                              Matrix<double>::Identity(3, 3);
  const Fragment<double> f = [&](Binding<double>& bd) {
    Var<double> a = bd("a"), b = bd("b"), w = bd("w");
    Var<double> s = ad::sum(ad::sigmoid(a) * ad::tanh(b)) + ad::sum(ad::softplus(a)) + ad::sum(ad::exp(a * 0.3));
    s = s + ad::sum(ad::log(b)) + ad::sum(ad::sqrt(b)) + ad::sum(a / b) + ad::mean(ad::abs(a + 3.0));
    s = s + ad::sum(ad::matmul(w, a)) + ad::logsumexp(a) + ad::sum(ad::col_sums(b * b));
    s = s + ad::sum(ad::clamp(a, -0.5, 0.5)) + ad::dot(ad::rows(a, 1, 2), ad::rows(b, 0, 2));
    s = s + ad::sum(ad::l2_normalize_cols(b));
    Var<double> sim = ad::matmul_tn(ad::cols(a, 0, 3), ad::cols(b, 1, 3));
    s = s + ad::sum(ad::masked_logsumexp_rows(sim, mask));
    s = s + ad::sum(ad::concat_rows<double>({a, b}) * 0.5) + ad::sum(ad::concat_cols<double>({a, b * b}));
    std::vector<int> labels{0, 2, 1, 2};
    s = s + ad::softmax_cross_entropy(a, std::span<const int>(labels));
    s = s + ad::gaussian_nll(b, Matrix<double>(Matrix<double>::Ones(3, 4)), 0.7);
    s = s + ad::kl_unit_gaussian(ad::rows(a, 0, 2), ad::rows(b, 1, 2));
    return s;
  };
  expect_passes(f, p, "primitives");
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore<double> p;
  p.add("x", Matrix<double>::Constant(1, 1, 1.0));
  Gradients<double> g{{"x", Matrix<double>::Constant(1, 1, 1.0)}};
  adam_step(p, g, AdamConfig{2e-4, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(1.0 - p.get("x")(0, 0), 2e-4, 1e-10);
  EXPECT_EQ(p.step(), 1);
}

TEST(Adam, ZeroGradientLeavesParametersAndDecaysMoments) {
  ParameterStore<double> p;
  p.add("x", Matrix<double>::Constant(1, 1, 1.0));
  Gradients<double> zero{{"x", Matrix<double>::Zero(1, 1)}};
  adam_step(p, zero, AdamConfig{});
  EXPECT_EQ(p.get("x")(0, 0), 1.0);

  adam_step(p, Gradients<double>{{"x", Matrix<double>::Constant(1, 1, 1.0)}}, AdamConfig{});
  const double m1 = AdamProbe<double>::first(p, "x")(0, 0), v1 = AdamProbe<double>::second(p, "x")(0, 0);
  adam_step(p, zero, AdamConfig{});
  EXPECT_NEAR(AdamProbe<double>::first(p, "x")(0, 0), 0.9 * m1, 1e-15);
  EXPECT_NEAR(AdamProbe<double>::second(p, "x")(0, 0), 0.999 * v1, 1e-15);
}

TEST(Adam, IdenticalRunsAreBitwiseEqual) {
  auto run = [] {
    Rng rng(42);
    ParameterStore<float> p;
    add_affine(p, "l.", 5, 4, rng);
    Rng data(7);
    for (int step = 0; step < 20; ++step) {
      Tape<float> t;
      Binding<float> b(t, p, true);
      Matrix<float> x = Matrix<double>::NullaryExpr(5, 8, [&] { return std::normal_distribution<double>()(data); }).cast<float>();
      Var<float> loss = ad::mean(ad::square(apply_affine(b, "l.", t.constant(x))));
      t.backward(loss);
      adam_step(p, b.gradients(), AdamConfig{});
    }
    return p;
  };
  EXPECT_TRUE(run() == run());
}

TEST(Adam, RejectsNonFiniteGradient) {
  ParameterStore<double> p;
  p.add("x", Matrix<double>::Constant(1, 1, 1.0));
  Gradients<double> g{{"x", Matrix<double>::Constant(1, 1, std::numeric_limits<double>::infinity())}};
  EXPECT_THROW(adam_step(p, g, AdamConfig{}), NumericError);
  EXPECT_EQ(p.get("x")(0, 0), 1.0);
}

TEST(Parameters, InitializationBounds) {
  Rng rng(1);
  ParameterStore<double> p;
  add_affine(p, "a.", 16, 8, rng);
  EXPECT_LE(p.get("a.W").cwiseAbs().maxCoeff(), 0.25);
  EXPECT_EQ(p.get("a.b"), Matrix<double>::Zero(8, 1));
  EXPECT_THROW(p.add("a.W", Matrix<double>::Zero(1, 1)), ConfigError);
  EXPECT_THROW(p.get("missing"), ConfigError);
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng(5);
  ParameterStore<double> p;
  add_affine(p, "enc.", 3, 5, rng);
  Checkpoint ck;
  ck.meta["hidden"] = "5";
  ck.add_store("m/", p);
  std::stringstream ss;
  write_checkpoint(ss, ck);
  EXPECT_EQ(ss.str().substr(0, 10), "TRB-CKPT-1");
  const Checkpoint back = read_checkpoint(ss);
  EXPECT_EQ(back.meta, ck.meta);
  EXPECT_TRUE(back.store<double>("m/") == p);
}

TEST(Checkpoint, RejectsBadMagic) {
  std::stringstream ss("NOT-A-CKPT");
  EXPECT_THROW(read_checkpoint(ss), ParseError);
}
