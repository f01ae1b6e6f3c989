#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "ddm/autograd/ops.hpp"
#include "ddm/core/rng.hpp"
#include "ddm/nn/modules.hpp"

using ddm::Rng;
using ddm::Tape;
using ddm::Tensor;
using ddm::Var;

namespace {

Tensor<double> randn(Rng& rng, int n, int c, int h, int w, double scale = 1.0) {
  Tensor<double> t(n, c, h, w);
  for (auto& e : t.v) e = rng.normal(0.0, scale);
  return t;
}

// Central finite differences of `forward` w.r.t. sampled entries of `theta`,
// compared against the entries of `analytic`.
void check_grad(Tensor<double>& theta, const Tensor<double>& analytic,
                const std::function<double()>& forward, Rng& rng, int samples = 12,
                double tol = 1e-6, double h = 1e-5) {
  ASSERT_EQ(theta.size(), analytic.size());
  for (int s = 0; s < samples; ++s) {
    const std::size_t i = rng.below(theta.size());
    const double keep = theta.v[i];
    theta.v[i] = keep + h;
    const double up = forward();
    theta.v[i] = keep - h;
    const double dn = forward();
    theta.v[i] = keep;
    const double fd = (up - dn) / (2 * h);
    const double an = analytic.v[i];
    const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
    EXPECT_NEAR(std::fabs(fd - an) / denom, 0.0, tol)
        << "entry " << i << " fd=" << fd << " analytic=" << an;
  }
}

// Reference convolution: direct quadruple loop.
Tensor<double> conv_ref(const Tensor<double>& x, const Tensor<double>& w,
                        const Tensor<double>& b, int pad) {
  const int k = w.h;
  const int oh = x.h + 2 * pad - k + 1, ow = x.w + 2 * pad - k + 1;
  Tensor<double> out(x.n, w.n, oh, ow);
  for (int i = 0; i < x.n; ++i)
    for (int oc = 0; oc < w.n; ++oc)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = b.v[oc];
          for (int ic = 0; ic < x.c; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int yy = y + ky - pad, xc = xx + kx - pad;
                if (yy < 0 || yy >= x.h || xc < 0 || xc >= x.w) continue;
                acc += w.at(oc, ic, ky, kx) * x.at(i, ic, yy, xc);
              }
          out.at(i, oc, y, xx) = acc;
        }
  return out;
}

}  // namespace

TEST(Conv2d, MatchesDirectLoop) {
  Rng rng(1);
  for (int k : {1, 3}) {
    const int pad = k / 2;
    auto x = randn(rng, 2, 3, 5, 6);
    auto w = randn(rng, 4, 3, k, k);
    auto b = randn(rng, 4, 1, 1, 1);
    Tape<double> t;
    Var y = ddm::conv2d(t, t.input(x), t.constant(w), t.constant(b), pad);
    auto ref = conv_ref(x, w, b, pad);
    ASSERT_TRUE(t.val(y).same_shape(ref));
    for (std::size_t i = 0; i < ref.size(); ++i)
      EXPECT_NEAR(t.val(y).v[i], ref.v[i], 1e-12);
  }
}

TEST(Conv2d, GradientCheck) {
  Rng rng(2);
  auto x = randn(rng, 2, 3, 6, 5);
  auto w = randn(rng, 4, 3, 3, 3);
  auto b = randn(rng, 4, 1, 1, 1);
  auto r = randn(rng, 2, 4, 6, 5);

  ddm::Parameter<double> pw("w", w), pb("b", b), px("x", x);
  auto forward = [&]() {
    Tape<double> t(false);
    Var y = ddm::conv2d(t, t.input(px.value), t.input(pw.value), t.input(pb.value), 1);
    return t.val(ddm::inner(t, y, r)).v[0];
  };
  Tape<double> t;
  Var loss = ddm::inner(t, ddm::conv2d(t, t.param(px), t.param(pw), t.param(pb), 1), r);
  t.backward(loss);

  check_grad(pw.value, pw.grad, forward, rng);
  check_grad(pb.value, pb.grad, forward, rng, 4);
  check_grad(px.value, px.grad, forward, rng);
}

TEST(ConvTranspose2x, ShapeAndScatter) {
  Rng rng(3);
  auto x = randn(rng, 1, 2, 3, 4);
  auto w = randn(rng, 2, 3, 2, 2);
  auto b = randn(rng, 3, 1, 1, 1);
  Tape<double> t;
  Var y = ddm::conv_transpose2x(t, t.input(x), t.constant(w), t.constant(b));
  const auto& yv = t.val(y);
  ASSERT_EQ(yv.h, 6);
  ASSERT_EQ(yv.w, 8);
  // Direct formula: out(oc, 2y+ky, 2x+kx) = sum_ic w(ic,oc,ky,kx) x(ic,y,x) + b(oc).
  for (int oc = 0; oc < 3; ++oc)
    for (int y2 = 0; y2 < 6; ++y2)
      for (int x2 = 0; x2 < 8; ++x2) {
        double acc = b.v[oc];
        for (int ic = 0; ic < 2; ++ic)
          acc += w.at(ic, oc, y2 % 2, x2 % 2) * x.at(0, ic, y2 / 2, x2 / 2);
        EXPECT_NEAR(yv.at(0, oc, y2, x2), acc, 1e-12);
      }
}

TEST(ConvTranspose2x, GradientCheck) {
  Rng rng(4);
  ddm::Parameter<double> px("x", randn(rng, 2, 3, 4, 3));
  ddm::Parameter<double> pw("w", randn(rng, 3, 2, 2, 2));
  ddm::Parameter<double> pb("b", randn(rng, 2, 1, 1, 1));
  auto r = randn(rng, 2, 2, 8, 6);
  auto forward = [&]() {
    Tape<double> t(false);
    Var y = ddm::conv_transpose2x(t, t.input(px.value), t.input(pw.value), t.input(pb.value));
    return t.val(ddm::inner(t, y, r)).v[0];
  };
  Tape<double> t;
  t.backward(ddm::inner(t, ddm::conv_transpose2x(t, t.param(px), t.param(pw), t.param(pb)), r));
  check_grad(px.value, px.grad, forward, rng);
  check_grad(pw.value, pw.grad, forward, rng);
  check_grad(pb.value, pb.grad, forward, rng, 2);
}

TEST(MaxPool, ForwardAndGradient) {
  Rng rng(5);
  ddm::Parameter<double> px("x", randn(rng, 1, 2, 4, 4));
  Tape<double> t;
  Var y = ddm::maxpool2x2(t, t.param(px));
  const auto& yv = t.val(y);
  ASSERT_EQ(yv.h, 2);
  for (int ch = 0; ch < 2; ++ch)
    for (int y2 = 0; y2 < 2; ++y2)
      for (int x2 = 0; x2 < 2; ++x2) {
        double m = -1e30;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            m = std::max(m, px.value.at(0, ch, 2 * y2 + dy, 2 * x2 + dx));
        EXPECT_EQ(yv.at(0, ch, y2, x2), m);
      }

  auto r = randn(rng, 1, 2, 2, 2);
  auto forward = [&]() {
    Tape<double> tt(false);
    return tt.val(ddm::inner(tt, ddm::maxpool2x2(tt, tt.input(px.value)), r)).v[0];
  };
  Tape<double> t2;
  t2.backward(ddm::inner(t2, ddm::maxpool2x2(t2, t2.param(px)), r));
  check_grad(px.value, px.grad, forward, rng, 8);
}

TEST(BatchNorm, TrainStatsAndRunningUpdate) {
  Rng rng(6);
  auto x = randn(rng, 3, 2, 4, 4, 2.0);
  ddm::Parameter<double> g("g", Tensor<double>(2, 1, 1, 1)), b("b", Tensor<double>(2, 1, 1, 1));
  g.value.fill(1.0);
  Tensor<double> rm(2, 1, 1, 1), rv(2, 1, 1, 1);
  rv.fill(1.0);
  Tape<double> t;
  Var y = ddm::batchnorm(t, t.input(x), t.param(g), t.param(b), rm, rv, true);
  // Normalized output has zero mean / unit variance per channel.
  const auto& yv = t.val(y);
  const double m = 3 * 4 * 4;
  for (int ch = 0; ch < 2; ++ch) {
    double s = 0, sq = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 16; ++j) {
        const double e = yv.plane(i, ch)[j];
        s += e;
        sq += e * e;
      }
    EXPECT_NEAR(s / m, 0.0, 1e-12);
    EXPECT_NEAR(sq / m, 1.0, 1e-4);  // eps shifts variance slightly below 1
    // Running buffers moved toward the batch statistics.
    EXPECT_NE(rm.v[ch], 0.0);
    EXPECT_NE(rv.v[ch], 1.0);
  }
}

TEST(BatchNorm, GradientCheckTrainAndEval) {
  Rng rng(7);
  for (bool train : {true, false}) {
    ddm::Parameter<double> px("x", randn(rng, 2, 3, 3, 3));
    ddm::Parameter<double> pg("g", randn(rng, 3, 1, 1, 1, 0.2));
    ddm::Parameter<double> pb("b", randn(rng, 3, 1, 1, 1, 0.2));
    for (auto& e : pg.value.v) e += 1.0;
    Tensor<double> rm = randn(rng, 3, 1, 1, 1, 0.3);
    Tensor<double> rv(3, 1, 1, 1);
    for (auto& e : rv.v) e = 1.0 + 0.2 * rng.uniform();
    auto r = randn(rng, 2, 3, 3, 3);
    // Keep running buffers fixed across evaluations so the objective is a
    // pure function of the inputs.
    auto forward = [&]() {
      Tensor<double> rm2 = rm, rv2 = rv;
      Tape<double> t(false);
      Var y = ddm::batchnorm(t, t.input(px.value), t.input(pg.value), t.input(pb.value), rm2,
                             rv2, train);
      return t.val(ddm::inner(t, y, r)).v[0];
    };
    Tensor<double> rm2 = rm, rv2 = rv;
    Tape<double> t;
    t.backward(
        ddm::inner(t, ddm::batchnorm(t, t.param(px), t.param(pg), t.param(pb), rm2, rv2, train),
                   r));
    check_grad(px.value, px.grad, forward, rng, 10, 1e-5);
    check_grad(pg.value, pg.grad, forward, rng, 3, 1e-5);
    check_grad(pb.value, pb.grad, forward, rng, 3, 1e-5);
  }
}

TEST(ConcatSliceUpsample, ForwardAndGradient) {
  Rng rng(8);
  ddm::Parameter<double> pa("a", randn(rng, 1, 2, 2, 2));
  ddm::Parameter<double> pb("b", randn(rng, 1, 3, 2, 2));
  auto r = randn(rng, 1, 5, 2, 2);
  {
    Tape<double> t;
    Var y = ddm::concat_channels(t, t.param(pa), t.param(pb));
    EXPECT_EQ(t.val(y).c, 5);
    EXPECT_EQ(t.val(y).at(0, 3, 1, 1), pb.value.at(0, 1, 1, 1));
    t.backward(ddm::inner(t, y, r));
    auto forward = [&]() {
      Tape<double> tt(false);
      return tt
          .val(ddm::inner(tt, ddm::concat_channels(tt, tt.input(pa.value), tt.input(pb.value)),
                          r))
          .v[0];
    };
    check_grad(pa.value, pa.grad, forward, rng, 4);
    check_grad(pb.value, pb.grad, forward, rng, 4);
  }
  {
    Tape<double> t;
    Var s = ddm::slice_channels(t, t.param(pb), 1, 2);
    EXPECT_EQ(t.val(s).c, 2);
    EXPECT_EQ(t.val(s).at(0, 0, 0, 1), pb.value.at(0, 1, 0, 1));
  }
  {
    Tape<double> t;
    Var u = ddm::upsample_nearest2x(t, t.param(pa));
    EXPECT_EQ(t.val(u).h, 4);
    // Each source value replicated into a 2x2 block.
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        EXPECT_EQ(t.val(u).at(0, 1, y, x), pa.value.at(0, 1, y / 2, x / 2));
    auto r4 = randn(rng, 1, 2, 4, 4);
    pa.zero_grad();  // the concat block above already accumulated into it
    t.backward(ddm::inner(t, u, r4));
    auto forward = [&]() {
      Tape<double> tt(false);
      return tt.val(ddm::inner(tt, ddm::upsample_nearest2x(tt, tt.input(pa.value)), r4)).v[0];
    };
    check_grad(pa.value, pa.grad, forward, rng, 6);
  }
}

TEST(SoftmaxPair, PropertiesAndGradient) {
  Rng rng(9);
  ddm::Parameter<double> px("x", randn(rng, 2, 2, 3, 3, 3.0));
  Tape<double> t;
  Var p = ddm::softmax_pair(t, t.param(px));
  const auto& pv = t.val(p);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 9; ++j)
      EXPECT_NEAR(pv.plane(i, 0)[j] + pv.plane(i, 1)[j], 1.0, 1e-12);

  // Shift invariance.
  Tensor<double> shifted = px.value;
  for (auto& e : shifted.v) e += 17.0;
  Tape<double> t2(false);
  const auto& pv2 = t2.val(ddm::softmax_pair(t2, t2.input(shifted)));
  for (std::size_t i = 0; i < pv.size(); ++i) EXPECT_NEAR(pv2.v[i], pv.v[i], 1e-12);

  // Saturation.
  Tensor<double> sat(1, 2, 1, 1);
  sat.at(0, 0, 0, 0) = 20.0;
  sat.at(0, 1, 0, 0) = -20.0;
  Tape<double> t3(false);
  EXPECT_NEAR(t3.val(ddm::softmax_pair(t3, t3.input(sat))).at(0, 0, 0, 0), 1.0, 1e-8);

  auto r = randn(rng, 2, 2, 3, 3);
  t.backward(ddm::inner(t, p, r));
  auto forward = [&]() {
    Tape<double> tt(false);
    return tt.val(ddm::inner(tt, ddm::softmax_pair(tt, tt.input(px.value)), r)).v[0];
  };
  check_grad(px.value, px.grad, forward, rng, 10);
}

TEST(GateBlend, OracleAndGradient) {
  Rng rng(10);
  ddm::Parameter<double> pl("logits", randn(rng, 1, 2, 3, 3));
  ddm::Parameter<double> pa("a", randn(rng, 1, 4, 3, 3));
  ddm::Parameter<double> pb("b", randn(rng, 1, 4, 3, 3));
  auto r = randn(rng, 1, 4, 3, 3);

  Tape<double> t;
  Var g = ddm::softmax_pair(t, t.param(pl));
  Var f = ddm::gate_blend(t, g, t.param(pa), t.param(pb));
  // Brute-force elementwise oracle.
  const auto& gv = t.val(g);
  const auto& fv = t.val(f);
  for (int ch = 0; ch < 4; ++ch)
    for (int j = 0; j < 9; ++j)
      EXPECT_NEAR(fv.plane(0, ch)[j],
                  gv.plane(0, 0)[j] * pa.value.plane(0, ch)[j] +
                      gv.plane(0, 1)[j] * pb.value.plane(0, ch)[j],
                  1e-12);

  t.backward(ddm::inner(t, f, r));
  auto forward = [&]() {
    Tape<double> tt(false);
    Var gg = ddm::softmax_pair(tt, tt.input(pl.value));
    Var ff = ddm::gate_blend(tt, gg, tt.input(pa.value), tt.input(pb.value));
    return tt.val(ddm::inner(tt, ff, r)).v[0];
  };
  check_grad(pl.value, pl.grad, forward, rng, 8);
  check_grad(pa.value, pa.grad, forward, rng, 8);
  check_grad(pb.value, pb.grad, forward, rng, 8);

  // Unnormalized gates are rejected.
  Tensor<double> bad(1, 2, 3, 3);
  bad.fill(0.7);
  Tape<double> t4(false);
  EXPECT_THROW(
      ddm::gate_blend(t4, t4.input(bad), t4.input(pa.value), t4.input(pb.value)),
      std::invalid_argument);
}

TEST(PixelCe, OracleAndGradient) {
  Rng rng(11);
  Tensor<double> p(1, 1, 4, 4), y(1, 1, 4, 4);
  for (auto& e : p.v) e = 0.05 + 0.9 * rng.uniform();
  for (auto& e : y.v) e = rng.uniform();

  double ref = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    ref += -(y.v[i] * std::log(p.v[i]) + (1 - y.v[i]) * std::log(1 - p.v[i]));
  ref /= static_cast<double>(p.size());

  ddm::Parameter<double> pp("p", p);
  Tape<double> t;
  Var l = ddm::pixel_ce(t, t.param(pp), y);
  EXPECT_NEAR(t.val(l).v[0], ref, 1e-12);
  t.backward(l);
  auto forward = [&]() {
    Tape<double> tt(false);
    return tt.val(ddm::pixel_ce(tt, tt.input(pp.value), y)).v[0];
  };
  check_grad(pp.value, pp.grad, forward, rng, 10);

  // p == y == 1 gives zero up to the clamp.
  Tensor<double> ones(1, 1, 2, 2);
  ones.fill(1.0);
  Tape<double> t2(false);
  EXPECT_NEAR(t2.val(ddm::pixel_ce(t2, t2.input(ones), ones)).v[0], 0.0, 1e-6);

  // p == 0.5 gives ln 2 for any target.
  Tensor<double> half(1, 1, 4, 4);
  half.fill(0.5);
  Tape<double> t3(false);
  EXPECT_NEAR(t3.val(ddm::pixel_ce(t3, t3.input(half), y)).v[0], std::log(2.0), 1e-12);
}

TEST(WeightedSum, LinearityAndGradient) {
  Tensor<double> a = Tensor<double>::scalar(2.0), b = Tensor<double>::scalar(-3.0);
  ddm::Parameter<double> pa("a", a), pb("b", b);
  Tape<double> t;
  Var s = ddm::weighted_sum<double>(t, {t.param(pa), t.param(pb)}, {0.5, 1.5});
  EXPECT_NEAR(t.val(s).v[0], 0.5 * 2.0 + 1.5 * (-3.0), 1e-15);
  t.backward(s);
  EXPECT_NEAR(pa.grad.v[0], 0.5, 1e-15);
  EXPECT_NEAR(pb.grad.v[0], 1.5, 1e-15);
}

TEST(SharedParameter, GradAccumulatesAcrossUses) {
  Rng rng(12);
  ddm::Parameter<double> px("x", randn(rng, 1, 1, 2, 2));
  auto r = randn(rng, 1, 1, 2, 2);
  Tape<double> t;
  Var x = t.param(px);
  Var y = ddm::add(t, x, x);
  t.backward(ddm::inner(t, y, r));
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(px.grad.v[i], 2 * r.v[i], 1e-15);
}
