#include <cmath>
#include <cstddef>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "raincast/error.hpp"
#include "raincast/ops.hpp"
#include "raincast/rng.hpp"

using namespace raincast;
using gradtest::DT;
using gradtest::DV;
using gradtest::dot;
using gradtest::gradcheck;
using gradtest::rand_tensor;

namespace {

// Direct 7-loop convolution, the oracle for the GEMM path.
DT naive_conv(const DT& x, const DT& w, const kernels::ConvGeom& g) {
  const Shape xs = x.shape;
  const Shape ws = w.shape;
  const int oh = kernels::conv_out_dim(xs.h, g.kh, g.stride, g.pad);
  const int ow = kernels::conv_out_dim(xs.w, g.kw, g.stride, g.pad);
  DT y(Shape{xs.n, oh, ow, ws.c});
  for (int n = 0; n < xs.n; ++n) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        for (int co = 0; co < ws.c; ++co) {
          double acc = 0.0;
          for (int dy = 0; dy < g.kh; ++dy) {
            for (int dx = 0; dx < g.kw; ++dx) {
              const int sy = i * g.stride - g.pad + dy;
              const int sx = j * g.stride - g.pad + dx;
              if (sy < 0 || sy >= xs.h || sx < 0 || sx >= xs.w) continue;
              for (int ci = 0; ci < xs.c; ++ci) {
                acc += x.at(n, sy, sx, ci) * w.at(dy, dx, ci, co);
              }
            }
          }
          y.at(n, i, j, co) = acc;
        }
      }
    }
  }
  return y;
}

}  // namespace

TEST_CASE("netcore: broadcast arithmetic values and gradients") {
  const Shape big{2, 3, 2, 4};
  const Shape row{1, 3, 1, 4};
  const Shape one{1, 1, 1, 1};

  SUBCASE("values broadcast per dim") {
    DT a = rand_tensor(big, 1);
    DT b = rand_tensor(row, 2);
    DV va = DV::constant(a), vb = DV::constant(b);
    DV sum = add(va, vb);
    REQUIRE(sum.shape() == big);
    for (int n = 0; n < big.n; ++n) {
      for (int h = 0; h < big.h; ++h) {
        for (int w = 0; w < big.w; ++w) {
          for (int c = 0; c < big.c; ++c) {
            CHECK(sum.value().at(n, h, w, c) ==
                  doctest::Approx(a.at(n, h, w, c) + b.at(0, h, 0, c)).epsilon(1e-12));
          }
        }
      }
    }
  }

  SUBCASE("add, sub, mul gradcheck with mixed shapes") {
    gradcheck(
        [&](const std::vector<DV>& p) {
          DV t = mul(add(p[0], p[1]), sub(p[0], p[2]));
          return mean_all(t);
        },
        {rand_tensor(big, 3), rand_tensor(row, 4), rand_tensor(one, 5)});
  }

  SUBCASE("shared parent accumulates") {
    DV x = DV::param(rand_tensor(Shape{1, 1, 1, 5}, 6));
    DV L = sum_all(add(x, x));
    const std::vector<DV> g = grad(L, {x});
    for (double v : g[0].value().data) CHECK(v == doctest::Approx(2.0).epsilon(1e-12));
  }

  SUBCASE("incompatible shapes rejected") {
    DV a = DV::constant(rand_tensor(Shape{2, 3, 2, 4}, 7));
    DV b = DV::constant(rand_tensor(Shape{2, 2, 2, 4}, 8));
    CHECK_THROWS_AS(add(a, b), ValidationError);
  }
}

TEST_CASE("netcore: elementwise op gradients") {
  const Shape s{2, 3, 3, 2};

  SUBCASE("relu") {
    gradcheck([](const std::vector<DV>& p) { return mean_all(relu(p[0])); },
              {rand_tensor(s, 10)});
  }
  SUBCASE("leaky_relu") {
    gradcheck(
        [](const std::vector<DV>& p) {
          return mean_all(square(leaky_relu(p[0], 0.2)));
        },
        {rand_tensor(s, 11)});
  }
  SUBCASE("sigmoid") {
    gradcheck([](const std::vector<DV>& p) { return mean_all(sigmoid(p[0])); },
              {rand_tensor(s, 12, 0.0, 2.0)});
  }
  SUBCASE("abs") {
    gradcheck([](const std::vector<DV>& p) { return mean_all(vabs(p[0])); },
              {rand_tensor(s, 13)});
  }
  SUBCASE("recip and div") {
    gradcheck(
        [](const std::vector<DV>& p) {
          return mean_all(div(p[0], p[1]));
        },
        {rand_tensor(s, 14), rand_tensor(s, 15, 0.5, 1.5, false)});
  }
  SUBCASE("sqrt_eps") {
    gradcheck(
        [](const std::vector<DV>& p) { return mean_all(sqrt_eps(p[0])); },
        {rand_tensor(s, 16, 0.2, 2.0, false)});
  }
  SUBCASE("scalar ops") {
    gradcheck(
        [](const std::vector<DV>& p) {
          return mean_all(add_scalar(scalar_mul(p[0], -1.7), 0.3));
        },
        {rand_tensor(s, 17)});
  }
  SUBCASE("sigmoid value") {
    DV x = DV::constant(DT::scalar(0.0));
    CHECK(sigmoid(x).value().data[0] == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("netcore: reductions and broadcast") {
  SUBCASE("sum_per_sample values") {
    DT t(Shape{2, 1, 2, 2});
    t.data = {1, 2, 3, 4, 10, 20, 30, 40};
    DV v = DV::constant(t);
    DV s = sum_per_sample(v);
    REQUIRE(s.shape() == Shape{2, 1, 1, 1});
    CHECK(s.value().data[0] == doctest::Approx(10.0));
    CHECK(s.value().data[1] == doctest::Approx(100.0));
  }

  SUBCASE("reduce then broadcast gradcheck") {
    const Shape s{2, 2, 3, 2};
    gradcheck(
        [&](const std::vector<DV>& p) {
          DV per = sum_per_sample(p[0]);
          DV back = broadcast_to(per, s);
          return mean_all(mul(back, p[0]));
        },
        {rand_tensor(s, 20)});
  }

  SUBCASE("reduce over channels only") {
    const Shape s{1, 2, 2, 3};
    gradcheck(
        [&](const std::vector<DV>& p) {
          return sum_all(square(reduce_sum_to(p[0], Shape{1, 2, 2, 1})));
        },
        {rand_tensor(s, 21)});
  }
}

TEST_CASE("netcore: conv2d matches direct convolution") {
  struct Case {
    Shape x, w;
    kernels::ConvGeom g;
  };
  const Case cases[] = {
      {{2, 5, 6, 3}, {3, 3, 3, 4}, {3, 3, 1, 1}},
      {{1, 6, 6, 2}, {3, 3, 2, 3}, {3, 3, 2, 1}},  // even input, floor semantics
      {{2, 5, 5, 3}, {1, 1, 3, 5}, {1, 1, 1, 0}},
      {{1, 4, 5, 2}, {2, 3, 2, 2}, {2, 3, 1, 1}},
  };
  int k = 0;
  for (const Case& c : cases) {
    CAPTURE(k);
    DT x = rand_tensor(c.x, 30 + k);
    DT w = rand_tensor(c.w, 60 + k);
    const DT want = naive_conv(x, w, c.g);
    const DT got = kernels::conv_fwd(x, w, c.g);
    REQUIRE(got.shape == want.shape);
    for (std::size_t i = 0; i < want.data.size(); ++i) {
      CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-10));
    }
    ++k;
  }
  // 128 -> 64 style even-size halving.
  CHECK(kernels::conv_out_dim(128, 3, 2, 1) == 64);
  CHECK(kernels::conv_out_dim(16, 3, 2, 1) == 8);
}

TEST_CASE("netcore: conv2d first-order gradients") {
  struct Case {
    Shape x, w;
    kernels::ConvGeom g;
  };
  const Case cases[] = {
      {{1, 4, 5, 2}, {3, 3, 2, 3}, {3, 3, 1, 1}},
      {{2, 6, 6, 2}, {3, 3, 2, 2}, {3, 3, 2, 1}},
      {{2, 3, 3, 4}, {1, 1, 4, 3}, {1, 1, 1, 0}},
  };
  int k = 0;
  for (const Case& c : cases) {
    CAPTURE(k);
    const int oh = kernels::conv_out_dim(c.x.h, c.g.kh, c.g.stride, c.g.pad);
    const int ow = kernels::conv_out_dim(c.x.w, c.g.kw, c.g.stride, c.g.pad);
    const DT probe = rand_tensor(Shape{c.x.n, oh, ow, c.w.c}, 90 + k);
    gradcheck(
        [&](const std::vector<DV>& p) {
          DV y = conv2d(p[0], p[1], c.g);
          return sum_all(mul(y, DV::constant(probe)));
        },
        {rand_tensor(c.x, 40 + k), rand_tensor(c.w, 70 + k)});
    ++k;
  }
}

TEST_CASE("netcore: conv2d second-order gradients") {
  const Shape xs{1, 4, 4, 2};
  const Shape ws{3, 3, 2, 2};
  const kernels::ConvGeom g{3, 3, 1, 1};

  SUBCASE("gradient-of-gradient through the full closure") {
    // phi(x, w) = sum_i (d/dx_i sum(conv(x,w)^2))^2; finite differences in
    // both arguments must match the graph built by the nested grad call.
    gradcheck(
        [&](const std::vector<DV>& p) {
          DV L = sum_all(square(conv2d(p[0], p[1], g)));
          const std::vector<DV> gx = grad(L, {p[0]}, /*create_graph=*/true);
          return sum_all(square(gx[0]));
        },
        {rand_tensor(xs, 50), rand_tensor(ws, 51)},
        1e-5);
  }

  SUBCASE("weight gradient differentiated with respect to the input") {
    gradcheck(
        [&](const std::vector<DV>& p) {
          DV L = sum_all(square(conv2d(p[0], p[1], g)));
          const std::vector<DV> gw = grad(L, {p[1]}, /*create_graph=*/true);
          return sum_all(square(gw[0]));
        },
        {rand_tensor(xs, 52), rand_tensor(ws, 53)},
        1e-5);
  }
}

TEST_CASE("netcore: resize and pooling adjoint pairs") {
  SUBCASE("bilinear adjoint identity") {
    const DT x = rand_tensor(Shape{2, 5, 7, 3}, 60);
    const DT y = rand_tensor(Shape{2, 11, 13, 3}, 61);
    const DT ax = kernels::bilinear_resize(x, 11, 13);
    const DT aty = kernels::bilinear_resize_adjoint(y, 5, 7);
    CHECK(dot(ax, y) == doctest::Approx(dot(x, aty)).epsilon(1e-12));
  }

  SUBCASE("pool adjoint identity") {
    const DT x = rand_tensor(Shape{2, 4, 6, 3}, 62);
    const DT y = rand_tensor(Shape{2, 2, 3, 3}, 63);
    const DT ax = kernels::avg_pool(x, 2);
    const DT aty = kernels::avg_unpool(y, 2);
    CHECK(dot(ax, y) == doctest::Approx(dot(x, aty)).epsilon(1e-12));
  }

  SUBCASE("resize value sanity") {
    DT t(Shape{1, 2, 2, 1});
    t.data = {0.0, 1.0, 2.0, 3.0};
    const DT up = kernels::bilinear_resize(t, 3, 3);
    CHECK(up.at(0, 0, 0, 0) == doctest::Approx(0.0));
    CHECK(up.at(0, 2, 2, 0) == doctest::Approx(3.0));   // corners preserved
    CHECK(up.at(0, 1, 1, 0) == doctest::Approx(1.5));   // center is the mean
    const DT same = kernels::bilinear_resize(t, 2, 2);
    for (std::size_t i = 0; i < t.data.size(); ++i) CHECK(same.data[i] == t.data[i]);
  }

  SUBCASE("pool and unpool values") {
    DT t(Shape{1, 2, 2, 1});
    t.data = {1.0, 2.0, 3.0, 4.0};
    CHECK(kernels::avg_pool(t, 2).data[0] == doctest::Approx(2.5));
    const DT spread = kernels::avg_unpool(DT::scalar(1.0), 2);
    for (double v : spread.data) CHECK(v == doctest::Approx(0.25));
  }

  SUBCASE("resize gradcheck both directions") {
    const DT probe_up = rand_tensor(Shape{1, 7, 9, 2}, 64);
    gradcheck(
        [&](const std::vector<DV>& p) {
          return sum_all(mul(resize_bilinear(p[0], 7, 9), DV::constant(probe_up)));
        },
        {rand_tensor(Shape{1, 3, 4, 2}, 65)});
    const DT probe_down = rand_tensor(Shape{1, 3, 4, 2}, 66);
    gradcheck(
        [&](const std::vector<DV>& p) {
          return sum_all(
              mul(resize_bilinear_adjoint(p[0], 3, 4), DV::constant(probe_down)));
        },
        {rand_tensor(Shape{1, 7, 9, 2}, 67)});
  }

  SUBCASE("pool gradcheck") {
    gradcheck(
        [](const std::vector<DV>& p) {
          return mean_all(square(avg_pool(p[0], 2)));
        },
        {rand_tensor(Shape{2, 4, 4, 3}, 68)});
  }
}

TEST_CASE("netcore: concat and slice") {
  SUBCASE("round trip") {
    const DT a = rand_tensor(Shape{2, 3, 3, 2}, 70);
    const DT b = rand_tensor(Shape{2, 3, 3, 3}, 71);
    DV cat = concat_channels(DV::constant(a), DV::constant(b));
    REQUIRE(cat.shape() == Shape{2, 3, 3, 5});
    DV sa = slice_channels(cat, 0, 2);
    DV sb = slice_channels(cat, 2, 5);
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(sa.value().data[i] == a.data[i]);
    for (std::size_t i = 0; i < b.data.size(); ++i) CHECK(sb.value().data[i] == b.data[i]);
  }

  SUBCASE("gradcheck through concat and interior slice") {
    gradcheck(
        [](const std::vector<DV>& p) {
          DV cat = concat_channels(p[0], p[1]);
          return mean_all(square(slice_channels(cat, 1, 4)));
        },
        {rand_tensor(Shape{1, 3, 2, 2}, 72), rand_tensor(Shape{1, 3, 2, 3}, 73)});
  }
}

TEST_CASE("netcore: graph bookkeeping") {
  SUBCASE("unreachable input gets a zero gradient") {
    DV x = DV::param(rand_tensor(Shape{1, 1, 1, 3}, 80));
    DV y = DV::param(rand_tensor(Shape{1, 1, 1, 3}, 81));
    DV L = sum_all(square(x));
    const std::vector<DV> gs = grad(L, {x, y});
    REQUIRE(gs[1].shape() == y.shape());
    for (double v : gs[1].value().data) CHECK(v == 0.0);
  }

  SUBCASE("detach blocks gradient flow") {
    DV x = DV::param(rand_tensor(Shape{1, 1, 1, 4}, 82));
    DV L = sum_all(mul(x.detach(), x));
    const std::vector<DV> gs = grad(L, {x});
    // d/dx sum(c * x) with c = x detached: gradient equals the values.
    for (int i = 0; i < 4; ++i) {
      CHECK(gs[0].value().data[i] == doctest::Approx(x.value().data[i]).epsilon(1e-12));
    }
  }

  SUBCASE("no-grad mode produces constants") {
    DV x = DV::param(rand_tensor(Shape{1, 1, 1, 4}, 83));
    NoGradGuard guard;
    DV y = square(x);
    CHECK_FALSE(y.requires_grad());
  }

  SUBCASE("grad requires a scalar output") {
    DV x = DV::param(rand_tensor(Shape{1, 1, 1, 4}, 84));
    DV y = square(x);
    CHECK_THROWS_AS(grad(y, {x}), ValidationError);
  }
}

TEST_CASE("netcore: invalid op arguments are rejected") {
  DV x = DV::constant(rand_tensor(Shape{1, 4, 4, 3}, 85));
  DV w = DV::constant(rand_tensor(Shape{3, 3, 2, 4}, 86));  // wrong Cin
  CHECK_THROWS_AS(conv2d(x, w, kernels::ConvGeom{3, 3, 1, 1}), ValidationError);
  CHECK_THROWS_AS(avg_pool(x, 3), ValidationError);  // 3 does not divide 4
  DV other = DV::constant(rand_tensor(Shape{1, 3, 4, 1}, 87));
  CHECK_THROWS_AS(concat_channels(x, other), ValidationError);
  CHECK_THROWS_AS(slice_channels(x, 2, 2), ValidationError);
}
