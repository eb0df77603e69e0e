#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "raincast/autograd.hpp"
#include "raincast/ops_kernels.hpp"
#include "raincast/tensor.hpp"

// Differentiable ops. Binary arithmetic broadcasts like the kernels do
// (each dim equal or 1). Every vjp is built from these same ops, so any
// gradient can be differentiated again; the convolution ops close on each
// other through the identity <g, conv(x,w)> = <bwd_input(g,w), x>
//                                           = <bwd_weight(x,g), w>.

namespace raincast {

using kernels::ConvGeom;

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const ConvGeom& geom);
template <class T>
Var<T> conv2d_bwd_input(const Var<T>& gy, const Var<T>& w, const Shape& x_shape,
                        const ConvGeom& geom);
template <class T>
Var<T> conv2d_bwd_weight(const Var<T>& x, const Var<T>& gy, const Shape& w_shape,
                         const ConvGeom& geom);
template <class T>
Var<T> reduce_sum_to(const Var<T>& x, const Shape& target);
template <class T>
Var<T> broadcast_to(const Var<T>& x, const Shape& target);
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> scalar_mul(const Var<T>& x, double s);
template <class T>
Var<T> resize_bilinear(const Var<T>& x, int oh, int ow);
template <class T>
Var<T> resize_bilinear_adjoint(const Var<T>& gy, int ih, int iw);
template <class T>
Var<T> avg_pool(const Var<T>& x, int win);
template <class T>
Var<T> avg_unpool(const Var<T>& gy, int win);
template <class T>
Var<T> slice_channels(const Var<T>& x, int c0, int c1);

namespace detail {
// Shrinks a broadcast-shaped gradient back onto a parent's shape.
template <class T>
Var<T> fit_grad(const Var<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  return reduce_sum_to(g, target);
}
}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tensor<T> v = kernels::broadcast_binary(a.value(), b.value(),
                                          [](T x, T y) { return x + y; });
  return make_op<T>(
      std::move(v), {a, b},
      [sa = a.shape(), sb = b.shape()](const Var<T>& g) {
        return std::vector<Var<T>>{detail::fit_grad(g, sa), detail::fit_grad(g, sb)};
      },
      "add");
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tensor<T> v = kernels::broadcast_binary(a.value(), b.value(),
                                          [](T x, T y) { return x - y; });
  return make_op<T>(
      std::move(v), {a, b},
      [sa = a.shape(), sb = b.shape()](const Var<T>& g) {
        return std::vector<Var<T>>{detail::fit_grad(g, sa),
                                   scalar_mul(detail::fit_grad(g, sb), -1.0)};
      },
      "sub");
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> v = kernels::broadcast_binary(a.value(), b.value(),
                                          [](T x, T y) { return x * y; });
  return make_op<T>(
      std::move(v), {a, b},
      [a, b](const Var<T>& g) {
        return std::vector<Var<T>>{detail::fit_grad(mul(g, b), a.shape()),
                                   detail::fit_grad(mul(g, a), b.shape())};
      },
      "mul");
}

template <class T>
Var<T> scalar_mul(const Var<T>& x, double s) {
  Tensor<T> v = x.value();
  for (T& e : v.data) e = static_cast<T>(e * s);
  return make_op<T>(
      std::move(v), {x},
      [s](const Var<T>& g) { return std::vector<Var<T>>{scalar_mul(g, s)}; },
      "scalar_mul");
}

template <class T>
Var<T> neg(const Var<T>& x) {
  return scalar_mul(x, -1.0);
}

template <class T>
Var<T> add_scalar(const Var<T>& x, double s) {
  Tensor<T> v = x.value();
  for (T& e : v.data) e = static_cast<T>(e + s);
  return make_op<T>(
      std::move(v), {x},
      [](const Var<T>& g) { return std::vector<Var<T>>{g}; }, "add_scalar");
}

template <class T>
Var<T> square(const Var<T>& x) {
  return mul(x, x);
}

// |x|; subgradient 0 at the origin.
template <class T>
Var<T> vabs(const Var<T>& x) {
  Tensor<T> v = x.value();
  Tensor<T> sign(v.shape);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    sign.data[i] = v.data[i] > T(0) ? T(1) : (v.data[i] < T(0) ? T(-1) : T(0));
    v.data[i] = std::abs(v.data[i]);
  }
  Var<T> mask = Var<T>::constant(std::move(sign));
  return make_op<T>(
      std::move(v), {x},
      [mask](const Var<T>& g) { return std::vector<Var<T>>{mul(g, mask)}; },
      "abs");
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> v = x.value();
  Tensor<T> m(v.shape);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (v.data[i] > T(0)) {
      m.data[i] = T(1);
    } else {
      v.data[i] = T(0);
    }
  }
  Var<T> mask = Var<T>::constant(std::move(m));
  return make_op<T>(
      std::move(v), {x},
      [mask](const Var<T>& g) { return std::vector<Var<T>>{mul(g, mask)}; },
      "relu");
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, double alpha) {
  Tensor<T> v = x.value();
  Tensor<T> m(v.shape);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (v.data[i] > T(0)) {
      m.data[i] = T(1);
    } else {
      m.data[i] = static_cast<T>(alpha);
      v.data[i] = static_cast<T>(v.data[i] * alpha);
    }
  }
  Var<T> mask = Var<T>::constant(std::move(m));
  return make_op<T>(
      std::move(v), {x},
      [mask](const Var<T>& g) { return std::vector<Var<T>>{mul(g, mask)}; },
      "leaky_relu");
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> v = x.value();
  for (T& e : v.data) {
    e = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(e))));
  }
  // The vjp rebuilds sigma(x) from the parent rather than capturing this
  // op's output, so the node owns no reference to itself.
  return make_op<T>(
      std::move(v), {x},
      [x](const Var<T>& g) {
        Var<T> s = sigmoid(x);
        Var<T> one_minus = add_scalar(neg(s), 1.0);
        return std::vector<Var<T>>{mul(g, mul(s, one_minus))};
      },
      "sigmoid");
}

template <class T>
Var<T> recip(const Var<T>& x) {
  Tensor<T> v = x.value();
  for (T& e : v.data) e = T(1) / e;
  return make_op<T>(
      std::move(v), {x},
      [x](const Var<T>& g) {
        Var<T> r = recip(x);
        return std::vector<Var<T>>{neg(mul(g, mul(r, r)))};
      },
      "recip");
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return mul(a, recip(b));
}

// sqrt(x + eps); the epsilon keeps the derivative finite at zero, which the
// gradient-norm penalty relies on.
template <class T>
Var<T> sqrt_eps(const Var<T>& x, double eps = 1e-12) {
  Tensor<T> v = x.value();
  for (T& e : v.data) {
    e = static_cast<T>(std::sqrt(static_cast<double>(e) + eps));
  }
  return make_op<T>(
      std::move(v), {x},
      [x, eps](const Var<T>& g) {
        Var<T> r = sqrt_eps(x, eps);
        return std::vector<Var<T>>{mul(g, scalar_mul(recip(r), 0.5))};
      },
      "sqrt_eps");
}

// Clamp with zero gradient outside the open interval; used to keep sigmoid
// heads strictly interior when float rounding would saturate them.
template <class T>
Var<T> clamp(const Var<T>& x, double lo, double hi) {
  Tensor<T> v = x.value();
  Tensor<T> m(v.shape);
  const T tlo = static_cast<T>(lo), thi = static_cast<T>(hi);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (v.data[i] < tlo) {
      v.data[i] = tlo;
    } else if (v.data[i] > thi) {
      v.data[i] = thi;
    } else {
      m.data[i] = T(1);
    }
  }
  Var<T> mask = Var<T>::constant(std::move(m));
  return make_op<T>(
      std::move(v), {x},
      [mask](const Var<T>& g) { return std::vector<Var<T>>{mul(g, mask)}; },
      "clamp");
}

template <class T>
Var<T> reduce_sum_to(const Var<T>& x, const Shape& target) {
  if (x.shape() == target) return x;
  Tensor<T> v = kernels::reduce_to(x.value(), target);
  return make_op<T>(
      std::move(v), {x},
      [sx = x.shape()](const Var<T>& g) {
        return std::vector<Var<T>>{broadcast_to(g, sx)};
      },
      "reduce_sum_to");
}

template <class T>
Var<T> broadcast_to(const Var<T>& x, const Shape& target) {
  if (x.shape() == target) return x;
  Tensor<T> v = kernels::broadcast_to(x.value(), target);
  return make_op<T>(
      std::move(v), {x},
      [sx = x.shape()](const Var<T>& g) {
        return std::vector<Var<T>>{reduce_sum_to(g, sx)};
      },
      "broadcast_to");
}

template <class T>
Var<T> sum_all(const Var<T>& x) {
  return reduce_sum_to(x, Shape{1, 1, 1, 1});
}

template <class T>
Var<T> mean_all(const Var<T>& x) {
  return scalar_mul(sum_all(x), 1.0 / static_cast<double>(x.shape().numel()));
}

// Per-sample sum over H, W, C, kept as [N,1,1,1].
template <class T>
Var<T> sum_per_sample(const Var<T>& x) {
  return reduce_sum_to(x, Shape{x.shape().n, 1, 1, 1});
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const ConvGeom& geom) {
  Tensor<T> v = kernels::conv_fwd(x.value(), w.value(), geom);
  return make_op<T>(
      std::move(v), {x, w},
      [x, w, geom](const Var<T>& g) {
        return std::vector<Var<T>>{conv2d_bwd_input(g, w, x.shape(), geom),
                                   conv2d_bwd_weight(x, g, w.shape(), geom)};
      },
      "conv2d");
}

template <class T>
Var<T> conv2d_bwd_input(const Var<T>& gy, const Var<T>& w, const Shape& x_shape,
                        const ConvGeom& geom) {
  Tensor<T> v = kernels::conv_bwd_input(gy.value(), w.value(), x_shape, geom);
  return make_op<T>(
      std::move(v), {gy, w},
      [gy, w, geom](const Var<T>& gx) {
        return std::vector<Var<T>>{conv2d(gx, w, geom),
                                   conv2d_bwd_weight(gx, gy, w.shape(), geom)};
      },
      "conv2d_bwd_input");
}

template <class T>
Var<T> conv2d_bwd_weight(const Var<T>& x, const Var<T>& gy, const Shape& w_shape,
                         const ConvGeom& geom) {
  Tensor<T> v = kernels::conv_bwd_weight(x.value(), gy.value(), w_shape, geom);
  return make_op<T>(
      std::move(v), {x, gy},
      [x, gy, geom](const Var<T>& gw) {
        return std::vector<Var<T>>{conv2d_bwd_input(gy, gw, x.shape(), geom),
                                   conv2d(x, gw, geom)};
      },
      "conv2d_bwd_weight");
}

// Fully connected layer as a pointwise convolution on [N,1,1,Cin].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w) {
  return conv2d(x, w, ConvGeom{1, 1, 1, 0});
}

template <class T>
Var<T> resize_bilinear(const Var<T>& x, int oh, int ow) {
  Tensor<T> v = kernels::bilinear_resize(x.value(), oh, ow);
  return make_op<T>(
      std::move(v), {x},
      [ih = x.shape().h, iw = x.shape().w](const Var<T>& g) {
        return std::vector<Var<T>>{resize_bilinear_adjoint(g, ih, iw)};
      },
      "resize_bilinear");
}

template <class T>
Var<T> resize_bilinear_adjoint(const Var<T>& gy, int ih, int iw) {
  Tensor<T> v = kernels::bilinear_resize_adjoint(gy.value(), ih, iw);
  return make_op<T>(
      std::move(v), {gy},
      [oh = gy.shape().h, ow = gy.shape().w](const Var<T>& g) {
        return std::vector<Var<T>>{resize_bilinear(g, oh, ow)};
      },
      "resize_bilinear_adjoint");
}

// Doubles both spatial dims, corner-aligned (the grid regridding convention).
template <class T>
Var<T> upsample_2x(const Var<T>& x) {
  return resize_bilinear(x, 2 * x.shape().h, 2 * x.shape().w);
}

// Mean over the spatial dims, keeping batch and channels: [N,H,W,C] -> [N,1,1,C].
template <class T>
Var<T> global_mean_hw(const Var<T>& x) {
  const Shape s = x.shape();
  return scalar_mul(reduce_sum_to(x, Shape{s.n, 1, 1, s.c}),
                    1.0 / (static_cast<double>(s.h) * s.w));
}

template <class T>
Var<T> avg_pool(const Var<T>& x, int win) {
  Tensor<T> v = kernels::avg_pool(x.value(), win);
  return make_op<T>(
      std::move(v), {x},
      [win](const Var<T>& g) { return std::vector<Var<T>>{avg_unpool(g, win)}; },
      "avg_pool");
}

template <class T>
Var<T> avg_unpool(const Var<T>& gy, int win) {
  Tensor<T> v = kernels::avg_unpool(gy.value(), win);
  return make_op<T>(
      std::move(v), {gy},
      [win](const Var<T>& g) { return std::vector<Var<T>>{avg_pool(g, win)}; },
      "avg_unpool");
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  Tensor<T> v = kernels::concat_channels(a.value(), b.value());
  return make_op<T>(
      std::move(v), {a, b},
      [ca = a.shape().c, cb = b.shape().c](const Var<T>& g) {
        return std::vector<Var<T>>{slice_channels(g, 0, ca),
                                   slice_channels(g, ca, ca + cb)};
      },
      "concat_channels");
}

template <class T>
Var<T> slice_channels(const Var<T>& x, int c0, int c1) {
  Tensor<T> v = kernels::slice_channels(x.value(), c0, c1);
  return make_op<T>(
      std::move(v), {x},
      [sx = x.shape(), c0, c1](const Var<T>& g) {
        Var<T> full = g;
        if (c0 > 0) {
          Var<T> left = Var<T>::constant(Tensor<T>(Shape{sx.n, sx.h, sx.w, c0}));
          full = concat_channels(left, full);
        }
        if (c1 < sx.c) {
          Var<T> right =
              Var<T>::constant(Tensor<T>(Shape{sx.n, sx.h, sx.w, sx.c - c1}));
          full = concat_channels(full, right);
        }
        return std::vector<Var<T>>{full};
      },
      "slice_channels");
}

}  // namespace raincast
