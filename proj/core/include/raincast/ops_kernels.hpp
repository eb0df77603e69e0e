#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "raincast/tensor.hpp"

// Raw tensor kernels behind the autodiff ops. Everything is sequential and
// deterministic; matrix products go through Eigen. Activations are NHWC;
// convolution weights are [kh, kw, Cin, Cout], which viewed row-major is
// exactly the (kh*kw*Cin) x Cout matrix the im2col product needs.

namespace raincast::kernels {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const MatRM<T>>;
template <class T>
using MMap = Eigen::Map<MatRM<T>>;

struct ConvGeom {
  int kh = 3, kw = 3, stride = 1, pad = 1;
};

// Floor semantics: taps that would start past the padded edge are dropped.
inline int conv_out_dim(int in, int k, int stride, int pad) {
  const int span = in + 2 * pad - k;
  require_shape(span >= 0 && stride > 0, "conv: kernel larger than padded input");
  return span / stride + 1;
}

inline bool is_pointwise(const ConvGeom& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

// Patch matrix: rows indexed by (n, oh, ow), columns by (kh, kw, cin).
// Out-of-bounds taps contribute zeros.
template <class T>
Tensor<T> im2col(const Tensor<T>& x, const ConvGeom& g, int oh, int ow) {
  const Shape s = x.shape;
  const int cols = g.kh * g.kw * s.c;
  Tensor<T> out(Shape{s.n * oh * ow, 1, 1, cols});
  T* dst = out.data.data();
  for (int n = 0; n < s.n; ++n) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        for (int dy = 0; dy < g.kh; ++dy) {
          const int sy = i * g.stride - g.pad + dy;
          for (int dx = 0; dx < g.kw; ++dx) {
            const int sx = j * g.stride - g.pad + dx;
            if (sy >= 0 && sy < s.h && sx >= 0 && sx < s.w) {
              const T* src = &x.data[s.index(n, sy, sx, 0)];
              std::copy(src, src + s.c, dst);
            } else {
              std::fill(dst, dst + s.c, T(0));
            }
            dst += s.c;
          }
        }
      }
    }
  }
  return out;
}

// Adjoint of im2col: scatter-adds patch columns back onto the input grid.
template <class T>
Tensor<T> col2im(const Tensor<T>& cols, const Shape& x_shape, const ConvGeom& g,
                 int oh, int ow) {
  Tensor<T> x(x_shape);
  const T* src = cols.data.data();
  for (int n = 0; n < x_shape.n; ++n) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        for (int dy = 0; dy < g.kh; ++dy) {
          const int sy = i * g.stride - g.pad + dy;
          for (int dx = 0; dx < g.kw; ++dx) {
            const int sx = j * g.stride - g.pad + dx;
            if (sy >= 0 && sy < x_shape.h && sx >= 0 && sx < x_shape.w) {
              T* dst = &x.data[x_shape.index(n, sy, sx, 0)];
              for (int c = 0; c < x_shape.c; ++c) dst[c] += src[c];
            }
            src += x_shape.c;
          }
        }
      }
    }
  }
  return x;
}

inline void check_conv_args(const Shape& x, const Shape& w, const ConvGeom& g) {
  require_shape(w.n == g.kh && w.h == g.kw && w.w == x.c,
                "conv: weight shape does not match input channels/geometry");
}

template <class T>
Tensor<T> conv_fwd(const Tensor<T>& x, const Tensor<T>& w, const ConvGeom& g) {
  check_conv_args(x.shape, w.shape, g);
  const int oh = conv_out_dim(x.shape.h, g.kh, g.stride, g.pad);
  const int ow = conv_out_dim(x.shape.w, g.kw, g.stride, g.pad);
  const int cout = w.shape.c;
  const int k = g.kh * g.kw * x.shape.c;
  Tensor<T> y(Shape{x.shape.n, oh, ow, cout});
  const int rows = x.shape.n * oh * ow;
  if (is_pointwise(g)) {
    MMap<T>(y.data.data(), rows, cout).noalias() =
        CMap<T>(x.data.data(), rows, k) * CMap<T>(w.data.data(), k, cout);
  } else {
    const Tensor<T> cols = im2col(x, g, oh, ow);
    MMap<T>(y.data.data(), rows, cout).noalias() =
        CMap<T>(cols.data.data(), rows, k) * CMap<T>(w.data.data(), k, cout);
  }
  return y;
}

template <class T>
Tensor<T> conv_bwd_input(const Tensor<T>& gy, const Tensor<T>& w, const Shape& x_shape,
                         const ConvGeom& g) {
  check_conv_args(x_shape, w.shape, g);
  const int oh = conv_out_dim(x_shape.h, g.kh, g.stride, g.pad);
  const int ow = conv_out_dim(x_shape.w, g.kw, g.stride, g.pad);
  require_shape(gy.shape == Shape{x_shape.n, oh, ow, w.shape.c},
                "conv_bwd_input: output-gradient shape mismatch");
  const int rows = x_shape.n * oh * ow;
  const int k = g.kh * g.kw * x_shape.c;
  if (is_pointwise(g)) {
    Tensor<T> dx(x_shape);
    MMap<T>(dx.data.data(), rows, k).noalias() =
        CMap<T>(gy.data.data(), rows, w.shape.c) *
        CMap<T>(w.data.data(), k, w.shape.c).transpose();
    return dx;
  }
  Tensor<T> dcols(Shape{rows, 1, 1, k});
  MMap<T>(dcols.data.data(), rows, k).noalias() =
      CMap<T>(gy.data.data(), rows, w.shape.c) *
      CMap<T>(w.data.data(), k, w.shape.c).transpose();
  return col2im(dcols, x_shape, g, oh, ow);
}

template <class T>
Tensor<T> conv_bwd_weight(const Tensor<T>& x, const Tensor<T>& gy, const Shape& w_shape,
                          const ConvGeom& g) {
  check_conv_args(x.shape, w_shape, g);
  const int oh = conv_out_dim(x.shape.h, g.kh, g.stride, g.pad);
  const int ow = conv_out_dim(x.shape.w, g.kw, g.stride, g.pad);
  require_shape(gy.shape == Shape{x.shape.n, oh, ow, w_shape.c},
                "conv_bwd_weight: output-gradient shape mismatch");
  const int rows = x.shape.n * oh * ow;
  const int k = g.kh * g.kw * x.shape.c;
  Tensor<T> dw(w_shape);
  if (is_pointwise(g)) {
    MMap<T>(dw.data.data(), k, w_shape.c).noalias() =
        CMap<T>(x.data.data(), rows, k).transpose() *
        CMap<T>(gy.data.data(), rows, w_shape.c);
  } else {
    const Tensor<T> cols = im2col(x, g, oh, ow);
    MMap<T>(dw.data.data(), k, w_shape.c).noalias() =
        CMap<T>(cols.data.data(), rows, k).transpose() *
        CMap<T>(gy.data.data(), rows, w_shape.c);
  }
  return dw;
}

// Corner-aligned bilinear resize over H and W, separately per sample and
// channel; matches the grid regridding convention.
template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int oh, int ow) {
  const Shape s = x.shape;
  require_shape(oh > 0 && ow > 0, "bilinear_resize: bad output dims");
  Tensor<T> y(Shape{s.n, oh, ow, s.c});
  const double sy = oh > 1 ? static_cast<double>(s.h - 1) / (oh - 1) : 0.0;
  const double sx = ow > 1 ? static_cast<double>(s.w - 1) / (ow - 1) : 0.0;
  for (int i = 0; i < oh; ++i) {
    const double fy = i * sy;
    const int y0 = std::min(static_cast<int>(fy), s.h - 1);
    const int y1 = std::min(y0 + 1, s.h - 1);
    const double wy = fy - y0;
    for (int j = 0; j < ow; ++j) {
      const double fx = j * sx;
      const int x0 = std::min(static_cast<int>(fx), s.w - 1);
      const int x1 = std::min(x0 + 1, s.w - 1);
      const double wx = fx - x0;
      const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
      const double w10 = wy * (1 - wx), w11 = wy * wx;
      for (int n = 0; n < s.n; ++n) {
        const T* p00 = &x.data[s.index(n, y0, x0, 0)];
        const T* p01 = &x.data[s.index(n, y0, x1, 0)];
        const T* p10 = &x.data[s.index(n, y1, x0, 0)];
        const T* p11 = &x.data[s.index(n, y1, x1, 0)];
        T* out = &y.data[y.shape.index(n, i, j, 0)];
        for (int c = 0; c < s.c; ++c) {
          out[c] = static_cast<T>(w00 * p00[c] + w01 * p01[c] + w10 * p10[c] +
                                  w11 * p11[c]);
        }
      }
    }
  }
  return y;
}

// Exact transpose of bilinear_resize(x, oh, ow) for inputs of size ih x iw.
template <class T>
Tensor<T> bilinear_resize_adjoint(const Tensor<T>& gy, int ih, int iw) {
  const Shape s = gy.shape;
  Tensor<T> gx(Shape{s.n, ih, iw, s.c});
  const double sy = s.h > 1 ? static_cast<double>(ih - 1) / (s.h - 1) : 0.0;
  const double sx = s.w > 1 ? static_cast<double>(iw - 1) / (s.w - 1) : 0.0;
  for (int i = 0; i < s.h; ++i) {
    const double fy = i * sy;
    const int y0 = std::min(static_cast<int>(fy), ih - 1);
    const int y1 = std::min(y0 + 1, ih - 1);
    const double wy = fy - y0;
    for (int j = 0; j < s.w; ++j) {
      const double fx = j * sx;
      const int x0 = std::min(static_cast<int>(fx), iw - 1);
      const int x1 = std::min(x0 + 1, iw - 1);
      const double wx = fx - x0;
      const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
      const double w10 = wy * (1 - wx), w11 = wy * wx;
      for (int n = 0; n < s.n; ++n) {
        const T* src = &gy.data[s.index(n, i, j, 0)];
        T* p00 = &gx.data[gx.shape.index(n, y0, x0, 0)];
        T* p01 = &gx.data[gx.shape.index(n, y0, x1, 0)];
        T* p10 = &gx.data[gx.shape.index(n, y1, x0, 0)];
        T* p11 = &gx.data[gx.shape.index(n, y1, x1, 0)];
        for (int c = 0; c < s.c; ++c) {
          const double v = src[c];
          p00[c] += static_cast<T>(w00 * v);
          p01[c] += static_cast<T>(w01 * v);
          p10[c] += static_cast<T>(w10 * v);
          p11[c] += static_cast<T>(w11 * v);
        }
      }
    }
  }
  return gx;
}

// Non-overlapping win x win mean pooling and its adjoint.
template <class T>
Tensor<T> avg_pool(const Tensor<T>& x, int win) {
  const Shape s = x.shape;
  require_shape(win > 0 && s.h % win == 0 && s.w % win == 0,
                "avg_pool: window must tile the input");
  Tensor<T> y(Shape{s.n, s.h / win, s.w / win, s.c});
  const T inv = T(1) / static_cast<T>(win * win);
  for (int n = 0; n < s.n; ++n) {
    for (int i = 0; i < y.shape.h; ++i) {
      for (int j = 0; j < y.shape.w; ++j) {
        T* out = &y.data[y.shape.index(n, i, j, 0)];
        for (int dy = 0; dy < win; ++dy) {
          for (int dx = 0; dx < win; ++dx) {
            const T* src = &x.data[s.index(n, i * win + dy, j * win + dx, 0)];
            for (int c = 0; c < s.c; ++c) out[c] += src[c];
          }
        }
        for (int c = 0; c < s.c; ++c) out[c] *= inv;
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> avg_unpool(const Tensor<T>& gy, int win) {
  const Shape s = gy.shape;
  Tensor<T> gx(Shape{s.n, s.h * win, s.w * win, s.c});
  const T inv = T(1) / static_cast<T>(win * win);
  for (int n = 0; n < s.n; ++n) {
    for (int i = 0; i < s.h; ++i) {
      for (int j = 0; j < s.w; ++j) {
        const T* src = &gy.data[s.index(n, i, j, 0)];
        for (int dy = 0; dy < win; ++dy) {
          for (int dx = 0; dx < win; ++dx) {
            T* dst = &gx.data[gx.shape.index(n, i * win + dy, j * win + dx, 0)];
            for (int c = 0; c < s.c; ++c) dst[c] = src[c] * inv;
          }
        }
      }
    }
  }
  return gx;
}

// Broadcast-compatible output shape: each dim equal, or 1 on one side.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  auto dim = [](int x, int y, const char* what) {
    require_shape(x == y || x == 1 || y == 1, what);
    return std::max(x, y);
  };
  return Shape{dim(a.n, b.n, "broadcast: n"), dim(a.h, b.h, "broadcast: h"),
               dim(a.w, b.w, "broadcast: w"), dim(a.c, b.c, "broadcast: c")};
}

template <class T, class F>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, F&& f) {
  if (a.shape == b.shape) {
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      out.data[i] = f(a.data[i], b.data[i]);
    }
    return out;
  }
  const Shape s = broadcast_shape(a.shape, b.shape);
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int h = 0; h < s.h; ++h) {
      for (int w = 0; w < s.w; ++w) {
        for (int c = 0; c < s.c; ++c) {
          const T av = a.data[a.shape.index(n % a.shape.n, h % a.shape.h,
                                            w % a.shape.w, c % a.shape.c)];
          const T bv = b.data[b.shape.index(n % b.shape.n, h % b.shape.h,
                                            w % b.shape.w, c % b.shape.c)];
          out.data[s.index(n, h, w, c)] = f(av, bv);
        }
      }
    }
  }
  return out;
}

// Sums over every axis where `target` is 1 and the input is larger; the
// remaining axes must match.
template <class T>
Tensor<T> reduce_to(const Tensor<T>& x, const Shape& target) {
  const Shape s = x.shape;
  require_shape((target.n == s.n || target.n == 1) && (target.h == s.h || target.h == 1) &&
                    (target.w == s.w || target.w == 1) && (target.c == s.c || target.c == 1),
                "reduce_to: target is not a reduction of the input");
  if (s == target) return x;
  Tensor<T> out(target);
  for (int n = 0; n < s.n; ++n) {
    for (int h = 0; h < s.h; ++h) {
      for (int w = 0; w < s.w; ++w) {
        const T* src = &x.data[s.index(n, h, w, 0)];
        T* dst = &out.data[target.index(n % target.n, h % target.h, w % target.w, 0)];
        if (target.c == s.c) {
          for (int c = 0; c < s.c; ++c) dst[c] += src[c];
        } else {
          T acc = T(0);
          for (int c = 0; c < s.c; ++c) acc += src[c];
          dst[0] += acc;
        }
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& target) {
  const Shape s = x.shape;
  require_shape((s.n == target.n || s.n == 1) && (s.h == target.h || s.h == 1) &&
                    (s.w == target.w || s.w == 1) && (s.c == target.c || s.c == 1),
                "broadcast_to: incompatible shapes");
  if (s == target) return x;
  Tensor<T> out(target);
  for (int n = 0; n < target.n; ++n) {
    for (int h = 0; h < target.h; ++h) {
      for (int w = 0; w < target.w; ++w) {
        const T* src = &x.data[s.index(n % s.n, h % s.h, w % s.w, 0)];
        T* dst = &out.data[target.index(n, h, w, 0)];
        if (s.c == target.c) {
          std::copy(src, src + target.c, dst);
        } else {
          std::fill(dst, dst + target.c, src[0]);
        }
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.shape.n == b.shape.n && a.shape.h == b.shape.h &&
                    a.shape.w == b.shape.w,
                "concat_channels: spatial/batch dims differ");
  const Shape s{a.shape.n, a.shape.h, a.shape.w, a.shape.c + b.shape.c};
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int h = 0; h < s.h; ++h) {
      for (int w = 0; w < s.w; ++w) {
        T* dst = &out.data[s.index(n, h, w, 0)];
        const T* pa = &a.data[a.shape.index(n, h, w, 0)];
        std::copy(pa, pa + a.shape.c, dst);
        const T* pb = &b.data[b.shape.index(n, h, w, 0)];
        std::copy(pb, pb + b.shape.c, dst + a.shape.c);
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
  const Shape s = x.shape;
  require_shape(0 <= c0 && c0 < c1 && c1 <= s.c, "slice_channels: bad range");
  Tensor<T> out(Shape{s.n, s.h, s.w, c1 - c0});
  for (int n = 0; n < s.n; ++n) {
    for (int h = 0; h < s.h; ++h) {
      for (int w = 0; w < s.w; ++w) {
        const T* src = &x.data[s.index(n, h, w, c0)];
        T* dst = &out.data[out.shape.index(n, h, w, 0)];
        std::copy(src, src + (c1 - c0), dst);
      }
    }
  }
  return out;
}

}  // namespace raincast::kernels
