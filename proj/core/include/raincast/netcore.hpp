#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "raincast/ops.hpp"
#include "raincast/patch.hpp"
#include "raincast/rng.hpp"

// The two networks: the generator (corrector + super-resolver) and the
// conditional critic. Activations are NHWC; the generator maps a 16x16
// multi-channel forecast patch plus a one-channel noise field to a 128x128
// precipitation field in (0,1) and a 16x16 corrected-forecast proxy. Both
// networks are templated on the scalar type so gradient tests can run the
// exact same code at double precision.

namespace raincast {

inline constexpr std::uint64_t kGenInitTag = 0x47;   // 'G'
inline constexpr std::uint64_t kDiscInitTag = 0x44;  // 'D'

// Keeps sigmoid heads strictly inside (0,1) where float rounding would
// otherwise saturate them to an endpoint.
inline constexpr double kSigmoidMargin = 1e-7;

struct ArchSpec {
  // Paper channel widths are divided by this; 4 is the desk-scale default,
  // 1 reconstructs the full-size network, 8 is used by gradient tests.
  int width_divisor = 4;
  int input_channels = kInputChannels;
  double leaky_slope = 0.2;

  void validate() const {
    if (width_divisor < 1 || 32 % width_divisor != 0) {
      throw ValidationError("arch: width_divisor must divide 32");
    }
    if (input_channels < 1) throw ValidationError("arch: input_channels < 1");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) {
      throw ValidationError("arch: leaky_slope outside [0,1)");
    }
  }
  int width(int paper_width) const { return paper_width / width_divisor; }
};

// Named leaf parameters in construction order. The order is the checkpoint
// blob order, so it must stay stable for a given architecture.
template <class T>
class ParamSet {
 public:
  Var<T> create(const std::string& name, Shape shape, std::mt19937_64& g,
                double bound) {
    Tensor<T> t(shape);
    if (bound > 0) {
      for (T& v : t.data) v = static_cast<T>(uniform(g, -bound, bound));
    }
    Var<T> p = Var<T>::param(std::move(t));
    entries_.emplace_back(name, p);
    return p;
  }

  const std::vector<std::pair<std::string, Var<T>>>& entries() const {
    return entries_;
  }

  // Parameters whose name starts with `prefix` (all when empty).
  std::vector<Var<T>> vars(const std::string& prefix = "") const {
    std::vector<Var<T>> out;
    for (const auto& [name, v] : entries_) {
      if (name.rfind(prefix, 0) == 0) out.push_back(v);
    }
    return out;
  }

  const Var<T>* find(const std::string& name) const {
    for (const auto& [n, v] : entries_) {
      if (n == name) return &v;
    }
    return nullptr;
  }

  std::size_t value_count() const {
    std::size_t total = 0;
    for (const auto& [n, v] : entries_) total += v.value().numel();
    return total;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
};

namespace detail {
// Negative slope 0 is plain ReLU.
template <class T>
Var<T> activate(const Var<T>& x, double slope) {
  return slope == 0.0 ? relu(x) : leaky_relu(x, slope);
}
}  // namespace detail

template <class T>
struct Conv {
  Var<T> w, b;
  ConvGeom geom;

  Var<T> operator()(const Var<T>& x) const {
    return add(conv2d(x, w, geom), b);
  }
};

template <class T>
Conv<T> make_conv(ParamSet<T>& ps, std::mt19937_64& g, const std::string& name,
                  int kh, int kw, int cin, int cout, int stride, int pad) {
  Conv<T> c;
  c.geom = ConvGeom{kh, kw, stride, pad};
  const double bound = std::sqrt(6.0 / (kh * kw * cin));  // fan-in scaled
  c.w = ps.create(name + ".w", Shape{kh, kw, cin, cout}, g, bound);
  c.b = ps.create(name + ".b", Shape{1, 1, 1, cout}, g, 0.0);
  return c;
}

// Pre-activation residual block: skip(x) + conv2(act(conv1(act(x)))).
// The first convolution carries the stride; the skip is the identity unless
// channels or stride change, in which case it is a 1x1 convolution with the
// block's stride.
template <class T>
struct ResBlock {
  Conv<T> c1, c2;
  std::optional<Conv<T>> skip;
  double slope = 0.0;

  Var<T> operator()(const Var<T>& x) const {
    Var<T> h = detail::activate(x, slope);
    h = c1(h);
    h = detail::activate(h, slope);
    h = c2(h);
    return add(skip ? (*skip)(x) : x, h);
  }
};

template <class T>
ResBlock<T> make_res_block(ParamSet<T>& ps, std::mt19937_64& g,
                           const std::string& name, int cin, int cout,
                           int stride, double slope) {
  ResBlock<T> b;
  b.slope = slope;
  b.c1 = make_conv(ps, g, name + ".c1", 3, 3, cin, cout, stride, 1);
  b.c2 = make_conv(ps, g, name + ".c2", 3, 3, cout, cout, 1, 1);
  if (cin != cout || stride != 1) {
    b.skip = make_conv(ps, g, name + ".skip", 1, 1, cin, cout, stride, 0);
  }
  return b;
}

// Standard-normal noise field, one channel per sample.
template <class T>
Tensor<T> sample_noise(int n, int h, int w, std::mt19937_64& g) {
  Tensor<T> z(Shape{n, h, w, 1});
  for (T& v : z.data) v = static_cast<T>(normal01(g));
  return z;
}

template <class T>
struct GeneratorOut {
  Var<T> hi_res;    // [N, 8H, 8W, 1], strictly inside (0,1)
  Var<T> lo_proxy;  // [N, H, W, 1], unbounded corrected-forecast proxy
};

template <class T>
class Generator {
 public:
  Generator(const ArchSpec& arch, std::uint64_t seed)
      : arch_(arch), seed_(seed) {
    arch.validate();
    auto g = make_rng(seed_stream(seed, kGenInitTag));
    const int w32 = arch.width(32), w64 = arch.width(64);
    const int w128 = arch.width(128), w256 = arch.width(256);
    const double ls = arch.leaky_slope;
    stem_ = make_conv(params_, g, "corr.stem", 3, 3, arch.input_channels, w64, 1, 1);
    cb1_ = make_res_block(params_, g, "corr.b1", w64, w128, 1, 0.0);
    // One output channel is reserved for the noise field appended after
    // this block, restoring the full 256-divided width.
    cb2_ = make_res_block(params_, g, "corr.b2", w128, w256 - 1, 1, 0.0);
    cb3_ = make_res_block(params_, g, "corr.b3", w256, w256, 1, 0.0);
    cb4_ = make_res_block(params_, g, "corr.b4", w256, w256, 1, 0.0);
    cb5_ = make_res_block(params_, g, "corr.b5", w256, w256, 1, 0.0);
    proxy_ = make_conv(params_, g, "corr.proxy", 1, 1, w256, 1, 1, 0);
    sr1_ = make_res_block(params_, g, "sr.b1", w256, w256, 1, ls);
    sr2_ = make_res_block(params_, g, "sr.b2", w256, w128, 1, ls);
    sr3_ = make_res_block(params_, g, "sr.b3", w128, w64, 1, ls);
    sr4_ = make_res_block(params_, g, "sr.b4", w64, w32, 1, ls);
    head_ = make_conv(params_, g, "sr.head", 1, 1, w32, 1, 1, 0);
  }

  GeneratorOut<T> operator()(const Var<T>& x, const Var<T>& z) const {
    Var<T> h = trunk(x, z);
    Var<T> proxy = proxy_(h);
    Var<T> s = upsample_2x(sr1_(h));
    s = upsample_2x(sr2_(s));
    s = upsample_2x(sr3_(s));
    s = sr4_(s);
    Var<T> hi = clamp(sigmoid(head_(s)), kSigmoidMargin, 1.0 - kSigmoidMargin);
    return {hi, proxy};
  }

  // Corrector branch alone: identical to operator()(x, z).lo_proxy but never
  // touches the super-resolution chain, so coarse-only training steps skip
  // the 8x-resolution compute entirely.
  Var<T> correct(const Var<T>& x, const Var<T>& z) const { return proxy_(trunk(x, z)); }

  const ArchSpec& arch() const { return arch_; }
  std::uint64_t seed() const { return seed_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  // Corrector-branch parameters (the stage-1 trainable set) carry the
  // "corr." prefix; the super-resolver set carries "sr.".
  std::vector<Var<T>> trainable(const std::string& prefix = "") const {
    return params_.vars(prefix);
  }

 private:
  Var<T> trunk(const Var<T>& x, const Var<T>& z) const {
    const Shape xs = x.shape();
    require_shape(xs.c == arch_.input_channels, "generator: input channel count");
    require_shape(z.shape() == Shape{xs.n, xs.h, xs.w, 1},
                  "generator: noise must be one channel of the input size");
    Var<T> h = stem_(x);
    h = cb1_(h);
    h = cb2_(h);
    h = concat_channels(h, z);
    h = cb3_(h);
    h = cb4_(h);
    return cb5_(h);
  }

  ArchSpec arch_;
  std::uint64_t seed_ = 0;
  ParamSet<T> params_;
  Conv<T> stem_, proxy_, head_;
  ResBlock<T> cb1_, cb2_, cb3_, cb4_, cb5_;
  ResBlock<T> sr1_, sr2_, sr3_, sr4_;
};

// Dual-branch conditional critic. The high-resolution field and the
// forecast stack are encoded separately; the high-res representation is
// judged both on its own (h1 path) and jointly with the forecast context.
template <class T>
class Discriminator {
 public:
  Discriminator(const ArchSpec& arch, std::uint64_t seed)
      : arch_(arch), seed_(seed) {
    arch.validate();
    auto g = make_rng(seed_stream(seed, kDiscInitTag));
    const int w32 = arch.width(32), w64 = arch.width(64);
    const int w128 = arch.width(128), w256 = arch.width(256);
    const double ls = arch.leaky_slope;
    lo_stem_ = make_conv(params_, g, "lo.stem", 3, 3, arch.input_channels, w32, 1, 1);
    lo1_ = make_res_block(params_, g, "lo.b1", w32, w64, 1, ls);
    lo2_ = make_res_block(params_, g, "lo.b2", w64, w128, 1, ls);
    lo3_ = make_res_block(params_, g, "lo.b3", w128, w256, 1, ls);
    hi_stem_ = make_conv(params_, g, "hi.stem", 3, 3, 1, w32, 1, 1);
    hi1_ = make_res_block(params_, g, "hi.b1", w32, w64, 2, ls);
    hi2_ = make_res_block(params_, g, "hi.b2", w64, w128, 2, ls);
    hi3_ = make_res_block(params_, g, "hi.b3", w128, w256, 2, ls);
    joint_ = make_res_block(params_, g, "joint.b", 2 * w256, w256, 1, ls);
    indep_ = make_res_block(params_, g, "indep.b", w256, w256, 1, ls);
    fc1_ = make_conv(params_, g, "head.l1", 1, 1, 2 * w256, w256, 1, 0);
    fc2_ = make_conv(params_, g, "head.l2", 1, 1, w256, 1, 1, 0);
  }

  // x: [N,H,W,Cin] forecast stack; y: [N,8H,8W,1] observation or generated
  // field. Returns per-sample critic scores [N,1,1,1].
  Var<T> operator()(const Var<T>& x, const Var<T>& y) const {
    const Shape xs = x.shape();
    const Shape ys = y.shape();
    require_shape(xs.c == arch_.input_channels, "critic: input channel count");
    require_shape(ys == Shape{xs.n, kUpscaleFactor * xs.h, kUpscaleFactor * xs.w, 1},
                  "critic: high-res field must be 8x the forecast grid");
    Var<T> lo = lo_stem_(x);
    lo = lo1_(lo);
    lo = lo2_(lo);
    lo = lo3_(lo);
    Var<T> hi = hi_stem_(y);
    hi = hi1_(hi);
    hi = hi2_(hi);
    hi = hi3_(hi);
    Var<T> joint = joint_(concat_channels(hi, lo));
    Var<T> h2 = global_mean_hw(joint);
    Var<T> h1 = global_mean_hw(indep_(hi));
    Var<T> v = concat_channels(h2, h1);
    v = fc1_(v);
    v = detail::activate(v, arch_.leaky_slope);
    return fc2_(v);
  }

  const ArchSpec& arch() const { return arch_; }
  std::uint64_t seed() const { return seed_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  std::vector<Var<T>> trainable() const { return params_.vars(); }

 private:
  ArchSpec arch_;
  std::uint64_t seed_ = 0;
  ParamSet<T> params_;
  Conv<T> lo_stem_, hi_stem_, fc1_, fc2_;
  ResBlock<T> lo1_, lo2_, lo3_, hi1_, hi2_, hi3_, joint_, indep_;
};

}  // namespace raincast
