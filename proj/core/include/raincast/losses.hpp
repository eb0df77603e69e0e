#pragma once

#include <cmath>
#include <vector>

#include "raincast/error.hpp"
#include "raincast/netcore.hpp"
#include "raincast/ops.hpp"

// Training objectives for the three-stage schedule. Stage 1 anchors the
// corrector with a precipitation-weighted L1 and a differentiable fractions
// skill score; stage 2 adds the high-resolution L1; stage 3 is the
// adversarial phase (critic with gradient penalty, generator with
// ensemble-mean fidelity terms). Pixel losses are summed within each sample
// and averaged over the batch. All functions are pure graph builders.

namespace raincast {

struct LossWeights {
  double gamma0 = 0.1;         // soft-FSS weight in the stage-1 objective
  double gamma1 = 20.0;        // low-res ensemble-mean fidelity weight
  double gamma2 = 20.0;        // high-res ensemble-mean fidelity weight
  double lambda_gp = 10.0;     // gradient-penalty weight
  double fss_threshold = 0.5;  // normalized space
  double fss_sharpness = 10.0;
  int fss_window = 4;
  int ensemble_k_loss = 6;

  void validate() const {
    if (gamma0 < 0 || gamma1 < 0 || gamma2 < 0 || lambda_gp < 0 ||
        fss_sharpness < 0) {
      throw ValidationError("loss weights must be nonnegative");
    }
    if (fss_window < 1) throw ValidationError("fss_window < 1");
    if (ensemble_k_loss < 1) throw ValidationError("ensemble_k_loss < 1");
  }
};

// Precipitation-weighted L1: per-pixel |pred - target| * (target + 1), so an
// error on a wet target pixel costs more than the same error on a dry one.
template <class T>
Var<T> weighted_l1(const Var<T>& pred, const Var<T>& target) {
  require_shape(pred.shape() == target.shape(), "weighted_l1: shape mismatch");
  Var<T> per_pixel = mul(vabs(sub(pred, target)), add_scalar(target, 1.0));
  return scalar_mul(sum_all(per_pixel), 1.0 / pred.shape().n);
}

// Differentiable fractions skill score. Exceedance masks are
// sigmoid(sharpness * (v - threshold)); O and M are their means over
// non-overlapping window x window tiles; the score is
//   1 - sum (O_i - M_i)^2 / (sum O_i^2 + sum M_i^2)
// per sample, averaged over the batch. Always in [0, 1], and exactly 1 for
// identical fields. A denominator that underflowed to zero means neither
// field has any mask mass, so those samples score 1.
template <class T>
Var<T> soft_fss(const Var<T>& pred, const Var<T>& target, double threshold,
                double sharpness, int window) {
  require_shape(pred.shape() == target.shape(), "soft_fss: shape mismatch");
  Var<T> m = avg_pool(sigmoid(scalar_mul(add_scalar(pred, -threshold), sharpness)),
                      window);
  Var<T> o = avg_pool(sigmoid(scalar_mul(add_scalar(target, -threshold), sharpness)),
                      window);
  Var<T> num = sum_per_sample(square(sub(o, m)));
  Var<T> den = add(sum_per_sample(square(o)), sum_per_sample(square(m)));

  const int n = pred.shape().n;
  Tensor<T> good(den.shape());
  Tensor<T> bad(den.shape());
  for (int i = 0; i < n; ++i) {
    const bool degenerate = !(den.value().data[i] > T(0));
    good.data[i] = degenerate ? T(0) : T(1);
    bad.data[i] = degenerate ? T(1) : T(0);
  }
  Var<T> keep = Var<T>::constant(std::move(good));
  Var<T> safe_den = add(mul(den, keep), Var<T>::constant(std::move(bad)));
  Var<T> ratio = div(mul(num, keep), safe_den);
  return scalar_mul(sum_all(add_scalar(neg(ratio), 1.0)), 1.0 / n);
}

// Stage 1: weighted L1 on the corrected coarse field minus gamma0 times the
// soft fractions skill score, with the noise input held at zero upstream.
template <class T>
Var<T> stage1_loss(const Var<T>& g_x0, const Var<T>& y_coarse,
                   const LossWeights& w) {
  Var<T> score = soft_fss(g_x0, y_coarse, w.fss_threshold, w.fss_sharpness,
                          w.fss_window);
  return sub(weighted_l1(g_x0, y_coarse), scalar_mul(score, w.gamma0));
}

// Stage 2: weighted L1 at both resolutions, no skill-score term.
template <class T>
Var<T> stage2_loss(const Var<T>& g_x0, const Var<T>& G_x0,
                   const Var<T>& y_coarse, const Var<T>& y) {
  return add(weighted_l1(g_x0, y_coarse), weighted_l1(G_x0, y));
}

// Critic objective:
//   D(x, G) - D(x, y) + lambda * (|grad_ytilde D(x, ytilde)|_2 - 1)^2
// with ytilde = eps*y + (1-eps)*G mixed per sample. The interpolate enters
// the critic as a fresh leaf, so the penalty trains the critic parameters
// (through the second-order path) but does not backpropagate into the
// endpoints -- the standard treatment of the interpolate as data. `eps`
// holds one draw in [0,1] per sample.
template <class T, class CriticFn>
Var<T> critic_loss(const CriticFn& critic, const Var<T>& x, const Var<T>& y,
                   const Var<T>& gen_sample, const Tensor<T>& eps,
                   double lambda_gp) {
  require_shape(y.shape() == gen_sample.shape(),
                "critic_loss: observation/sample shape mismatch");
  const Shape s = y.shape();
  if (eps.shape != Shape{s.n, 1, 1, 1}) {
    throw ValidationError("critic_loss: need one eps per sample");
  }
  for (const T& e : eps.data) {
    if (!(e >= T(0) && e <= T(1))) {
      throw ValidationError("critic_loss: eps outside [0,1]");
    }
  }

  Tensor<T> mix(s);
  const std::size_t block = s.numel() / s.n;
  for (int i = 0; i < s.n; ++i) {
    const T e = eps.data[i];
    for (std::size_t j = 0; j < block; ++j) {
      const std::size_t at = i * block + j;
      mix.data[at] = e * y.value().data[at] +
                     (T(1) - e) * gen_sample.value().data[at];
    }
  }
  Var<T> y_tilde = Var<T>::param(std::move(mix));

  Var<T> d_fake = critic(x, gen_sample);
  Var<T> d_real = critic(x, y);
  Var<T> d_mix = critic(x, y_tilde);
  const std::vector<Var<T>> gy =
      grad(sum_all(d_mix), {y_tilde}, /*create_graph=*/true);
  Var<T> gnorm = sqrt_eps(sum_per_sample(square(gy[0])));
  for (const T& v : gnorm.value().data) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw DivergenceError("critic_loss: non-finite interpolate gradient");
    }
  }
  Var<T> penalty =
      scalar_mul(sum_all(square(add_scalar(gnorm, -1.0))), lambda_gp / s.n);
  Var<T> wdist = scalar_mul(sub(sum_all(d_fake), sum_all(d_real)), 1.0 / s.n);
  return add(wdist, penalty);
}

// Generator objective: adversarial term averaged over the k noise draws,
// plus ensemble-mean fidelity anchors at both resolutions. The fidelity
// terms compare the MEAN of the k samples with the target, not the mean
// per-member error, so an ensemble that brackets the target pays nothing.
template <class T, class CriticFn>
Var<T> generator_loss(const CriticFn& critic, const Var<T>& x, const Var<T>& y,
                      const Var<T>& y_coarse,
                      const std::vector<GeneratorOut<T>>& samples,
                      const LossWeights& w) {
  if (samples.empty()) {
    throw ValidationError("generator_loss: need at least one sample");
  }
  const double k = static_cast<double>(samples.size());
  const int n = x.shape().n;

  Var<T> adv = sum_all(critic(x, samples[0].hi_res));
  Var<T> mean_hi = samples[0].hi_res;
  Var<T> mean_lo = samples[0].lo_proxy;
  for (std::size_t j = 1; j < samples.size(); ++j) {
    adv = add(adv, sum_all(critic(x, samples[j].hi_res)));
    mean_hi = add(mean_hi, samples[j].hi_res);
    mean_lo = add(mean_lo, samples[j].lo_proxy);
  }
  adv = scalar_mul(adv, -1.0 / (k * n));
  mean_hi = scalar_mul(mean_hi, 1.0 / k);
  mean_lo = scalar_mul(mean_lo, 1.0 / k);

  Var<T> lo_term = scalar_mul(weighted_l1(mean_lo, y_coarse), w.gamma1);
  Var<T> hi_term = scalar_mul(weighted_l1(mean_hi, y), w.gamma2);
  return add(adv, add(lo_term, hi_term));
}

}  // namespace raincast
