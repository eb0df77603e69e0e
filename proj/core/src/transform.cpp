#include "raincast/transform.hpp"

#include <algorithm>
#include <cmath>

#include "raincast/error.hpp"
#include "raincast/rng.hpp"

namespace raincast {

float normalize_value(float v, const NormalizationSpec& spec) {
  const double capped = std::min(static_cast<double>(std::max(v, 0.0f)), spec.y_max_mm);
  return static_cast<float>(std::log1p(capped) / std::log1p(spec.y_max_mm));
}

float denormalize_value(float v, const NormalizationSpec& spec) {
  const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<float>(std::expm1(clamped * std::log1p(spec.y_max_mm)));
}

GridField normalize(const GridField& raw, const NormalizationSpec& spec) {
  if (raw.space != Space::RawMm) {
    throw ValidationError("normalize: input must be in raw millimetres");
  }
  GridField out = raw;
  out.space = Space::Normalized;
  for (float& v : out.values) v = normalize_value(v, spec);
  return out;
}

GridField denormalize(const GridField& norm, const NormalizationSpec& spec) {
  if (norm.space != Space::Normalized) {
    throw ValidationError("denormalize: input must be normalized");
  }
  GridField out = norm;
  out.space = Space::RawMm;
  for (float& v : out.values) v = denormalize_value(v, spec);
  return out;
}

double rainy_fraction(const GridField& y_raw, const SamplerWeights& sw) {
  if (y_raw.space != Space::RawMm) {
    throw ValidationError("rainy_fraction: input must be in raw millimetres");
  }
  if (y_raw.values.empty()) throw ValidationError("rainy_fraction: empty field");
  // Compare at field precision so stored values equal to the threshold never
  // count as rainy.
  const float threshold = static_cast<float>(sw.rain_threshold_mm);
  std::size_t rainy = 0;
  for (float v : y_raw.values) {
    if (v > threshold) ++rainy;
  }
  return static_cast<double>(rainy) / static_cast<double>(y_raw.values.size());
}

double patch_weight_from_fraction(double frac, const SamplerWeights& sw) {
  const double d = frac - 1.0;
  const double shape = 1.0 - std::pow(d, sw.a);
  return sw.w_min + shape * (sw.w_max - sw.w_min);
}

double patch_weight(const GridField& y_raw, const SamplerWeights& sw) {
  return patch_weight_from_fraction(rainy_fraction(y_raw, sw), sw);
}

std::vector<std::size_t> weighted_sample_indices(const std::vector<double>& weights,
                                                 std::size_t n, std::uint64_t seed) {
  if (weights.empty()) throw ValidationError("weighted_sample: no weights");
  std::vector<double> cum(weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0)) {
      throw ValidationError("weighted_sample: weights must be non-negative");
    }
    total += weights[i];
    cum[i] = total;
  }
  if (!(total > 0.0)) throw ValidationError("weighted_sample: weights sum to zero");

  auto rng = make_rng(seed);
  std::vector<std::size_t> out(n);
  for (std::size_t d = 0; d < n; ++d) {
    const double u = uniform01(rng) * total;
    const auto it = std::upper_bound(cum.begin(), cum.end(), u);
    out[d] = std::min(static_cast<std::size_t>(it - cum.begin()), weights.size() - 1);
  }
  return out;
}

}  // namespace raincast
