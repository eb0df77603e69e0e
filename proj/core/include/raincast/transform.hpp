#pragma once

#include <cstdint>
#include <vector>

#include "raincast/grid.hpp"

namespace raincast {

// Zero-preserving log-saturation map between raw millimetres and [0, 1]:
//   n(v) = log1p(min(v, y_max_mm)) / log1p(y_max_mm)
// 0 mm maps to 0, y_max_mm (and anything above) maps to 1.
struct NormalizationSpec {
  double y_max_mm = 100.0;
};

float normalize_value(float v, const NormalizationSpec& spec);
float denormalize_value(float v, const NormalizationSpec& spec);

// Field-level versions retag the space.  normalize requires RawMm input,
// denormalize requires Normalized input.
GridField normalize(const GridField& raw, const NormalizationSpec& spec);
GridField denormalize(const GridField& norm, const NormalizationSpec& spec);

// Importance weight for a raw-mm patch, increasing with its rainy fraction:
//   w(frac) = w_min + (1 - (frac - 1)^a) * (w_max - w_min)
// where frac is the fraction of pixels strictly above rain_threshold_mm.
struct SamplerWeights {
  double w_min = 0.02;
  double w_max = 0.4;
  int a = 4;
  double rain_threshold_mm = 0.025;
};

double rainy_fraction(const GridField& y_raw, const SamplerWeights& sw);
double patch_weight_from_fraction(double frac, const SamplerWeights& sw);
double patch_weight(const GridField& y_raw, const SamplerWeights& sw);

// n i.i.d. draws with replacement; Pr(i) = weights[i] / sum(weights).
// Deterministic for a fixed seed.
std::vector<std::size_t> weighted_sample_indices(const std::vector<double>& weights,
                                                 std::size_t n, std::uint64_t seed);

}  // namespace raincast
