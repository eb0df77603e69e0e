#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace raincast {

// Value space of a precipitation grid.  RawMm holds accumulations in
// millimetres; Normalized holds values mapped into [0, 1] by the
// log-saturation transform (see transform.hpp).
enum class Space : std::uint8_t { RawMm, Normalized };

std::string to_string(Space s);
Space space_from_string(const std::string& s);

// One 2-D grid of a single variable.  Row-major storage.
struct GridField {
  std::vector<float> values;
  int height = 0;
  int width = 0;
  Space space = Space::RawMm;
  double resolution_km = 0.0;  // 0 means unspecified

  GridField() = default;
  GridField(int h, int w, Space sp = Space::RawMm, double res_km = 0.0)
      : values(static_cast<std::size_t>(h) * w, 0.0f),
        height(h),
        width(w),
        space(sp),
        resolution_km(res_km) {}

  float& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
};

// Per-pixel data quality in [0, 1]; larger is better.
struct QualityMask {
  std::vector<float> values;
  int height = 0;
  int width = 0;

  QualityMask() = default;
  QualityMask(int h, int w, float fill = 1.0f)
      : values(static_cast<std::size_t>(h) * w, fill), height(h), width(w) {}
};

enum class AccumulationStyle : std::uint8_t { Cumulative, PerStep };

// Corner-aligned bilinear resampling: output corners map onto input corners
// and interior samples interpolate the four surrounding grid points.  Exact
// (up to rounding) for constant and affine fields; output values stay inside
// the input range.
GridField regrid_bilinear(const GridField& in, int out_height, int out_width);

// Block mean over factor x factor tiles; input dims must be divisible by
// factor.  The domain mean is preserved.
GridField coarsen(const GridField& in, int factor);

// Central out_height x out_width crop; the margins must split evenly.
GridField crop_center(const GridField& in, int out_height, int out_width);

// Classifies a per-pixel time series as running accumulation or per-step
// totals: cumulative iff every consecutive per-pixel difference is
// >= -tolerance_mm.  Needs at least two steps.
AccumulationStyle detect_accumulation_style(const std::vector<GridField>& series,
                                            double tolerance_mm = 1e-6);

// Flags steps whose domain mean is >= 1.5x the reference step's domain mean
// (with a strictly positive reference mean), the signature of an
// accumulation-interval mixup between otherwise matching products.
std::vector<bool> flag_double_accumulation(const std::vector<GridField>& series,
                                           const std::vector<GridField>& reference);

// True iff strictly more than coverage_fraction of pixels have quality
// strictly above pixel_threshold.
bool quality_pass(const QualityMask& mask, double pixel_threshold,
                  double coverage_fraction);

}  // namespace raincast
