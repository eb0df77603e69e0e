#include "raincast/grid.hpp"

#include <algorithm>
#include <cmath>

#include "raincast/error.hpp"

namespace raincast {

std::string to_string(Space s) {
  return s == Space::RawMm ? "raw_mm" : "normalized";
}

Space space_from_string(const std::string& s) {
  if (s == "raw_mm") return Space::RawMm;
  if (s == "normalized") return Space::Normalized;
  throw FormatError("unknown space tag: " + s);
}

namespace {

void require_nonempty(const GridField& f, const char* who) {
  if (f.height <= 0 || f.width <= 0 ||
      f.values.size() != static_cast<std::size_t>(f.height) * f.width) {
    throw ValidationError(std::string(who) + ": field dims do not match storage");
  }
}

void require_same_layout(const std::vector<GridField>& series, const char* who) {
  if (series.empty()) throw ValidationError(std::string(who) + ": empty series");
  require_nonempty(series.front(), who);
  for (const GridField& f : series) {
    require_nonempty(f, who);
    if (f.height != series.front().height || f.width != series.front().width) {
      throw ValidationError(std::string(who) + ": inconsistent dims across series");
    }
  }
}

double domain_mean(const GridField& f) {
  double s = 0.0;
  for (float v : f.values) s += v;
  return s / static_cast<double>(f.values.size());
}

}  // namespace

GridField regrid_bilinear(const GridField& in, int out_height, int out_width) {
  require_nonempty(in, "regrid_bilinear");
  if (out_height <= 0 || out_width <= 0) {
    throw ValidationError("regrid_bilinear: output dims must be positive");
  }
  GridField out(out_height, out_width, in.space, in.resolution_km);
  const double sy = out_height == 1 ? 0.0
                                    : static_cast<double>(in.height - 1) / (out_height - 1);
  const double sx = out_width == 1 ? 0.0
                                   : static_cast<double>(in.width - 1) / (out_width - 1);
  for (int i = 0; i < out_height; ++i) {
    const double fy = i * sy;
    int y0 = static_cast<int>(fy);
    y0 = std::min(y0, in.height - 1);
    const int y1 = std::min(y0 + 1, in.height - 1);
    const double wy = fy - y0;
    for (int j = 0; j < out_width; ++j) {
      const double fx = j * sx;
      int x0 = static_cast<int>(fx);
      x0 = std::min(x0, in.width - 1);
      const int x1 = std::min(x0 + 1, in.width - 1);
      const double wx = fx - x0;
      const double v00 = in.at(y0, x0);
      const double v01 = in.at(y0, x1);
      const double v10 = in.at(y1, x0);
      const double v11 = in.at(y1, x1);
      const double top = v00 + (v01 - v00) * wx;
      const double bot = v10 + (v11 - v10) * wx;
      out.at(i, j) = static_cast<float>(top + (bot - top) * wy);
    }
  }
  return out;
}

GridField coarsen(const GridField& in, int factor) {
  require_nonempty(in, "coarsen");
  if (factor <= 0) throw ValidationError("coarsen: factor must be positive");
  if (in.height % factor != 0 || in.width % factor != 0) {
    throw ValidationError("coarsen: dims must be divisible by factor");
  }
  const int oh = in.height / factor;
  const int ow = in.width / factor;
  GridField out(oh, ow, in.space, in.resolution_km * factor);
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int i = 0; i < oh; ++i) {
    for (int j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int dy = 0; dy < factor; ++dy) {
        const float* row = &in.values[static_cast<std::size_t>(i * factor + dy) * in.width +
                                      static_cast<std::size_t>(j) * factor];
        for (int dx = 0; dx < factor; ++dx) s += row[dx];
      }
      out.at(i, j) = static_cast<float>(s * inv);
    }
  }
  return out;
}

GridField crop_center(const GridField& in, int out_height, int out_width) {
  require_nonempty(in, "crop_center");
  if (out_height <= 0 || out_width <= 0 || out_height > in.height ||
      out_width > in.width || (in.height - out_height) % 2 != 0 ||
      (in.width - out_width) % 2 != 0) {
    throw ValidationError("crop_center: margins must be nonnegative and even");
  }
  const int oy = (in.height - out_height) / 2;
  const int ox = (in.width - out_width) / 2;
  GridField out(out_height, out_width, in.space, in.resolution_km);
  for (int i = 0; i < out_height; ++i) {
    for (int j = 0; j < out_width; ++j) out.at(i, j) = in.at(oy + i, ox + j);
  }
  return out;
}

AccumulationStyle detect_accumulation_style(const std::vector<GridField>& series,
                                            double tolerance_mm) {
  if (series.size() < 2) {
    throw ValidationError("detect_accumulation_style: need at least two steps");
  }
  require_same_layout(series, "detect_accumulation_style");
  for (std::size_t t = 1; t < series.size(); ++t) {
    const auto& prev = series[t - 1].values;
    const auto& cur = series[t].values;
    for (std::size_t i = 0; i < cur.size(); ++i) {
      if (static_cast<double>(cur[i]) - prev[i] < -tolerance_mm) {
        return AccumulationStyle::PerStep;
      }
    }
  }
  return AccumulationStyle::Cumulative;
}

std::vector<bool> flag_double_accumulation(const std::vector<GridField>& series,
                                           const std::vector<GridField>& reference) {
  require_same_layout(series, "flag_double_accumulation");
  require_same_layout(reference, "flag_double_accumulation");
  if (series.size() != reference.size()) {
    throw ValidationError("flag_double_accumulation: series lengths differ");
  }
  std::vector<bool> flags(series.size(), false);
  for (std::size_t t = 0; t < series.size(); ++t) {
    const double ms = domain_mean(series[t]);
    const double mr = domain_mean(reference[t]);
    flags[t] = mr > 0.0 && ms >= 1.5 * mr;
  }
  return flags;
}

bool quality_pass(const QualityMask& mask, double pixel_threshold,
                  double coverage_fraction) {
  if (mask.height <= 0 || mask.width <= 0 ||
      mask.values.size() != static_cast<std::size_t>(mask.height) * mask.width) {
    throw ValidationError("quality_pass: mask dims do not match storage");
  }
  std::size_t good = 0;
  for (float v : mask.values) {
    if (static_cast<double>(v) > pixel_threshold) ++good;
  }
  const double frac = static_cast<double>(good) / static_cast<double>(mask.values.size());
  return frac > coverage_fraction;
}

}  // namespace raincast
