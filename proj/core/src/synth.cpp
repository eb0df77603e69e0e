#include "raincast/synth.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "raincast/error.hpp"
#include "raincast/rng.hpp"

namespace raincast {

namespace {

// Sub-stream tags: every random draw hangs off (seed, patch index, tag, ...)
// so patches and members are independent and individually regenerable.
constexpr std::uint64_t kTruthTag = 1;
constexpr std::uint64_t kMemberTag = 2;
constexpr std::uint64_t kCovTag = 3;

constexpr int kCanvas = kContextSize * kUpscaleFactor;  // 368

float clamp01(double v) {
  return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

GridField shift_and_damp(const GridField& base, int dy, int dx, double damp) {
  GridField out(base.height, base.width, base.space, base.resolution_km);
  for (int i = 0; i < base.height; ++i) {
    const int si = std::clamp(i - dy, 0, base.height - 1);
    for (int j = 0; j < base.width; ++j) {
      const int sj = std::clamp(j - dx, 0, base.width - 1);
      out.at(i, j) = static_cast<float>(damp * base.at(si, sj));
    }
  }
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  const bool ok = n_members == kEnsembleMembers && cells_min >= 0 &&
                  cells_max >= cells_min && amp_min_mm > 0.0 &&
                  amp_max_mm >= amp_min_mm && sigma_min > 0.0 &&
                  sigma_max >= sigma_min && anisotropy_min > 0.0 &&
                  anisotropy_min <= 1.0 && truth_noise_amp >= 0.0 &&
                  truth_noise_grid >= 2 && texture_amp >= 0.0 &&
                  texture_grid >= 2 && std::abs(bias_shift_y) < kContextSize &&
                  std::abs(bias_shift_x) < kContextSize && bias_damp > 0.0 &&
                  bias_damp <= 1.0 && member_noise_amp >= 0.0 &&
                  member_noise_grid >= 2 && tcw_noise_amp >= 0.0 &&
                  cov_noise_grid >= 2 && norm.y_max_mm > 0.0;
  if (!ok) throw ValidationError("synth config: parameter out of range");
}

GridField smooth_noise_field(int out_h, int out_w, int grid, std::uint64_t seed) {
  if (out_h <= 0 || out_w <= 0 || grid < 2) {
    throw ValidationError("smooth_noise_field: bad dimensions");
  }
  GridField lattice(grid, grid);
  auto rng = make_rng(seed);
  for (float& v : lattice.values) v = static_cast<float>(normal01(rng));
  if (grid == out_h && grid == out_w) return lattice;
  return regrid_bilinear(lattice, out_h, out_w);
}

GridField synth_coarse_member(const SynthConfig& cfg, const GridField& biased_coarse,
                              std::uint64_t seed, std::uint64_t patch_index,
                              std::uint64_t member_index) {
  if (biased_coarse.height != kContextSize || biased_coarse.width != kContextSize) {
    throw ValidationError("synth member: base must be the coarse context field");
  }
  if (cfg.member_noise_amp == 0.0) return biased_coarse;
  const GridField noise =
      smooth_noise_field(kContextSize, kContextSize, cfg.member_noise_grid,
                         seed_stream(seed, patch_index, kMemberTag, member_index));
  GridField out = biased_coarse;
  for (std::size_t p = 0; p < out.values.size(); ++p) {
    out.values[p] = static_cast<float>(
        static_cast<double>(out.values[p]) *
        std::exp(cfg.member_noise_amp * static_cast<double>(noise.values[p])));
  }
  return out;
}

RawSynthPatch synth_patch_raw(const SynthConfig& cfg, std::uint64_t seed,
                              std::uint64_t index) {
  cfg.validate();

  auto rng = make_rng(seed_stream(seed, index, kTruthTag, std::uint64_t{0}));
  const int span = cfg.cells_max - cfg.cells_min + 1;
  const int n_cells =
      cfg.cells_min + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(span)));

  std::vector<double> canvas(static_cast<std::size_t>(kCanvas) * kCanvas, 0.0);
  for (int c = 0; c < n_cells; ++c) {
    const double ci = uniform(rng, 0.0, kCanvas);
    const double cj = uniform(rng, 0.0, kCanvas);
    const double amp = uniform(rng, cfg.amp_min_mm, cfg.amp_max_mm);
    const double s1 = uniform(rng, cfg.sigma_min, cfg.sigma_max);
    const double s2 = s1 * uniform(rng, cfg.anisotropy_min, 1.0);
    const double theta = uniform(rng, 0.0, 3.14159265358979323846);
    const double ct = std::cos(theta);
    const double st = std::sin(theta);

    // Beyond q = 30 a cell contributes < 1e-12 of its peak; the bounding box
    // keeps the scan local.
    const double reach = std::sqrt(60.0) * s1;
    const int i0 = std::max(0, static_cast<int>(std::floor(ci - reach)));
    const int i1 = std::min(kCanvas - 1, static_cast<int>(std::ceil(ci + reach)));
    const int j0 = std::max(0, static_cast<int>(std::floor(cj - reach)));
    const int j1 = std::min(kCanvas - 1, static_cast<int>(std::ceil(cj + reach)));
    for (int i = i0; i <= i1; ++i) {
      const double di = i - ci;
      for (int j = j0; j <= j1; ++j) {
        const double dj = j - cj;
        const double u = (ct * di + st * dj) / s1;
        const double v = (-st * di + ct * dj) / s2;
        const double q = 0.5 * (u * u + v * v);
        if (q < 30.0) {
          canvas[static_cast<std::size_t>(i) * kCanvas + j] += amp * std::exp(-q);
        }
      }
    }
  }

  const GridField broad =
      smooth_noise_field(kCanvas, kCanvas, cfg.truth_noise_grid,
                         seed_stream(seed, index, kTruthTag, std::uint64_t{1}));
  const GridField fine =
      smooth_noise_field(kCanvas, kCanvas, cfg.texture_grid,
                         seed_stream(seed, index, kTruthTag, std::uint64_t{2}));

  RawSynthPatch out;
  out.y_ext = GridField(kCanvas, kCanvas, Space::RawMm);
  for (std::size_t p = 0; p < canvas.size(); ++p) {
    const double mod = cfg.truth_noise_amp * static_cast<double>(broad.values[p]) +
                       cfg.texture_amp * static_cast<double>(fine.values[p]);
    out.y_ext.values[p] = static_cast<float>(canvas[p] * std::exp(mod));
  }

  out.y = crop_center(out.y_ext, kTargetSize, kTargetSize);
  out.base_coarse = coarsen(out.y_ext, kUpscaleFactor);
  out.biased_coarse =
      cfg.bias_enabled
          ? shift_and_damp(out.base_coarse, cfg.bias_shift_y, cfg.bias_shift_x,
                           cfg.bias_damp)
          : out.base_coarse;

  out.members.reserve(static_cast<std::size_t>(cfg.n_members));
  for (int m = 0; m < cfg.n_members; ++m) {
    out.members.push_back(synth_coarse_member(cfg, out.biased_coarse, seed, index,
                                              static_cast<std::uint64_t>(m)));
  }
  return out;
}

PatchPair synth_pair(const SynthConfig& cfg, std::uint64_t seed, std::uint64_t index) {
  const RawSynthPatch raw = synth_patch_raw(cfg, seed, index);

  std::vector<GridField> precip;
  precip.reserve(raw.members.size());
  for (const GridField& m : raw.members) {
    precip.push_back(normalize(crop_center(m, kPatchSize, kPatchSize), cfg.norm));
  }
  const GridField context = normalize(raw.members[0], cfg.norm);

  // Covariates carry the uncorrupted coarse truth (plus smooth noise), which
  // is exactly the signal a corrector must recover from the biased members.
  const GridField base16 =
      normalize(crop_center(raw.base_coarse, kPatchSize, kPatchSize), cfg.norm);
  auto cov_noise = [&](std::uint64_t tag) {
    return smooth_noise_field(kPatchSize, kPatchSize, cfg.cov_noise_grid,
                              seed_stream(seed, index, kCovTag, tag));
  };

  std::vector<GridField> tcw;
  tcw.reserve(raw.members.size());
  for (int m = 0; m < cfg.n_members; ++m) {
    const GridField s = cov_noise(static_cast<std::uint64_t>(m));
    GridField f(kPatchSize, kPatchSize, Space::Normalized);
    for (std::size_t p = 0; p < f.values.size(); ++p) {
      f.values[p] = clamp01(base16.values[p] + cfg.tcw_noise_amp * s.values[p]);
    }
    tcw.push_back(std::move(f));
  }

  const GridField st = cov_noise(100);
  const GridField sc = cov_noise(101);
  const GridField si = cov_noise(102);
  GridField t2m(kPatchSize, kPatchSize, Space::Normalized);
  GridField cape(kPatchSize, kPatchSize, Space::Normalized);
  GridField cin(kPatchSize, kPatchSize, Space::Normalized);
  for (std::size_t p = 0; p < t2m.values.size(); ++p) {
    const double n = base16.values[p];
    t2m.values[p] = clamp01(0.65 - 0.3 * n + 0.1 * st.values[p]);
    cape.values[p] = clamp01(0.15 + 0.7 * n + 0.1 * sc.values[p]);
    cin.values[p] = clamp01(0.8 - 0.5 * n + 0.1 * si.values[p]);
  }

  PatchPair pair;
  pair.x = build_input_patch(precip, tcw, t2m, cape, cin, context);
  pair.y = normalize(raw.y, cfg.norm);
  pair.y_coarse = coarsen(pair.y, kUpscaleFactor);
  pair.weight = patch_weight(raw.y, cfg.sampler);
  return pair;
}

std::vector<PatchPair> synth_dataset(int n, std::uint64_t seed, const SynthConfig& cfg) {
  if (n < 1) throw ValidationError("synth_dataset: need n >= 1");
  cfg.validate();
  std::vector<PatchPair> pairs;
  pairs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    pairs.push_back(synth_pair(cfg, seed, static_cast<std::uint64_t>(i)));
  }
  return pairs;
}

}  // namespace raincast
