#pragma once

#include <cstdint>
#include <vector>

#include "raincast/grid.hpp"
#include "raincast/patch.hpp"
#include "raincast/transform.hpp"

namespace raincast {

// Synthetic toy-weather generator. Ground truth is a sum of random
// anisotropic Gaussian rain cells on an extended canvas (the 46x46 coarse
// context footprint at full resolution) modulated by smooth multiplicative
// noise. The forecast ensemble coarsens that truth and corrupts it with a
// known deterministic bias (position shift + intensity damping) plus
// member-specific smooth perturbations, so a corrective mapping back to the
// truth distribution exists and is learnable. Covariate channels are smooth
// fields correlated with the uncorrupted coarse truth.
struct SynthConfig {
  int n_members = 10;

  // Rain cells on the extended high-resolution canvas.
  int cells_min = 2;
  int cells_max = 6;
  double amp_min_mm = 4.0;
  double amp_max_mm = 28.0;
  double sigma_min = 8.0;   // cell scale, high-res pixels
  double sigma_max = 26.0;
  double anisotropy_min = 0.35;  // minor/major axis ratio lower bound

  // Smooth multiplicative log-noise on the truth: a broad component and a
  // finer texture component.
  double truth_noise_amp = 0.2;
  int truth_noise_grid = 12;
  double texture_amp = 0.1;
  int texture_grid = 92;

  // Deterministic forecast bias at coarse resolution.
  bool bias_enabled = true;
  int bias_shift_y = 1;
  int bias_shift_x = 1;
  double bias_damp = 0.7;

  // Member-specific multiplicative log-noise at coarse resolution.
  double member_noise_amp = 0.35;
  int member_noise_grid = 6;

  // Covariate construction.
  double tcw_noise_amp = 0.08;
  int cov_noise_grid = 5;

  NormalizationSpec norm;
  SamplerWeights sampler;

  void validate() const;  // throws ValidationError
};

// Raw-millimetre intermediates of one synthetic patch.
struct RawSynthPatch {
  GridField y_ext;          // extended truth, 368x368
  GridField y;              // central 128x128 truth crop
  GridField base_coarse;    // coarsen(y_ext, 8): uncorrupted 46x46 forecast base
  GridField biased_coarse;  // base after deterministic bias (== base when off)
  std::vector<GridField> members;  // n_members perturbed 46x46 forecasts
};

// Smooth standard-normal field: a grid x grid lattice of N(0,1) draws
// bilinearly resampled to out_h x out_w. Deterministic in seed.
GridField smooth_noise_field(int out_h, int out_w, int grid, std::uint64_t seed);

// One coarse ensemble member (46x46, raw mm) for the given patch. Members
// are i.i.d. perturbations of the patch's biased base, so any member index
// (including indices beyond n_members) is exchangeable with the others.
GridField synth_coarse_member(const SynthConfig& cfg, const GridField& biased_coarse,
                              std::uint64_t seed, std::uint64_t patch_index,
                              std::uint64_t member_index);

// Raw fields of patch `index` for the dataset identified by `seed`.
// Bit-reproducible; independent across indices.
RawSynthPatch synth_patch_raw(const SynthConfig& cfg, std::uint64_t seed,
                              std::uint64_t index);

// Fully assembled, normalized training pair for patch `index`.
PatchPair synth_pair(const SynthConfig& cfg, std::uint64_t seed, std::uint64_t index);

// The first n patches of the dataset.
std::vector<PatchPair> synth_dataset(int n, std::uint64_t seed, const SynthConfig& cfg);

}  // namespace raincast
