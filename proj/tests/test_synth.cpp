#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "raincast/error.hpp"
#include "raincast/metrics.hpp"
#include "raincast/rng.hpp"
#include "raincast/synth.hpp"

using namespace raincast;

namespace {

bool same_bits(const GridField& a, const GridField& b) {
  return a.height == b.height && a.width == b.width &&
         std::memcmp(a.values.data(), b.values.data(),
                     a.values.size() * sizeof(float)) == 0;
}

GridField constant_field(int h, int w, float c) {
  GridField f(h, w, Space::Normalized);
  for (float& v : f.values) v = c;
  return f;
}

}  // namespace

TEST_CASE("datagen: zero rain cells give an identically dry patch") {
  SynthConfig cfg;
  cfg.cells_min = 0;
  cfg.cells_max = 0;
  const PatchPair pair = synth_pair(cfg, 42, 0);
  for (float v : pair.y.values) CHECK(v == 0.0f);
  for (int c = kChPrecipBegin; c < kChPrecipBegin + kEnsembleMembers; ++c) {
    for (float v : pair.x.channels[c].values) CHECK(v == 0.0f);
  }
  for (float v : pair.x.channels[kChContext].values) CHECK(v == 0.0f);
  CHECK(pair.weight == doctest::Approx(cfg.sampler.w_min).epsilon(1e-12));
}

TEST_CASE("datagen: undisturbed forecast pipeline reproduces the coarse truth") {
  SynthConfig cfg;
  cfg.bias_enabled = false;
  cfg.member_noise_amp = 0.0;
  const RawSynthPatch raw = synth_patch_raw(cfg, 7, 3);

  CHECK(same_bits(raw.biased_coarse, raw.base_coarse));
  for (const GridField& m : raw.members) CHECK(same_bits(m, raw.base_coarse));

  // Cropping and coarsening commute on block-aligned margins, so the first
  // member equals the coarsened target exactly.
  const GridField member16 = crop_center(raw.members[0], kPatchSize, kPatchSize);
  CHECK(same_bits(member16, coarsen(raw.y, kUpscaleFactor)));

  const PatchPair pair = synth_pair(cfg, 7, 3);
  const GridField expect = normalize(coarsen(raw.y, kUpscaleFactor), cfg.norm);
  CHECK(same_bits(pair.x.channels[0], expect));
}

TEST_CASE("datagen: synthetic patches are bit-reproducible and index-independent") {
  const SynthConfig cfg;
  const PatchPair a = synth_pair(cfg, 1234, 5);
  const PatchPair b = synth_pair(cfg, 1234, 5);
  CHECK(same_bits(a.y, b.y));
  CHECK(a.weight == b.weight);
  for (int c = 0; c < kInputChannels; ++c) {
    CHECK(same_bits(a.x.channels[c], b.x.channels[c]));
  }

  const PatchPair other = synth_pair(cfg, 1234, 6);
  CHECK_FALSE(same_bits(a.y, other.y));
  const PatchPair reseeded = synth_pair(cfg, 1235, 5);
  CHECK_FALSE(same_bits(a.y, reseeded.y));
}

TEST_CASE("datagen: patch pair invariants hold on default config") {
  const SynthConfig cfg;
  for (std::uint64_t i = 0; i < 4; ++i) {
    const PatchPair p = synth_pair(cfg, 99, i);
    CHECK_NOTHROW(p.x.validate());
    CHECK(p.y.height == kTargetSize);
    CHECK(p.y.width == kTargetSize);
    CHECK(p.y.space == Space::Normalized);
    CHECK(same_bits(p.y_coarse, coarsen(p.y, kUpscaleFactor)));
    CHECK(p.weight >= cfg.sampler.w_min);
    CHECK(p.weight <= cfg.sampler.w_max);
  }
}

TEST_CASE("datagen: patch assembly keeps constants and channel order") {
  const float c = 0.3f;
  const std::vector<GridField> members(kEnsembleMembers,
                                       constant_field(kPatchSize, kPatchSize, c));
  const GridField scalar = constant_field(kPatchSize, kPatchSize, c);
  const GridField context = constant_field(kContextSize, kContextSize, c);
  const InputPatch patch =
      build_input_patch(members, members, scalar, scalar, scalar, context);
  REQUIRE(patch.channels.size() == kInputChannels);
  for (const GridField& ch : patch.channels) {
    for (float v : ch.values) CHECK(v == doctest::Approx(c).epsilon(1e-6));
  }
}

TEST_CASE("datagen: context channel is bounded by its source range") {
  auto rng = make_rng(31);
  GridField target(kPatchSize, kPatchSize, Space::Normalized);
  for (float& v : target.values) v = static_cast<float>(uniform01(rng));

  // Context built by edge-replicating the target patch outward.
  GridField context(kContextSize, kContextSize, Space::Normalized);
  for (int i = 0; i < kContextSize; ++i) {
    for (int j = 0; j < kContextSize; ++j) {
      const int ti = std::clamp(i - kContextPad, 0, kPatchSize - 1);
      const int tj = std::clamp(j - kContextPad, 0, kPatchSize - 1);
      context.at(i, j) = target.at(ti, tj);
    }
  }

  const std::vector<GridField> members(kEnsembleMembers, target);
  const InputPatch patch =
      build_input_patch(members, members, target, target, target, context);
  float lo = 1.0f;
  float hi = 0.0f;
  for (float v : target.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (float v : patch.channels[kChContext].values) {
    CHECK(v >= lo - 1e-6f);
    CHECK(v <= hi + 1e-6f);
  }
}

TEST_CASE("datagen: patch assembly rejects permuted or malformed inputs") {
  const GridField small = constant_field(kPatchSize, kPatchSize, 0.5f);
  const GridField big = constant_field(kContextSize, kContextSize, 0.5f);
  const std::vector<GridField> members(kEnsembleMembers, small);

  // Context and scalar fields swapped.
  CHECK_THROWS_AS(build_input_patch(members, members, big, small, small, small),
                  ValidationError);
  // Wrong member count.
  const std::vector<GridField> nine(9, small);
  CHECK_THROWS_AS(build_input_patch(nine, members, small, small, small, big),
                  ValidationError);
  // Raw-space member.
  std::vector<GridField> raw_members = members;
  raw_members[0].space = Space::RawMm;
  CHECK_THROWS_AS(build_input_patch(raw_members, members, small, small, small, big),
                  ValidationError);
  // Out-of-range values.
  InputPatch patch;
  patch.channels.assign(kInputChannels, small);
  patch.channels[3].values[7] = 1.5f;
  CHECK_THROWS_AS(patch.validate(), ValidationError);
}

TEST_CASE("datagen: deterministic bias makes the interpolated ensemble worse") {
  const SynthConfig cfg;
  const std::uint64_t seed = 2025;
  const int n = 1000;

  KahanSum biased_sum;
  KahanSum unbiased_sum;
  for (int i = 0; i < n; ++i) {
    const RawSynthPatch raw = synth_patch_raw(cfg, seed, static_cast<std::uint64_t>(i));

    EnsembleForecast biased;
    EnsembleForecast unbiased;
    for (int m = 0; m < cfg.n_members; ++m) {
      biased.members.push_back(regrid_bilinear(
          crop_center(raw.members[m], kPatchSize, kPatchSize), kTargetSize, kTargetSize));
      const GridField fair = synth_coarse_member(cfg, raw.base_coarse, seed,
                                                 static_cast<std::uint64_t>(i),
                                                 static_cast<std::uint64_t>(m));
      unbiased.members.push_back(regrid_bilinear(
          crop_center(fair, kPatchSize, kPatchSize), kTargetSize, kTargetSize));
    }
    biased_sum.add(crps_field_mean(biased, raw.y));
    unbiased_sum.add(crps_field_mean(unbiased, raw.y));
  }
  const double biased_crps = biased_sum.value() / n;
  const double unbiased_crps = unbiased_sum.value() / n;
  INFO("biased ", biased_crps, " unbiased ", unbiased_crps);
  CHECK(biased_crps > unbiased_crps);
}

TEST_CASE("datagen: extra member draws are exchangeable, the truth is not") {
  // Per-pixel member noise: the chi-squared uniformity test needs pixel ranks
  // to be independent, which smooth (spatially correlated) noise would break.
  SynthConfig cfg;
  cfg.member_noise_grid = kContextSize;
  const std::uint64_t seed = 321;
  const int n_patches = 40;  // 40 * 256 > 1e4 pixels

  RankHistogram consistent(cfg.n_members, 888);
  RankHistogram against_truth(cfg.n_members, 889);
  for (int i = 0; i < n_patches; ++i) {
    const RawSynthPatch raw = synth_patch_raw(cfg, seed, static_cast<std::uint64_t>(i));
    EnsembleForecast ens;
    for (const GridField& m : raw.members) {
      ens.members.push_back(crop_center(m, kPatchSize, kPatchSize));
    }
    const GridField extra = synth_coarse_member(
        cfg, raw.biased_coarse, seed, static_cast<std::uint64_t>(i),
        static_cast<std::uint64_t>(cfg.n_members));
    against_truth.add_patch(ens, crop_center(raw.base_coarse, kPatchSize, kPatchSize));
    consistent.add_patch(ens, crop_center(extra, kPatchSize, kPatchSize));
  }
  INFO("consistent chi2 ", consistent.chi2(), " truth chi2 ", against_truth.chi2());
  CHECK(consistent.chi2() < 23.209);
  CHECK(against_truth.chi2() > 23.209);
}

TEST_CASE("datagen: synth config validation") {
  SynthConfig cfg;
  cfg.n_members = 5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = SynthConfig{};
  cfg.bias_damp = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = SynthConfig{};
  cfg.cells_max = cfg.cells_min - 1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  CHECK_THROWS_AS(synth_dataset(0, 1, SynthConfig{}), ValidationError);
}
