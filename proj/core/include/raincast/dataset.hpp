#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "raincast/patch.hpp"
#include "raincast/transform.hpp"

namespace raincast {

// A persisted dataset: patch pairs plus the conventions needed to interpret
// them (normalization constants, sampler parameters, generation seed) and an
// explicit split label per pair.
struct Dataset {
  std::vector<PatchPair> pairs;
  std::vector<std::string> splits;  // "train" / "val" / "test", one per pair
  NormalizationSpec norm;
  SamplerWeights sampler;
  std::uint64_t seed = 0;

  std::vector<std::size_t> split_indices(const std::string& split) const;
};

// Positional 70/15/15 split labels for n i.i.d. patches.
std::vector<std::string> positional_splits(std::size_t n);

// Writes manifest.json plus one input/target grid-file pair per patch.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);

// Loads a dataset directory; recomputes each pair's coarse target from the
// stored high-resolution target.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace raincast
