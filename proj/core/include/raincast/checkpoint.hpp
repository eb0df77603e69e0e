#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "raincast/netcore.hpp"

// Checkpoint persistence: a JSON manifest naming every parameter tensor
// (shape and offset) plus a little-endian float32 blob holding the values
// in manifest order. Generator parameters are stored under "G.", critic
// parameters under "D.", and arbitrary caller tensors (optimizer moments,
// for resumable training) under "X.". The manifest also records the
// architecture, init seed, stage tag, and an opaque JSON object the caller
// may use for its own bookkeeping.

namespace raincast {

struct Checkpoint {
  ArchSpec arch;
  std::uint64_t seed = 0;
  std::string stage;
  std::optional<Generator<float>> gen;
  std::optional<Discriminator<float>> disc;
  std::vector<std::pair<std::string, Tensor<float>>> extra_tensors;
  std::string extra_json = "{}";
};

void save_checkpoint(
    const std::string& dir, const Generator<float>& gen,
    const Discriminator<float>* disc, const std::string& stage,
    const std::vector<std::pair<std::string, Tensor<float>>>& extra_tensors = {},
    const std::string& extra_json = "{}");

// Reconstructs the networks from the recorded architecture and seed, then
// overwrites every parameter from the blob. Throws FormatError on manifest
// problems, TruncationError on a short blob.
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace raincast
