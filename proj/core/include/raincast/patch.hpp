#pragma once

#include <vector>

#include "raincast/grid.hpp"

namespace raincast {

// Fixed patch geometry: 16x16 coarse conditioning fields, 8x upscaling to a
// 128x128 target, and a 46x46 coarse context window (15 coarse pixels of
// padding on each side of the target footprint).
inline constexpr int kPatchSize = 16;
inline constexpr int kUpscaleFactor = 8;
inline constexpr int kTargetSize = kPatchSize * kUpscaleFactor;
inline constexpr int kContextPad = 15;
inline constexpr int kContextSize = kPatchSize + 2 * kContextPad;

// Channel layout of the conditioning tensor.
inline constexpr int kEnsembleMembers = 10;
inline constexpr int kChPrecipBegin = 0;
inline constexpr int kChTcwBegin = 10;
inline constexpr int kChT2m = 20;
inline constexpr int kChCape = 21;
inline constexpr int kChCin = 22;
inline constexpr int kChContext = 23;
inline constexpr int kInputChannels = 24;

// The 24-channel conditioning tensor. All channels are normalized 16x16
// fields with values in [0, 1].
struct InputPatch {
  std::vector<GridField> channels;

  // Throws ValidationError unless the layout invariants hold.
  void validate() const;
};

struct PatchPair {
  InputPatch x;
  GridField y;         // 128x128, normalized
  GridField y_coarse;  // coarsen(y, 8), normalized
  double weight = 0.0;
};

// Assembles the conditioning tensor in its fixed channel order. The context
// source is the 46x46 coarse field centred on the target footprint; it is
// downsampled to 16x16 here. All inputs must already be normalized.
InputPatch build_input_patch(const std::vector<GridField>& precip_members,
                             const std::vector<GridField>& tcw_members,
                             const GridField& t2m, const GridField& cape,
                             const GridField& cin, const GridField& context);

}  // namespace raincast
