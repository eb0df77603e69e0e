#include "raincast/patch.hpp"

#include <string>

#include "raincast/error.hpp"

namespace raincast {

namespace {

void require_patch_field(const GridField& f, const char* what) {
  if (f.height != kPatchSize || f.width != kPatchSize) {
    throw ValidationError(std::string("input patch: ") + what + " must be " +
                          std::to_string(kPatchSize) + "x" +
                          std::to_string(kPatchSize) + ", got " +
                          std::to_string(f.height) + "x" + std::to_string(f.width));
  }
  if (f.space != Space::Normalized) {
    throw ValidationError(std::string("input patch: ") + what +
                          " must be normalized");
  }
}

}  // namespace

void InputPatch::validate() const {
  if (channels.size() != static_cast<std::size_t>(kInputChannels)) {
    throw ValidationError("input patch: expected " +
                          std::to_string(kInputChannels) + " channels, got " +
                          std::to_string(channels.size()));
  }
  for (const GridField& c : channels) {
    require_patch_field(c, "channel");
    for (float v : c.values) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw ValidationError("input patch: values must lie in [0, 1]");
      }
    }
  }
}

InputPatch build_input_patch(const std::vector<GridField>& precip_members,
                             const std::vector<GridField>& tcw_members,
                             const GridField& t2m, const GridField& cape,
                             const GridField& cin, const GridField& context) {
  if (precip_members.size() != static_cast<std::size_t>(kEnsembleMembers) ||
      tcw_members.size() != static_cast<std::size_t>(kEnsembleMembers)) {
    throw ValidationError("input patch: expected " +
                          std::to_string(kEnsembleMembers) +
                          " precipitation and total-column-water members");
  }
  if (context.height != kContextSize || context.width != kContextSize) {
    throw ValidationError("input patch: context source must be " +
                          std::to_string(kContextSize) + "x" +
                          std::to_string(kContextSize));
  }
  if (context.space != Space::Normalized) {
    throw ValidationError("input patch: context source must be normalized");
  }

  InputPatch patch;
  patch.channels.reserve(kInputChannels);
  for (const GridField& m : precip_members) {
    require_patch_field(m, "precipitation member");
    patch.channels.push_back(m);
  }
  for (const GridField& m : tcw_members) {
    require_patch_field(m, "total-column-water member");
    patch.channels.push_back(m);
  }
  require_patch_field(t2m, "2m temperature");
  patch.channels.push_back(t2m);
  require_patch_field(cape, "CAPE");
  patch.channels.push_back(cape);
  require_patch_field(cin, "CIN");
  patch.channels.push_back(cin);
  patch.channels.push_back(regrid_bilinear(context, kPatchSize, kPatchSize));

  patch.validate();
  return patch;
}

}  // namespace raincast
