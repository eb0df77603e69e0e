#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "raincast/grid.hpp"

namespace raincast {

// Raingrid file (RGF v1): one '\n'-terminated JSON header line followed by a
// channel-major, row-major little-endian float32 payload.  Round-trips are
// bit-exact.
struct GridFileHeader {
  std::string variable;
  std::string units;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::string dtype = "f32le";
  Space space = Space::RawMm;
};

// Writes all channels to path.  Channels must be non-empty, share one
// spatial layout and one space, and contain only finite values.
void write_grid_file(const std::filesystem::path& path, const std::string& variable,
                     const std::string& units, const std::vector<GridField>& channels);

// Reads a grid file back.  Throws FormatError on bad magic/header/layout,
// TruncationError when the payload is shorter than the header promises, and
// DataError on non-finite payload values.
std::pair<GridFileHeader, std::vector<GridField>> read_grid_file(
    const std::filesystem::path& path);

}  // namespace raincast
