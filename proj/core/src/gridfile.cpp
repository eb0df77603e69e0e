#include "raincast/gridfile.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "raincast/error.hpp"

namespace raincast {

namespace {

constexpr const char* kMagic = "RGF1";
constexpr const char* kDtype = "f32le";
constexpr std::size_t kMaxHeaderBytes = 1 << 16;

static_assert(sizeof(float) == 4, "payload format requires 32-bit floats");

void to_little_endian(const float* src, char* dst, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, src, n * sizeof(float));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const auto u = std::bit_cast<std::uint32_t>(src[i]);
      dst[4 * i + 0] = static_cast<char>(u & 0xff);
      dst[4 * i + 1] = static_cast<char>((u >> 8) & 0xff);
      dst[4 * i + 2] = static_cast<char>((u >> 16) & 0xff);
      dst[4 * i + 3] = static_cast<char>((u >> 24) & 0xff);
    }
  }
}

void from_little_endian(const char* src, float* dst, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, src, n * sizeof(float));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t u = (static_cast<std::uint32_t>(static_cast<unsigned char>(src[4 * i + 0]))) |
                              (static_cast<std::uint32_t>(static_cast<unsigned char>(src[4 * i + 1])) << 8) |
                              (static_cast<std::uint32_t>(static_cast<unsigned char>(src[4 * i + 2])) << 16) |
                              (static_cast<std::uint32_t>(static_cast<unsigned char>(src[4 * i + 3])) << 24);
      dst[i] = std::bit_cast<float>(u);
    }
  }
}

}  // namespace

void write_grid_file(const std::filesystem::path& path, const std::string& variable,
                     const std::string& units, const std::vector<GridField>& channels) {
  if (channels.empty()) throw ValidationError("write_grid_file: no channels");
  const GridField& first = channels.front();
  if (first.height <= 0 || first.width <= 0) {
    throw ValidationError("write_grid_file: non-positive dims");
  }
  for (const GridField& c : channels) {
    if (c.height != first.height || c.width != first.width || c.space != first.space) {
      throw ValidationError("write_grid_file: channels disagree on layout or space");
    }
    if (c.values.size() != static_cast<std::size_t>(c.height) * c.width) {
      throw ValidationError("write_grid_file: field dims do not match storage");
    }
    for (float v : c.values) {
      if (!std::isfinite(v)) throw DataError("write_grid_file: non-finite value");
    }
  }

  nlohmann::json header;
  header["magic"] = kMagic;
  header["variable"] = variable;
  header["units"] = units;
  header["dims"] = {static_cast<int>(channels.size()), first.height, first.width};
  header["dtype"] = kDtype;
  header["space"] = to_string(first.space);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("write_grid_file: cannot open " + path.string());
  const std::string line = header.dump();
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.put('\n');

  std::vector<char> buf;
  for (const GridField& c : channels) {
    buf.resize(c.values.size() * sizeof(float));
    to_little_endian(c.values.data(), buf.data(), c.values.size());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  out.flush();
  if (!out) throw FormatError("write_grid_file: write failed for " + path.string());
}

std::pair<GridFileHeader, std::vector<GridField>> read_grid_file(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("read_grid_file: cannot open " + path.string());

  std::string line;
  line.reserve(256);
  char ch;
  while (in.get(ch)) {
    if (ch == '\n') break;
    line.push_back(ch);
    if (line.size() > kMaxHeaderBytes) {
      throw FormatError("read_grid_file: header line too long");
    }
  }
  if (!in) throw FormatError("read_grid_file: missing header line");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("read_grid_file: bad header json: ") + e.what());
  }

  GridFileHeader h;
  try {
    if (j.at("magic").get<std::string>() != kMagic) {
      throw FormatError("read_grid_file: bad magic");
    }
    h.variable = j.at("variable").get<std::string>();
    h.units = j.at("units").get<std::string>();
    const auto dims = j.at("dims");
    if (!dims.is_array() || dims.size() != 3) {
      throw FormatError("read_grid_file: dims must be [channels, height, width]");
    }
    h.channels = dims[0].get<int>();
    h.height = dims[1].get<int>();
    h.width = dims[2].get<int>();
    h.dtype = j.at("dtype").get<std::string>();
    h.space = space_from_string(j.at("space").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("read_grid_file: incomplete header: ") + e.what());
  }
  if (h.dtype != kDtype) throw FormatError("read_grid_file: unsupported dtype " + h.dtype);
  if (h.channels <= 0 || h.height <= 0 || h.width <= 0) {
    throw FormatError("read_grid_file: non-positive dims");
  }

  const std::size_t per_channel = static_cast<std::size_t>(h.height) * h.width;
  std::vector<GridField> fields;
  fields.reserve(static_cast<std::size_t>(h.channels));
  std::vector<char> buf(per_channel * sizeof(float));
  for (int c = 0; c < h.channels; ++c) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
      throw TruncationError("read_grid_file: payload shorter than header dims");
    }
    GridField f(h.height, h.width, h.space);
    from_little_endian(buf.data(), f.values.data(), per_channel);
    for (float v : f.values) {
      if (!std::isfinite(v)) throw DataError("read_grid_file: non-finite value");
    }
    fields.push_back(std::move(f));
  }
  in.peek();
  if (!in.eof()) throw FormatError("read_grid_file: trailing bytes after payload");
  return {h, std::move(fields)};
}

}  // namespace raincast
