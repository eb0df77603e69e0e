#include "raincast/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <utility>

#include "nlohmann/json.hpp"
#include "raincast/error.hpp"
#include "raincast/gridfile.hpp"

namespace raincast {

namespace {

using nlohmann::json;

bool valid_split(const std::string& s) {
  return s == "train" || s == "val" || s == "test";
}

std::pair<std::string, std::string> patch_file_names(std::size_t i) {
  char x[32];
  char y[32];
  std::snprintf(x, sizeof x, "patch_%05zu_x.rgf", i);
  std::snprintf(y, sizeof y, "patch_%05zu_y.rgf", i);
  return {x, y};
}

}  // namespace

std::vector<std::size_t> Dataset::split_indices(const std::string& split) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == split) idx.push_back(i);
  }
  return idx;
}

std::vector<std::string> positional_splits(std::size_t n) {
  const std::size_t train_end = n * 7 / 10;
  const std::size_t val_end = n * 17 / 20;
  std::vector<std::string> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = i < train_end ? "train" : i < val_end ? "val" : "test";
  }
  return out;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  if (ds.pairs.empty()) throw ValidationError("save_dataset: empty dataset");
  if (ds.pairs.size() != ds.splits.size()) {
    throw ValidationError("save_dataset: one split label per pair required");
  }
  std::filesystem::create_directories(dir);

  json patches = json::array();
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    const PatchPair& p = ds.pairs[i];
    p.x.validate();
    if (p.y.height != kTargetSize || p.y.width != kTargetSize ||
        p.y.space != Space::Normalized) {
      throw ValidationError("save_dataset: target must be a normalized " +
                            std::to_string(kTargetSize) + "x" +
                            std::to_string(kTargetSize) + " field");
    }
    if (!valid_split(ds.splits[i])) {
      throw ValidationError("save_dataset: unknown split label '" + ds.splits[i] + "'");
    }
    const auto [x_name, y_name] = patch_file_names(i);
    write_grid_file(dir / x_name, "input_patch", "1", p.x.channels);
    write_grid_file(dir / y_name, "precip_target", "1", {p.y});
    patches.push_back({{"x", x_name},
                       {"y", y_name},
                       {"weight", p.weight},
                       {"split", ds.splits[i]}});
  }

  const json manifest = {
      {"schema_version", 1},
      {"kind", "raincast_dataset"},
      {"seed", ds.seed},
      {"normalization", {{"y_max_mm", ds.norm.y_max_mm}}},
      {"sampler",
       {{"w_min", ds.sampler.w_min},
        {"w_max", ds.sampler.w_max},
        {"a", ds.sampler.a},
        {"rain_threshold_mm", ds.sampler.rain_threshold_mm}}},
      {"patches", std::move(patches)},
  };
  std::ofstream out(dir / "manifest.json");
  if (!out) throw FormatError("save_dataset: cannot write manifest");
  out << manifest.dump(2) << '\n';
  if (!out.flush()) throw FormatError("save_dataset: manifest write failed");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("load_dataset: missing manifest.json in " + dir.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw FormatError(std::string("load_dataset: bad manifest: ") + e.what());
  }

  Dataset ds;
  try {
    if (manifest.at("schema_version").get<int>() != 1 ||
        manifest.at("kind").get<std::string>() != "raincast_dataset") {
      throw FormatError("load_dataset: not a dataset manifest");
    }
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.norm.y_max_mm = manifest.at("normalization").at("y_max_mm").get<double>();
    const json& sw = manifest.at("sampler");
    ds.sampler.w_min = sw.at("w_min").get<double>();
    ds.sampler.w_max = sw.at("w_max").get<double>();
    ds.sampler.a = sw.at("a").get<int>();
    ds.sampler.rain_threshold_mm = sw.at("rain_threshold_mm").get<double>();

    for (const json& entry : manifest.at("patches")) {
      PatchPair p;
      auto [xh, xs] = read_grid_file(dir / entry.at("x").get<std::string>());
      p.x.channels = std::move(xs);
      p.x.validate();
      (void)xh;

      auto [yh, ys] = read_grid_file(dir / entry.at("y").get<std::string>());
      (void)yh;
      if (ys.size() != 1 || ys[0].height != kTargetSize ||
          ys[0].width != kTargetSize || ys[0].space != Space::Normalized) {
        throw FormatError("load_dataset: target file has wrong shape or space");
      }
      p.y = std::move(ys[0]);
      p.y_coarse = coarsen(p.y, kUpscaleFactor);
      p.weight = entry.at("weight").get<double>();

      const std::string split = entry.at("split").get<std::string>();
      if (!valid_split(split)) {
        throw FormatError("load_dataset: unknown split label '" + split + "'");
      }
      ds.pairs.push_back(std::move(p));
      ds.splits.push_back(split);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("load_dataset: bad manifest: ") + e.what());
  }
  if (ds.pairs.empty()) throw FormatError("load_dataset: manifest lists no patches");
  return ds;
}

}  // namespace raincast
