#include "raincast/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include "nlohmann/json.hpp"
#include "raincast/error.hpp"

namespace raincast {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kBlobName = "params.f32";

json tensor_entry(const std::string& name, const Shape& s, std::size_t offset) {
  return json{{"name", name},
              {"shape", {s.n, s.h, s.w, s.c}},
              {"offset", offset}};
}

void append_blob(std::vector<float>& blob, const Tensor<float>& t) {
  blob.insert(blob.end(), t.data.begin(), t.data.end());
}

Shape shape_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("checkpoint: bad shape");
  return Shape{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

}  // namespace

void save_checkpoint(
    const std::string& dir, const Generator<float>& gen,
    const Discriminator<float>* disc, const std::string& stage,
    const std::vector<std::pair<std::string, Tensor<float>>>& extra_tensors,
    const std::string& extra_json) {
  const ArchSpec& arch = gen.arch();
  if (disc && (disc->arch().width_divisor != arch.width_divisor ||
               disc->arch().input_channels != arch.input_channels)) {
    throw ValidationError("save_checkpoint: generator/critic arch mismatch");
  }

  json tensors = json::array();
  std::vector<float> blob;
  for (const auto& [name, v] : gen.params().entries()) {
    tensors.push_back(tensor_entry("G." + name, v.shape(), blob.size()));
    append_blob(blob, v.value());
  }
  if (disc) {
    for (const auto& [name, v] : disc->params().entries()) {
      tensors.push_back(tensor_entry("D." + name, v.shape(), blob.size()));
      append_blob(blob, v.value());
    }
  }
  for (const auto& [name, t] : extra_tensors) {
    tensors.push_back(tensor_entry("X." + name, t.shape, blob.size()));
    append_blob(blob, t);
  }

  json extra;
  try {
    extra = json::parse(extra_json);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("save_checkpoint: extra_json: ") + e.what());
  }

  const json manifest{
      {"schema_version", 1},
      {"kind", "raincast_checkpoint"},
      {"arch",
       {{"width_divisor", arch.width_divisor},
        {"input_channels", arch.input_channels},
        {"leaky_slope", arch.leaky_slope}}},
      {"seed", gen.seed()},
      {"stage", stage},
      {"blob", kBlobName},
      {"tensors", std::move(tensors)},
      {"extra", std::move(extra)},
  };

  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / kBlobName, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("save_checkpoint: cannot write blob");
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!out.flush()) throw FormatError("save_checkpoint: blob write failed");
  }
  std::ofstream out(fs::path(dir) / "checkpoint.json");
  if (!out) throw FormatError("save_checkpoint: cannot write manifest");
  out << manifest.dump(2) << '\n';
  if (!out.flush()) throw FormatError("save_checkpoint: manifest write failed");
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "checkpoint.json");
  if (!in) throw FormatError("load_checkpoint: missing checkpoint.json in " + dir);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw FormatError(std::string("load_checkpoint: bad manifest: ") + e.what());
  }

  Checkpoint ck;
  std::vector<float> blob;
  try {
    if (manifest.at("schema_version").get<int>() != 1 ||
        manifest.at("kind").get<std::string>() != "raincast_checkpoint") {
      throw FormatError("load_checkpoint: not a checkpoint manifest");
    }
    ck.arch.width_divisor = manifest.at("arch").at("width_divisor").get<int>();
    ck.arch.input_channels = manifest.at("arch").at("input_channels").get<int>();
    ck.arch.leaky_slope = manifest.at("arch").at("leaky_slope").get<double>();
    ck.arch.validate();
    ck.seed = manifest.at("seed").get<std::uint64_t>();
    ck.stage = manifest.at("stage").get<std::string>();
    ck.extra_json = manifest.at("extra").dump();

    const fs::path blob_path =
        fs::path(dir) / manifest.at("blob").get<std::string>();
    std::ifstream bin(blob_path, std::ios::binary);
    if (!bin) throw FormatError("load_checkpoint: missing blob " + blob_path.string());
    bin.seekg(0, std::ios::end);
    const std::streamoff bytes = bin.tellg();
    bin.seekg(0);
    if (bytes < 0 || bytes % sizeof(float) != 0) {
      throw FormatError("load_checkpoint: blob size is not a float multiple");
    }
    blob.resize(static_cast<std::size_t>(bytes) / sizeof(float));
    bin.read(reinterpret_cast<char*>(blob.data()), bytes);
    if (!bin) throw TruncationError("load_checkpoint: blob read failed");

    ck.gen.emplace(ck.arch, ck.seed);
    bool any_disc = false;
    for (const json& t : manifest.at("tensors")) {
      if (t.at("name").get<std::string>().rfind("D.", 0) == 0) {
        any_disc = true;
        break;
      }
    }
    if (any_disc) ck.disc.emplace(ck.arch, ck.seed);

    std::size_t filled_g = 0, filled_d = 0;
    for (const json& t : manifest.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      const Shape shape = shape_from(t.at("shape"));
      const std::size_t offset = t.at("offset").get<std::size_t>();
      const std::size_t count = shape.numel();
      if (offset + count > blob.size()) {
        throw TruncationError("load_checkpoint: blob ends before tensor " + name);
      }
      auto fill = [&](Var<float> v) {
        if (v.shape() != shape) {
          throw FormatError("load_checkpoint: shape mismatch for " + name +
                            " (manifest " + shape.str() + ", arch " +
                            v.shape().str() + ")");
        }
        std::copy(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                  blob.begin() + static_cast<std::ptrdiff_t>(offset + count),
                  v.mutable_value().data.begin());
      };
      if (name.rfind("G.", 0) == 0) {
        const Var<float>* v = ck.gen->params().find(name.substr(2));
        if (!v) throw FormatError("load_checkpoint: unknown tensor " + name);
        fill(*v);
        ++filled_g;
      } else if (name.rfind("D.", 0) == 0) {
        const Var<float>* v = ck.disc->params().find(name.substr(2));
        if (!v) throw FormatError("load_checkpoint: unknown tensor " + name);
        fill(*v);
        ++filled_d;
      } else if (name.rfind("X.", 0) == 0) {
        Tensor<float> extra(shape);
        std::copy(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                  blob.begin() + static_cast<std::ptrdiff_t>(offset + count),
                  extra.data.begin());
        ck.extra_tensors.emplace_back(name.substr(2), std::move(extra));
      } else {
        throw FormatError("load_checkpoint: unrecognized tensor namespace in " + name);
      }
    }
    if (filled_g != ck.gen->params().entries().size()) {
      throw FormatError("load_checkpoint: generator parameters incomplete");
    }
    if (ck.disc && filled_d != ck.disc->params().entries().size()) {
      throw FormatError("load_checkpoint: critic parameters incomplete");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("load_checkpoint: bad manifest: ") + e.what());
  }
  return ck;
}

}  // namespace raincast
