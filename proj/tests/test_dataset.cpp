#include <cstring>
#include <fstream>

#include "doctest.h"
#include "raincast/dataset.hpp"
#include "raincast/error.hpp"
#include "raincast/synth.hpp"
#include "testutil.hpp"

using namespace raincast;

namespace {

Dataset small_dataset(int n, std::uint64_t seed) {
  SynthConfig cfg;
  Dataset ds;
  ds.pairs = synth_dataset(n, seed, cfg);
  ds.splits = positional_splits(ds.pairs.size());
  ds.norm = cfg.norm;
  ds.sampler = cfg.sampler;
  ds.seed = seed;
  return ds;
}

bool same_bits(const GridField& a, const GridField& b) {
  return a.height == b.height && a.width == b.width && a.space == b.space &&
         std::memcmp(a.values.data(), b.values.data(),
                     a.values.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("datagen: positional splits are 70/15/15") {
  const auto s = positional_splits(20);
  REQUIRE(s.size() == 20);
  int train = 0, val = 0, test = 0;
  for (const auto& label : s) {
    train += label == "train";
    val += label == "val";
    test += label == "test";
  }
  CHECK(train == 14);
  CHECK(val == 3);
  CHECK(test == 3);
  // Labels are contiguous blocks.
  CHECK(s.front() == "train");
  CHECK(s[13] == "train");
  CHECK(s[14] == "val");
  CHECK(s[16] == "val");
  CHECK(s[17] == "test");
  CHECK(s.back() == "test");
}

TEST_CASE("datagen: dataset round-trips through its directory format") {
  testutil::TempDir tmp("raincast-ds");
  const Dataset ds = small_dataset(12, 777);
  save_dataset(tmp.path() / "ds", ds);
  const Dataset back = load_dataset(tmp.path() / "ds");

  REQUIRE(back.pairs.size() == ds.pairs.size());
  CHECK(back.splits == ds.splits);
  CHECK(back.seed == ds.seed);
  CHECK(back.norm.y_max_mm == ds.norm.y_max_mm);
  CHECK(back.sampler.w_min == ds.sampler.w_min);
  CHECK(back.sampler.w_max == ds.sampler.w_max);
  CHECK(back.sampler.a == ds.sampler.a);
  CHECK(back.sampler.rain_threshold_mm == ds.sampler.rain_threshold_mm);

  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    CHECK(back.pairs[i].weight == ds.pairs[i].weight);
    CHECK(same_bits(back.pairs[i].y, ds.pairs[i].y));
    CHECK(same_bits(back.pairs[i].y_coarse, ds.pairs[i].y_coarse));
    for (int c = 0; c < kInputChannels; ++c) {
      CHECK(same_bits(back.pairs[i].x.channels[c], ds.pairs[i].x.channels[c]));
    }
  }

  const auto train = back.split_indices("train");
  const auto val = back.split_indices("val");
  const auto test = back.split_indices("test");
  CHECK(train.size() == 8);
  CHECK(val.size() == 2);
  CHECK(test.size() == 2);
}

TEST_CASE("datagen: dataset loader rejects damaged directories") {
  testutil::TempDir tmp("raincast-ds");
  CHECK_THROWS_AS(load_dataset(tmp.path() / "nowhere"), FormatError);

  const Dataset ds = small_dataset(2, 5);
  const auto dir = tmp.path() / "ds";
  save_dataset(dir, ds);

  SUBCASE("corrupt manifest") {
    std::ofstream(dir / "manifest.json") << "not json";
    CHECK_THROWS_AS(load_dataset(dir), FormatError);
  }
  SUBCASE("missing patch file") {
    std::filesystem::remove(dir / "patch_00001_x.rgf");
    CHECK_THROWS_AS(load_dataset(dir), FormatError);
  }
  SUBCASE("truncated target file") {
    std::filesystem::resize_file(
        dir / "patch_00000_y.rgf",
        std::filesystem::file_size(dir / "patch_00000_y.rgf") - 16);
    CHECK_THROWS_AS(load_dataset(dir), TruncationError);
  }
}

TEST_CASE("datagen: dataset saver validates its inputs") {
  testutil::TempDir tmp("raincast-ds");
  Dataset ds = small_dataset(2, 6);
  ds.splits.pop_back();
  CHECK_THROWS_AS(save_dataset(tmp.path() / "a", ds), ValidationError);

  Dataset bad_split = small_dataset(2, 6);
  bad_split.splits[0] = "holdout";
  CHECK_THROWS_AS(save_dataset(tmp.path() / "b", bad_split), ValidationError);

  Dataset empty;
  CHECK_THROWS_AS(save_dataset(tmp.path() / "c", empty), ValidationError);
}
