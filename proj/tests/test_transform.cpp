#include <cmath>
#include <map>

#include "doctest.h"
#include "raincast/error.hpp"
#include "raincast/rng.hpp"
#include "raincast/transform.hpp"

using namespace raincast;

TEST_CASE("datagen: normalization endpoints and reference value") {
  const NormalizationSpec spec;
  CHECK(normalize_value(0.0f, spec) == 0.0f);
  CHECK(normalize_value(100.0f, spec) == doctest::Approx(1.0).epsilon(1e-12));
  // Saturation: values above the cap map to exactly the cap's image.
  CHECK(normalize_value(250.0f, spec) == normalize_value(100.0f, spec));
  // n(9) = log(10) / log(101)
  const double expected = std::log1p(9.0) / std::log1p(100.0);
  CHECK(normalize_value(9.0f, spec) == doctest::Approx(expected).epsilon(1e-7));
  CHECK(expected == doctest::Approx(0.498923).epsilon(1e-4));
}

TEST_CASE("datagen: normalization round-trips below the cap") {
  const NormalizationSpec spec;
  auto rng = make_rng(5150);
  for (int i = 0; i < 1000; ++i) {
    const float v = static_cast<float>(uniform(rng, 0.0, 100.0));
    const float back = denormalize_value(normalize_value(v, spec), spec);
    CHECK(std::abs(back - v) <= 1e-5 * std::max(1.0f, std::abs(v)));
  }
  CHECK(denormalize_value(0.0f, spec) == 0.0f);
  CHECK(denormalize_value(1.0f, spec) == doctest::Approx(100.0).epsilon(1e-6));
}

TEST_CASE("datagen: normalization is monotone") {
  const NormalizationSpec spec;
  float prev = -1.0f;
  for (int i = 0; i <= 1000; ++i) {
    const float n = normalize_value(static_cast<float>(i * 0.1), spec);
    CHECK(n >= prev);
    CHECK(n >= 0.0f);
    CHECK(n <= 1.0f);
    prev = n;
  }
}

TEST_CASE("datagen: field normalization checks spaces") {
  const NormalizationSpec spec;
  GridField raw(2, 2, Space::RawMm);
  raw.values = {0.0f, 1.0f, 10.0f, 100.0f};
  const GridField n = normalize(raw, spec);
  CHECK(n.space == Space::Normalized);
  CHECK_THROWS_AS(normalize(n, spec), ValidationError);
  const GridField back = denormalize(n, spec);
  CHECK(back.space == Space::RawMm);
  CHECK_THROWS_AS(denormalize(back, spec), ValidationError);
}

TEST_CASE("datagen: patch weight formula") {
  const SamplerWeights sw;
  // Dry patch sits at the floor, saturated patch at the cap.
  CHECK(patch_weight_from_fraction(0.0, sw) == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(patch_weight_from_fraction(1.0, sw) == doctest::Approx(0.4).epsilon(1e-12));
  // Frozen reference: frac = 0.5 -> 0.02 + (1 - 0.0625) * 0.38 = 0.37625.
  CHECK(patch_weight_from_fraction(0.5, sw) == doctest::Approx(0.37625).epsilon(1e-12));

  // Monotone non-decreasing in the rainy fraction.
  double prev = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double w = patch_weight_from_fraction(i / 100.0, sw);
    CHECK(w >= prev);
    CHECK(w >= sw.w_min - 1e-12);
    CHECK(w <= sw.w_max + 1e-12);
    prev = w;
  }
}

TEST_CASE("datagen: patch weight counts strictly rainy pixels") {
  const SamplerWeights sw;
  GridField y(4, 4, Space::RawMm);
  // Exactly half the pixels strictly above the 0.025 mm threshold; pixels at
  // the threshold do not count.
  for (int i = 0; i < 8; ++i) y.values[i] = 1.0f;
  for (int i = 8; i < 12; ++i) y.values[i] = 0.025f;
  CHECK(rainy_fraction(y, sw) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(patch_weight(y, sw) == doctest::Approx(0.37625).epsilon(1e-12));

  GridField norm(2, 2, Space::Normalized);
  CHECK_THROWS_AS(patch_weight(norm, sw), ValidationError);
}

TEST_CASE("datagen: weighted sampling matches its target distribution") {
  // Two patches with weights 0.02 and 0.4: the second should be drawn with
  // probability 0.4 / 0.42 ~ 0.952.
  const std::vector<double> w = {0.02, 0.4};
  const auto draws = weighted_sample_indices(w, 100000, 77);
  std::size_t second = 0;
  for (std::size_t i : draws) second += (i == 1);
  const double freq = static_cast<double>(second) / static_cast<double>(draws.size());
  CHECK(std::abs(freq - 0.4 / 0.42) < 0.01);
}

TEST_CASE("datagen: weighted sampling empirical frequencies within 0.02") {
  auto rng = make_rng(123);
  const std::size_t n = 100000;
  std::vector<double> w(7);
  double total = 0.0;
  for (double& x : w) {
    x = uniform(rng, 0.05, 1.0);
    total += x;
  }
  const auto draws = weighted_sample_indices(w, n, 901);
  std::vector<std::size_t> counts(w.size(), 0);
  for (std::size_t i : draws) ++counts[i];
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double freq = static_cast<double>(counts[i]) / static_cast<double>(n);
    CHECK(std::abs(freq - w[i] / total) < 0.02);
  }
}

TEST_CASE("datagen: weighted sampling is deterministic and validated") {
  const std::vector<double> w = {1.0, 2.0, 3.0};
  CHECK(weighted_sample_indices(w, 50, 9) == weighted_sample_indices(w, 50, 9));
  CHECK(weighted_sample_indices(w, 50, 9) != weighted_sample_indices(w, 50, 10));

  const auto one = weighted_sample_indices({5.0}, 10, 3);
  for (std::size_t i : one) CHECK(i == 0);

  CHECK_THROWS_AS(weighted_sample_indices({}, 5, 1), ValidationError);
  CHECK_THROWS_AS(weighted_sample_indices({0.0, 0.0}, 5, 1), ValidationError);
  CHECK_THROWS_AS(weighted_sample_indices({1.0, -0.5}, 5, 1), ValidationError);
}
