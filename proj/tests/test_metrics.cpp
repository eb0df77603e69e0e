#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "raincast/error.hpp"
#include "raincast/metrics.hpp"
#include "raincast/rng.hpp"

using namespace raincast;

namespace {

// Independent CRPS oracle: integrate (F(t) - 1{t >= obs})^2 numerically.
// The integrand is piecewise constant between the jump points, so a dense
// midpoint rule inside each segment integrates it exactly.
double crps_integral_oracle(std::vector<double> members, double obs) {
  const int k = static_cast<int>(members.size());
  std::vector<double> brk = members;
  brk.push_back(obs);
  std::sort(brk.begin(), brk.end());
  std::vector<double> pts;
  pts.push_back(brk.front() - 1.0);
  for (double b : brk) pts.push_back(b);
  pts.push_back(brk.back() + 1.0);

  double integral = 0.0;
  for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
    const double a = pts[s];
    const double b = pts[s + 1];
    if (!(b > a)) continue;
    const int cells = 16;
    const double h = (b - a) / cells;
    for (int c = 0; c < cells; ++c) {
      const double t = a + (c + 0.5) * h;
      int below = 0;
      for (double x : members) below += (x <= t);
      const double F = static_cast<double>(below) / k;
      const double Fo = t >= obs ? 1.0 : 0.0;
      integral += (F - Fo) * (F - Fo) * h;
    }
  }
  return integral;
}

// 1% critical value of the chi-squared distribution with 10 degrees of
// freedom (11 rank bins).
constexpr double kChi2Crit10Df1Pct = 23.209;

}  // namespace

TEST_CASE("verify: crps closed form equals the CDF integral") {
  auto rng = make_rng(314159);
  for (int rep = 0; rep < 100; ++rep) {
    const int k = 1 + static_cast<int>(uniform_index(rng, 10));
    std::vector<double> members(static_cast<std::size_t>(k));
    for (double& x : members) {
      x = uniform(rng, 0.0, 30.0);
      if (uniform01(rng) < 0.2) x = 0.0;  // dry members create ties
    }
    double obs = uniform(rng, 0.0, 30.0);
    if (rep % 7 == 0) obs = members.front();  // observation tied to a member
    const double closed = crps_pixel(members, obs);
    const double integral = crps_integral_oracle(members, obs);
    CHECK(std::abs(closed - integral) <= 1e-6);
  }
}

TEST_CASE("verify: crps hand cases") {
  CHECK(crps_pixel(std::vector<double>{0.0, 2.0}, 1.0) ==
        doctest::Approx(0.5).epsilon(1e-12));
  // A single member reduces to absolute error.
  CHECK(crps_pixel(std::vector<double>{3.0}, 1.25) ==
        doctest::Approx(1.75).epsilon(1e-12));
  // A perfect, zero-spread ensemble scores zero.
  CHECK(crps_pixel(std::vector<double>{2.0, 2.0, 2.0}, 2.0) == 0.0);
}

TEST_CASE("verify: crps scale and translation behaviour") {
  auto rng = make_rng(99);
  std::vector<double> members(8);
  for (double& x : members) x = uniform(rng, 0.0, 10.0);
  const double obs = 4.2;
  const double base = crps_pixel(members, obs);
  CHECK(base >= 0.0);

  std::vector<double> scaled = members;
  for (double& x : scaled) x *= 3.0;
  CHECK(crps_pixel(scaled, obs * 3.0) == doctest::Approx(3.0 * base).epsilon(1e-12));

  std::vector<double> shifted = members;
  for (double& x : shifted) x += 7.0;
  CHECK(crps_pixel(shifted, obs + 7.0) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("verify: crps field mean is order-insensitive to 1e-9") {
  auto rng = make_rng(2024);
  const int k = 6;
  EnsembleForecast ens;
  for (int m = 0; m < k; ++m) {
    GridField f(40, 40, Space::RawMm);
    for (float& v : f.values) v = static_cast<float>(uniform(rng, 0.0, 50.0));
    ens.members.push_back(std::move(f));
  }
  GridField obs(40, 40, Space::RawMm);
  for (float& v : obs.values) v = static_cast<float>(uniform(rng, 0.0, 50.0));

  const double fwd = crps_field_mean(ens, obs);

  // Reverse the pixel stream: flip every member and the observation.
  EnsembleForecast rev = ens;
  GridField robs = obs;
  for (GridField& m : rev.members) std::reverse(m.values.begin(), m.values.end());
  std::reverse(robs.values.begin(), robs.values.end());
  const double bwd = crps_field_mean(rev, robs);
  CHECK(std::abs(fwd - bwd) <= 1e-9 * std::max(1.0, std::abs(fwd)));
}

TEST_CASE("verify: brier hand cases") {
  CHECK(brier(0.3, true) == doctest::Approx(0.49).epsilon(1e-12));
  CHECK(brier(0.3, false) == doctest::Approx(0.09).epsilon(1e-12));
  CHECK(brier(1.0, true) == 0.0);
  CHECK(brier(0.0, false) == 0.0);
}

TEST_CASE("verify: event probability is strict") {
  const std::vector<double> m = {1.0, 5.0, 10.0};
  CHECK(event_probability(m, 5.0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(event_probability(m, 0.5) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(event_probability(m, 10.0) == 0.0);
}

TEST_CASE("verify: reliability binning edges") {
  CHECK(ReliabilityTable::bin_of(0.0) == 0);
  CHECK(ReliabilityTable::bin_of(0.19) == 0);
  CHECK(ReliabilityTable::bin_of(0.2) == 1);
  CHECK(ReliabilityTable::bin_of(0.79) == 3);
  CHECK(ReliabilityTable::bin_of(0.8) == 4);
  CHECK(ReliabilityTable::bin_of(1.0) == 4);  // right-closed final bin
}

TEST_CASE("verify: reliability of a calibrated forecast stream") {
  ReliabilityTable table({1.0});
  auto rng = make_rng(7777);
  const int k = 10;
  std::vector<double> members(k);
  for (int pixel = 0; pixel < 100000; ++pixel) {
    const int j = static_cast<int>(uniform_index(rng, 11));  // true prob j/10
    for (int m = 0; m < k; ++m) members[m] = m < j ? 2.0 : 0.5;
    const double obs = uniform01(rng) < j / 10.0 ? 2.0 : 0.5;
    table.add_pixel(members, obs);
  }
  std::int64_t total = 0;
  for (const ReliabilityRow& row : table.rows()) {
    total += row.count;
    if (row.count == 0) continue;
    CHECK(std::abs(row.obs_freq - row.mean_prob) < 0.02);
  }
  CHECK(total == 100000);
  CHECK(table.mean_diagonal_gap(1.0) < 0.02);
}

TEST_CASE("verify: reliability puts certainty in the top bin") {
  ReliabilityTable table({1.0});
  const std::vector<double> members(10, 5.0);
  for (int i = 0; i < 10; ++i) table.add_pixel(members, 5.0);
  const auto rows = table.rows();
  REQUIRE(rows.size() == 5);
  CHECK(rows[4].count == 10);
  CHECK(rows[4].mean_prob == doctest::Approx(1.0));
  CHECK(rows[4].obs_freq == doctest::Approx(1.0));
}

TEST_CASE("verify: rank histogram extremes") {
  RankHistogram low(4, 11);
  RankHistogram high(4, 11);
  const std::vector<double> members = {1.0, 2.0, 3.0, 4.0};
  for (int i = 0; i < 50; ++i) {
    low.add(members, 0.5);    // observation below every member
    high.add(members, 9.0);   // observation above every member
  }
  CHECK(low.counts()[0] == 50);
  CHECK(high.counts()[4] == 50);
}

TEST_CASE("verify: rank histogram consistency chi-squared at 1e4 pixels") {
  const int k = 10;
  auto rng = make_rng(31337);
  RankHistogram hist(k, 4242);
  std::vector<double> members(k);
  for (int pixel = 0; pixel < 10000; ++pixel) {
    for (double& m : members) m = normal01(rng);
    const double obs = normal01(rng);  // exchangeable with the members
    hist.add(members, obs);
  }
  CHECK(hist.chi2() < kChi2Crit10Df1Pct);
}

TEST_CASE("verify: rank histogram detects an underdispersed biased ensemble") {
  const int k = 10;
  auto rng = make_rng(31338);
  RankHistogram hist(k, 4243);
  std::vector<double> members(k);
  for (int pixel = 0; pixel < 10000; ++pixel) {
    for (double& m : members) m = 0.5 * normal01(rng) + 0.3;
    const double obs = normal01(rng);
    hist.add(members, obs);
  }
  CHECK(hist.chi2() > kChi2Crit10Df1Pct);
}

TEST_CASE("verify: rank histogram randomizes ties uniformly") {
  // All-zero members and observations: every rank must be drawn uniformly.
  const int k = 10;
  RankHistogram hist(k, 555);
  const std::vector<double> members(k, 0.0);
  for (int pixel = 0; pixel < 10000; ++pixel) hist.add(members, 0.0);
  CHECK(hist.chi2() < kChi2Crit10Df1Pct);
}

TEST_CASE("verify: rank histogram rejects inconsistent member counts") {
  RankHistogram hist(4, 1);
  CHECK_THROWS_AS(hist.add(std::vector<double>{1.0, 2.0}, 0.5), ValidationError);
}

TEST_CASE("verify: fss hand cases") {
  // Two 2x2 tiles; threshold 0.5.
  GridField obs(2, 4, Space::RawMm);
  GridField pred(2, 4, Space::RawMm);

  // Disjoint placement: O = (0.5, 0), M = (0, 0.5) -> 0.
  obs.at(0, 0) = 1.0f;
  obs.at(1, 0) = 1.0f;
  pred.at(0, 2) = 1.0f;
  pred.at(1, 2) = 1.0f;
  CHECK(fss(pred, obs, 0.5, 2) == doctest::Approx(0.0).epsilon(1e-12));

  // Half overlap: O = (0.5, 0.5), M = (0.5, 0) -> 2/3.
  GridField obs2(2, 4, Space::RawMm);
  GridField pred2(2, 4, Space::RawMm);
  obs2.at(0, 0) = 1.0f;
  obs2.at(1, 0) = 1.0f;
  obs2.at(0, 2) = 1.0f;
  obs2.at(1, 2) = 1.0f;
  pred2.at(0, 0) = 1.0f;
  pred2.at(1, 0) = 1.0f;
  CHECK(fss(pred2, obs2, 0.5, 2) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  // Perfect match -> 1; both empty -> 1.
  CHECK(fss(obs2, obs2, 0.5, 2) == doctest::Approx(1.0).epsilon(1e-12));
  GridField empty(2, 4, Space::RawMm);
  CHECK(fss(empty, empty, 0.5, 2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("verify: fss stays in [0, 1] and validates the window") {
  auto rng = make_rng(606);
  for (int rep = 0; rep < 50; ++rep) {
    GridField a(8, 8, Space::RawMm);
    GridField b(8, 8, Space::RawMm);
    for (float& v : a.values) v = static_cast<float>(uniform(rng, 0.0, 2.0));
    for (float& v : b.values) v = static_cast<float>(uniform(rng, 0.0, 2.0));
    const double s = fss(a, b, 1.0, 4);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
  GridField a(8, 8, Space::RawMm);
  CHECK_THROWS_AS(fss(a, a, 1.0, 3), ValidationError);
}

TEST_CASE("verify: deterministic suite on a perfect member") {
  auto rng = make_rng(17);
  GridField obs(16, 16, Space::RawMm);
  for (float& v : obs.values) v = static_cast<float>(uniform(rng, 0.0, 20.0));
  EnsembleForecast ens;
  ens.members.push_back(obs);

  DeterministicAccumulator acc({1.0, 5.0, 10.0}, 4.0, 16);
  acc.add_patch(ens, obs);
  const DeterministicScores s = acc.finalize();
  CHECK(s.rmse == doctest::Approx(0.0));
  CHECK(s.fss == doctest::Approx(1.0));
  for (std::size_t t = 0; t < s.thresholds_mm.size(); ++t) {
    CHECK(s.precision[t] == doctest::Approx(1.0));
    CHECK(s.recall[t] == doctest::Approx(1.0));
  }
}

TEST_CASE("verify: deterministic suite hand confusion matrix") {
  GridField obs(2, 2, Space::RawMm);
  GridField pred(2, 2, Space::RawMm);
  // Positives (threshold 1): obs at (0,0) and (1,0); pred at (0,0) and (0,1).
  obs.at(0, 0) = 2.0f;
  obs.at(1, 0) = 2.0f;
  pred.at(0, 0) = 2.0f;
  pred.at(0, 1) = 2.0f;
  EnsembleForecast ens;
  ens.members.push_back(pred);

  DeterministicAccumulator acc({1.0}, 1.0, 2);
  acc.add_patch(ens, obs);
  const DeterministicScores s = acc.finalize();
  CHECK(s.precision[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.recall[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.rmse == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("verify: deterministic suite excludes undefined scores with counts") {
  GridField obs(2, 2, Space::RawMm);   // no observed positives
  GridField pred(2, 2, Space::RawMm);  // no predicted positives
  EnsembleForecast ens;
  ens.members.push_back(pred);

  DeterministicAccumulator acc({1.0}, 1.0, 2);
  acc.add_patch(ens, obs);
  const DeterministicScores s = acc.finalize();
  CHECK(s.precision_undefined[0] == 1);
  CHECK(s.recall_undefined[0] == 1);

  // A member that rains where the observation does not: precision defined
  // (and zero), recall still undefined.
  GridField wet(2, 2, Space::RawMm);
  wet.at(0, 0) = 5.0f;
  EnsembleForecast ens2;
  ens2.members.push_back(wet);
  DeterministicAccumulator acc2({1.0}, 1.0, 2);
  acc2.add_patch(ens2, obs);
  const DeterministicScores s2 = acc2.finalize();
  CHECK(s2.precision[0] == doctest::Approx(0.0));
  CHECK(s2.precision_undefined[0] == 0);
  CHECK(s2.recall_undefined[0] == 1);
}

TEST_CASE("verify: ensembles must be raw millimetres") {
  EnsembleForecast ens;
  ens.members.emplace_back(4, 4, Space::Normalized);
  GridField obs(4, 4, Space::RawMm);
  CHECK_THROWS_AS(crps_field_mean(ens, obs), ValidationError);

  EnsembleForecast raw;
  raw.members.emplace_back(4, 4, Space::RawMm);
  GridField nobs(4, 4, Space::Normalized);
  CHECK_THROWS_AS(crps_field_mean(raw, nobs), ValidationError);
}
