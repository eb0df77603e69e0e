#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "raincast/grid.hpp"

namespace raincast {

// Compensated (Kahan) summation; keeps long streaming reductions
// reproducible to ~1e-9 regardless of how the stream is partitioned.
struct KahanSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double x) {
    const double y = x - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
  double value() const { return sum; }
};

// k exchangeable members over one grid, raw millimetres.
struct EnsembleForecast {
  std::vector<GridField> members;

  int k() const { return static_cast<int>(members.size()); }
  int height() const { return members.empty() ? 0 : members.front().height; }
  int width() const { return members.empty() ? 0 : members.front().width; }
  // Throws ValidationError unless all members share one raw-mm layout.
  void validate() const;
};

// Continuous ranked probability score of an ensemble at one point, using the
// standard (uncorrected) estimator
//   (1/k) sum_i |x_i - y|  -  (1/(2 k^2)) sum_ij |x_i - x_j|
// which equals the integral of (F(t) - 1{t >= y})^2 dt for the empirical F.
double crps_pixel(std::span<const double> members, double obs);

// Mean CRPS over all pixels of a patch (compensated accumulation).
double crps_field_mean(const EnsembleForecast& ens, const GridField& obs);

// Quadratic probability score for one binary event.
double brier(double prob, bool outcome);

// Fraction of members strictly above threshold.
double event_probability(std::span<const double> members, double threshold_mm);

// --- Reliability -----------------------------------------------------------

struct ReliabilityRow {
  double threshold_mm = 0.0;
  double bin_lo = 0.0;
  double bin_hi = 0.0;
  double mean_prob = 0.0;  // 0 when the bin is empty
  double obs_freq = 0.0;   // 0 when the bin is empty
  std::int64_t count = 0;
};

// Forecast-probability reliability per event threshold, with probability
// bins [0,0.2), [0.2,0.4), [0.4,0.6), [0.6,0.8), [0.8,1.0] (the final bin is
// right-closed so that certainty lands in it).
class ReliabilityTable {
 public:
  static constexpr int kBins = 5;
  explicit ReliabilityTable(std::vector<double> thresholds_mm = {1.0, 5.0, 10.0, 30.0});

  void add_pixel(std::span<const double> members, double obs_mm);
  std::vector<ReliabilityRow> rows() const;
  // Mean |obs_freq - mean_prob| over populated bins at one threshold; the
  // distance of the reliability curve from the diagonal.
  double mean_diagonal_gap(double threshold_mm) const;
  const std::vector<double>& thresholds() const { return thresholds_mm_; }

  static int bin_of(double prob);

 private:
  std::vector<double> thresholds_mm_;
  std::vector<KahanSum> prob_sum_;      // thresholds x bins
  std::vector<std::int64_t> hits_;      // thresholds x bins
  std::vector<std::int64_t> count_;     // thresholds x bins
};

// --- Rank histogram ---------------------------------------------------------

// Position of the observation within the ordered ensemble, with uniform
// random tie-breaking (required for exactness on discrete-valued fields such
// as dry pixels).  Produces k+1 rank counts.
class RankHistogram {
 public:
  RankHistogram(int k, std::uint64_t seed);

  void add(std::span<const double> members, double obs);
  void add_patch(const EnsembleForecast& ens, const GridField& obs);

  const std::vector<std::int64_t>& counts() const { return counts_; }
  std::int64_t total() const { return total_; }
  // Pearson chi-squared statistic against the uniform distribution over the
  // k+1 ranks (df = k).
  double chi2() const;

 private:
  int k_;
  std::mt19937_64 rng_;
  std::vector<std::int64_t> counts_;
  std::int64_t total_ = 0;
};

// --- Fractions skill score ---------------------------------------------------

// Hard-threshold FSS over non-overlapping window x window tiles:
//   1 - sum (O_i - M_i)^2 / (sum O_i^2 + sum M_i^2)
// where O_i and M_i are per-tile exceedance fractions.  Window must divide
// both dims.  When both fields are entirely below threshold the score is 1.
double fss(const GridField& pred, const GridField& obs, double threshold,
           int window);

// --- Deterministic per-member scores -----------------------------------------

struct DeterministicScores {
  double rmse = 0.0;
  double fss = 0.0;                    // at fss_threshold_mm / fss_window
  std::vector<double> thresholds_mm;
  std::vector<double> precision;       // mean over defined member-patch pairs
  std::vector<double> recall;
  std::vector<std::int64_t> precision_undefined;  // excluded pair counts
  std::vector<std::int64_t> recall_undefined;
  double fss_threshold_mm = 4.0;
  int fss_window = 16;
};

// Streams member-vs-observation scores over many patches: every metric is
// computed per member, then averaged over members and patches.  Pairs whose
// precision or recall is undefined (no predicted or no observed positives)
// are excluded and counted.
class DeterministicAccumulator {
 public:
  explicit DeterministicAccumulator(std::vector<double> thresholds_mm = {1.0, 5.0, 10.0, 30.0},
                                    double fss_threshold_mm = 4.0, int fss_window = 16);

  void add_patch(const EnsembleForecast& ens, const GridField& obs);
  DeterministicScores finalize() const;

 private:
  std::vector<double> thresholds_mm_;
  double fss_threshold_mm_;
  int fss_window_;
  KahanSum rmse_sum_;
  std::int64_t rmse_n_ = 0;
  KahanSum fss_sum_;
  std::int64_t fss_n_ = 0;
  std::vector<KahanSum> prec_sum_, rec_sum_;
  std::vector<std::int64_t> prec_n_, rec_n_, prec_undef_, rec_undef_;
};

// Validates that an ensemble/observation pair shares a raw-mm layout.
void require_verification_pair(const EnsembleForecast& ens, const GridField& obs,
                               const char* who);

}  // namespace raincast
