#include "raincast/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "raincast/error.hpp"
#include "raincast/rng.hpp"

namespace raincast {

void EnsembleForecast::validate() const {
  if (members.empty()) throw ValidationError("ensemble: no members");
  const GridField& first = members.front();
  for (const GridField& m : members) {
    if (m.space != Space::RawMm) {
      throw ValidationError("ensemble: members must be in raw millimetres");
    }
    if (m.height != first.height || m.width != first.width ||
        m.values.size() != static_cast<std::size_t>(m.height) * m.width) {
      throw ValidationError("ensemble: inconsistent member layouts");
    }
  }
}

void require_verification_pair(const EnsembleForecast& ens, const GridField& obs,
                               const char* who) {
  ens.validate();
  if (obs.space != Space::RawMm) {
    throw ValidationError(std::string(who) + ": observations must be in raw millimetres");
  }
  if (obs.height != ens.height() || obs.width != ens.width()) {
    throw ValidationError(std::string(who) + ": ensemble and observation dims differ");
  }
}

double crps_pixel(std::span<const double> members, double obs) {
  const int k = static_cast<int>(members.size());
  if (k == 0) throw ValidationError("crps: empty ensemble");
  double dist = 0.0;
  for (double x : members) dist += std::abs(x - obs);
  double spread = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      spread += std::abs(members[i] - members[j]);
    }
  }
  // The double sum over all ordered pairs is twice the upper triangle.
  return dist / k - spread / (static_cast<double>(k) * k);
}

double crps_field_mean(const EnsembleForecast& ens, const GridField& obs) {
  require_verification_pair(ens, obs, "crps");
  const int k = ens.k();
  const std::size_t n = obs.values.size();
  std::vector<double> column(static_cast<std::size_t>(k));
  KahanSum total;
  for (std::size_t p = 0; p < n; ++p) {
    for (int m = 0; m < k; ++m) column[static_cast<std::size_t>(m)] = ens.members[m].values[p];
    total.add(crps_pixel(column, obs.values[p]));
  }
  return total.value() / static_cast<double>(n);
}

double brier(double prob, bool outcome) {
  const double o = outcome ? 1.0 : 0.0;
  return (prob - o) * (prob - o);
}

double event_probability(std::span<const double> members, double threshold_mm) {
  if (members.empty()) throw ValidationError("event_probability: empty ensemble");
  std::size_t above = 0;
  for (double x : members) above += (x > threshold_mm);
  return static_cast<double>(above) / static_cast<double>(members.size());
}

// --- Reliability -------------------------------------------------------------

ReliabilityTable::ReliabilityTable(std::vector<double> thresholds_mm)
    : thresholds_mm_(std::move(thresholds_mm)),
      prob_sum_(thresholds_mm_.size() * kBins),
      hits_(thresholds_mm_.size() * kBins, 0),
      count_(thresholds_mm_.size() * kBins, 0) {
  if (thresholds_mm_.empty()) throw ValidationError("reliability: no thresholds");
}

int ReliabilityTable::bin_of(double prob) {
  const int b = static_cast<int>(prob / 0.2);
  return std::clamp(b, 0, kBins - 1);  // prob == 1 falls into the final bin
}

void ReliabilityTable::add_pixel(std::span<const double> members, double obs_mm) {
  for (std::size_t t = 0; t < thresholds_mm_.size(); ++t) {
    const double p = event_probability(members, thresholds_mm_[t]);
    const std::size_t cell = t * kBins + static_cast<std::size_t>(bin_of(p));
    prob_sum_[cell].add(p);
    hits_[cell] += (obs_mm > thresholds_mm_[t]);
    count_[cell] += 1;
  }
}

std::vector<ReliabilityRow> ReliabilityTable::rows() const {
  std::vector<ReliabilityRow> out;
  out.reserve(thresholds_mm_.size() * kBins);
  for (std::size_t t = 0; t < thresholds_mm_.size(); ++t) {
    for (int b = 0; b < kBins; ++b) {
      const std::size_t cell = t * kBins + static_cast<std::size_t>(b);
      ReliabilityRow row;
      row.threshold_mm = thresholds_mm_[t];
      row.bin_lo = b * 0.2;
      row.bin_hi = b == kBins - 1 ? 1.0 : (b + 1) * 0.2;
      row.count = count_[cell];
      if (row.count > 0) {
        row.mean_prob = prob_sum_[cell].value() / static_cast<double>(row.count);
        row.obs_freq = static_cast<double>(hits_[cell]) / static_cast<double>(row.count);
      }
      out.push_back(row);
    }
  }
  return out;
}

double ReliabilityTable::mean_diagonal_gap(double threshold_mm) const {
  for (std::size_t t = 0; t < thresholds_mm_.size(); ++t) {
    if (thresholds_mm_[t] != threshold_mm) continue;
    double gap = 0.0;
    int populated = 0;
    for (int b = 0; b < kBins; ++b) {
      const std::size_t cell = t * kBins + static_cast<std::size_t>(b);
      if (count_[cell] == 0) continue;
      const double mean_prob = prob_sum_[cell].value() / static_cast<double>(count_[cell]);
      const double obs_freq =
          static_cast<double>(hits_[cell]) / static_cast<double>(count_[cell]);
      gap += std::abs(obs_freq - mean_prob);
      ++populated;
    }
    return populated > 0 ? gap / populated : 0.0;
  }
  throw ValidationError("reliability: unknown threshold requested");
}

// --- Rank histogram -----------------------------------------------------------

RankHistogram::RankHistogram(int k, std::uint64_t seed)
    : k_(k), rng_(make_rng(seed)), counts_(static_cast<std::size_t>(k) + 1, 0) {
  if (k <= 0) throw ValidationError("rank_histogram: need at least one member");
}

void RankHistogram::add(std::span<const double> members, double obs) {
  if (static_cast<int>(members.size()) != k_) {
    throw ValidationError("rank_histogram: member count changed mid-stream");
  }
  int below = 0;
  int ties = 0;
  for (double x : members) {
    below += (x < obs);
    ties += (x == obs);
  }
  int rank = below;
  if (ties > 0) {
    rank += static_cast<int>(uniform_index(rng_, static_cast<std::uint64_t>(ties) + 1));
  }
  counts_[static_cast<std::size_t>(rank)] += 1;
  total_ += 1;
}

void RankHistogram::add_patch(const EnsembleForecast& ens, const GridField& obs) {
  require_verification_pair(ens, obs, "rank_histogram");
  if (ens.k() != k_) {
    throw ValidationError("rank_histogram: member count changed mid-stream");
  }
  std::vector<double> column(static_cast<std::size_t>(k_));
  for (std::size_t p = 0; p < obs.values.size(); ++p) {
    for (int m = 0; m < k_; ++m) column[static_cast<std::size_t>(m)] = ens.members[m].values[p];
    add(column, obs.values[p]);
  }
}

double RankHistogram::chi2() const {
  if (total_ == 0) throw ValidationError("rank_histogram: empty histogram");
  const double expected = static_cast<double>(total_) / static_cast<double>(k_ + 1);
  double stat = 0.0;
  for (std::int64_t c : counts_) {
    const double d = static_cast<double>(c) - expected;
    stat += d * d / expected;
  }
  return stat;
}

// --- FSS ----------------------------------------------------------------------

double fss(const GridField& pred, const GridField& obs, double threshold, int window) {
  if (pred.height != obs.height || pred.width != obs.width) {
    throw ValidationError("fss: field dims differ");
  }
  if (window <= 0 || pred.height % window != 0 || pred.width % window != 0) {
    throw ValidationError("fss: window must divide both dims");
  }
  const int wy = pred.height / window;
  const int wx = pred.width / window;
  const double per_tile = static_cast<double>(window) * window;
  double num = 0.0;
  double den = 0.0;
  for (int ty = 0; ty < wy; ++ty) {
    for (int tx = 0; tx < wx; ++tx) {
      int pred_above = 0;
      int obs_above = 0;
      for (int dy = 0; dy < window; ++dy) {
        const int y = ty * window + dy;
        for (int dx = 0; dx < window; ++dx) {
          const int x = tx * window + dx;
          pred_above += (pred.at(y, x) > threshold);
          obs_above += (obs.at(y, x) > threshold);
        }
      }
      const double m = pred_above / per_tile;
      const double o = obs_above / per_tile;
      num += (o - m) * (o - m);
      den += o * o + m * m;
    }
  }
  return den == 0.0 ? 1.0 : 1.0 - num / den;
}

// --- Deterministic suite --------------------------------------------------------

DeterministicAccumulator::DeterministicAccumulator(std::vector<double> thresholds_mm,
                                                   double fss_threshold_mm, int fss_window)
    : thresholds_mm_(std::move(thresholds_mm)),
      fss_threshold_mm_(fss_threshold_mm),
      fss_window_(fss_window),
      prec_sum_(thresholds_mm_.size()),
      rec_sum_(thresholds_mm_.size()),
      prec_n_(thresholds_mm_.size(), 0),
      rec_n_(thresholds_mm_.size(), 0),
      prec_undef_(thresholds_mm_.size(), 0),
      rec_undef_(thresholds_mm_.size(), 0) {
  if (thresholds_mm_.empty()) throw ValidationError("deterministic_suite: no thresholds");
}

void DeterministicAccumulator::add_patch(const EnsembleForecast& ens, const GridField& obs) {
  require_verification_pair(ens, obs, "deterministic_suite");
  const std::size_t n = obs.values.size();
  for (const GridField& member : ens.members) {
    KahanSum sq;
    for (std::size_t p = 0; p < n; ++p) {
      const double d = static_cast<double>(member.values[p]) - obs.values[p];
      sq.add(d * d);
    }
    rmse_sum_.add(std::sqrt(sq.value() / static_cast<double>(n)));
    rmse_n_ += 1;

    fss_sum_.add(fss(member, obs, fss_threshold_mm_, fss_window_));
    fss_n_ += 1;

    for (std::size_t t = 0; t < thresholds_mm_.size(); ++t) {
      const double thr = thresholds_mm_[t];
      std::int64_t tp = 0, fp = 0, fn = 0;
      for (std::size_t p = 0; p < n; ++p) {
        const bool po = member.values[p] > thr;
        const bool oo = obs.values[p] > thr;
        tp += (po && oo);
        fp += (po && !oo);
        fn += (!po && oo);
      }
      if (tp + fp > 0) {
        prec_sum_[t].add(static_cast<double>(tp) / static_cast<double>(tp + fp));
        prec_n_[t] += 1;
      } else {
        prec_undef_[t] += 1;
      }
      if (tp + fn > 0) {
        rec_sum_[t].add(static_cast<double>(tp) / static_cast<double>(tp + fn));
        rec_n_[t] += 1;
      } else {
        rec_undef_[t] += 1;
      }
    }
  }
}

DeterministicScores DeterministicAccumulator::finalize() const {
  DeterministicScores out;
  out.thresholds_mm = thresholds_mm_;
  out.fss_threshold_mm = fss_threshold_mm_;
  out.fss_window = fss_window_;
  out.rmse = rmse_n_ > 0 ? rmse_sum_.value() / static_cast<double>(rmse_n_) : 0.0;
  out.fss = fss_n_ > 0 ? fss_sum_.value() / static_cast<double>(fss_n_) : 0.0;
  out.precision.resize(thresholds_mm_.size(), 0.0);
  out.recall.resize(thresholds_mm_.size(), 0.0);
  out.precision_undefined = prec_undef_;
  out.recall_undefined = rec_undef_;
  for (std::size_t t = 0; t < thresholds_mm_.size(); ++t) {
    if (prec_n_[t] > 0) out.precision[t] = prec_sum_[t].value() / static_cast<double>(prec_n_[t]);
    if (rec_n_[t] > 0) out.recall[t] = rec_sum_[t].value() / static_cast<double>(rec_n_[t]);
  }
  return out;
}

}  // namespace raincast
