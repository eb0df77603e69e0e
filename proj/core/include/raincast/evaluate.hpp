#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "raincast/metrics.hpp"
#include "raincast/patch.hpp"
#include "raincast/transform.hpp"

namespace raincast {

// Evaluation settings shared by every model in one report.
struct EvalOptions {
  std::vector<double> thresholds_mm{1.0, 5.0, 10.0, 30.0};
  double fss_threshold_mm = 4.0;
  int fss_window = 16;
  std::uint64_t rank_seed = 0;

  // Throws ValidationError unless thresholds are positive and strictly
  // ascending and the FSS settings are positive.
  void validate() const;
};

// One forecast case: an ensemble against its verifying observation.
struct EvalCase {
  EnsembleForecast ens;
  GridField obs;
};

// Aggregated verification scores for one named model.
struct ModelScores {
  std::string model;
  int k = 0;
  std::int64_t patches = 0;
  std::int64_t pixels = 0;
  double crps = 0.0;
  std::vector<double> brier;  // one per threshold
  DeterministicScores det;
  std::vector<ReliabilityRow> reliability;
  std::vector<double> diagonal_gap;  // reliability distance per threshold
  std::vector<std::int64_t> rank_counts;
  double rank_chi2 = 0.0;
};

// Streaming scorer: feed ensemble/observation pairs one at a time so the
// caller never has to hold a whole evaluation set in memory. All metrics
// reduce through compensated sums, so any partitioning of the stream
// reproduces the same scores.
class Evaluator {
 public:
  explicit Evaluator(std::string model, EvalOptions opts = {});

  // Throws ValidationError on normalized-space input, mismatched layouts,
  // or a member count that differs from earlier cases.
  void add(const EnsembleForecast& ens, const GridField& obs);

  // Throws ValidationError when no cases were added.
  ModelScores finalize() const;

 private:
  std::string model_;
  EvalOptions opts_;
  int k_ = 0;
  std::int64_t patches_ = 0;
  std::int64_t pixels_ = 0;
  KahanSum crps_;
  std::vector<KahanSum> brier_;
  ReliabilityTable reliability_;
  std::optional<RankHistogram> ranks_;
  DeterministicAccumulator det_;
};

struct ModelRun {
  std::string model;
  std::vector<EvalCase> cases;
};

// Full verification report over one or more models, with file emissions for
// downstream plotting.
struct MetricReport {
  EvalOptions options;
  std::vector<ModelScores> models;

  const ModelScores* find(const std::string& model) const;
  std::string to_json() const;

  // Plot-data emissions.
  static std::string reliability_csv(const ModelScores& m);
  static std::string rank_csv(const ModelScores& m);

  // Writes report.json plus reliability_<model>.csv and rank_<model>.csv
  // per model under dir (created if absent).
  void write(const std::filesystem::path& dir) const;
};

// Scores one model's cases in a single pass.
ModelScores evaluate_model(const std::string& model, const std::vector<EvalCase>& cases,
                           const EvalOptions& opts = {});

// Scores several models under one option set.
MetricReport evaluate(const std::vector<ModelRun>& runs, const EvalOptions& opts = {});

// The no-learning reference forecast: each coarse precipitation member,
// denormalized to raw millimetres and bilinearly regridded to the target
// resolution.
EnsembleForecast interpolation_baseline(const InputPatch& x, const NormalizationSpec& norm);

}  // namespace raincast
