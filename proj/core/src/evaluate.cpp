#include "raincast/evaluate.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <utility>

#include "json.hpp"
#include "raincast/error.hpp"

namespace raincast {

namespace {

using nlohmann::json;

// Compact threshold key: "1", "5", "0.5".
std::string threshold_key(double thr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", thr);
  return buf;
}

std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

json threshold_map(const std::vector<double>& thresholds, const std::vector<double>& vals) {
  json out = json::object();
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    out[threshold_key(thresholds[t])] = vals[t];
  }
  return out;
}

json threshold_map(const std::vector<double>& thresholds,
                   const std::vector<std::int64_t>& vals) {
  json out = json::object();
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    out[threshold_key(thresholds[t])] = vals[t];
  }
  return out;
}

EvalOptions validated(EvalOptions opts) {
  opts.validate();
  return opts;
}

std::string filename_tag(const std::string& model) {
  std::string out;
  out.reserve(model.size());
  for (char c : model) {
    const unsigned char u = static_cast<unsigned char>(c);
    out.push_back(std::isalnum(u) || c == '-' || c == '_' ? c : '_');
  }
  return out;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file);
  if (!out) throw FormatError("report: cannot write " + file.string());
  out << text;
  if (!out.flush()) throw FormatError("report: write failed for " + file.string());
}

}  // namespace

void EvalOptions::validate() const {
  if (thresholds_mm.empty()) {
    throw ValidationError("evaluate: threshold list is empty");
  }
  double prev = 0.0;
  for (double t : thresholds_mm) {
    if (!(t > prev)) {
      throw ValidationError("evaluate: thresholds must be positive and ascending");
    }
    prev = t;
  }
  if (!(fss_threshold_mm > 0.0) || fss_window < 1) {
    throw ValidationError("evaluate: FSS settings must be positive");
  }
}

Evaluator::Evaluator(std::string model, EvalOptions opts)
    : model_(std::move(model)),
      opts_(validated(std::move(opts))),
      brier_(opts_.thresholds_mm.size()),
      reliability_(opts_.thresholds_mm),
      det_(opts_.thresholds_mm, opts_.fss_threshold_mm, opts_.fss_window) {}

void Evaluator::add(const EnsembleForecast& ens, const GridField& obs) {
  require_verification_pair(ens, obs, "evaluate");
  if (k_ == 0) {
    k_ = ens.k();
    ranks_.emplace(k_, opts_.rank_seed);
  } else if (ens.k() != k_) {
    throw ValidationError("evaluate: all ensembles must share one member count");
  }

  // One shared pixel pass feeds CRPS, Brier, reliability, and ranks.
  const std::size_t n = obs.values.size();
  std::vector<double> column(static_cast<std::size_t>(k_));
  for (std::size_t p = 0; p < n; ++p) {
    for (int m = 0; m < k_; ++m) {
      column[static_cast<std::size_t>(m)] = ens.members[static_cast<std::size_t>(m)].values[p];
    }
    const double obs_mm = obs.values[p];
    crps_.add(crps_pixel(column, obs_mm));
    for (std::size_t t = 0; t < opts_.thresholds_mm.size(); ++t) {
      const double thr = opts_.thresholds_mm[t];
      brier_[t].add(brier(event_probability(column, thr), obs_mm > thr));
    }
    reliability_.add_pixel(column, obs_mm);
    ranks_->add(column, obs_mm);
  }
  det_.add_patch(ens, obs);

  patches_ += 1;
  pixels_ += static_cast<std::int64_t>(n);
}

ModelScores Evaluator::finalize() const {
  if (patches_ == 0) throw ValidationError("evaluate: no cases for model " + model_);
  ModelScores out;
  out.model = model_;
  out.k = k_;
  out.patches = patches_;
  out.pixels = pixels_;
  const double n = static_cast<double>(pixels_);
  out.crps = crps_.value() / n;
  out.brier.reserve(brier_.size());
  for (const KahanSum& b : brier_) out.brier.push_back(b.value() / n);
  out.det = det_.finalize();
  out.reliability = reliability_.rows();
  out.diagonal_gap.reserve(opts_.thresholds_mm.size());
  for (double thr : opts_.thresholds_mm) {
    out.diagonal_gap.push_back(reliability_.mean_diagonal_gap(thr));
  }
  out.rank_counts = ranks_->counts();
  out.rank_chi2 = ranks_->chi2();
  return out;
}

const ModelScores* MetricReport::find(const std::string& model) const {
  for (const ModelScores& m : models) {
    if (m.model == model) return &m;
  }
  return nullptr;
}

std::string MetricReport::to_json() const {
  json scores = json::object();
  for (const ModelScores& m : models) {
    const auto& thr = options.thresholds_mm;
    scores[m.model] = {
        {"k", m.k},
        {"patches", m.patches},
        {"pixels", m.pixels},
        {"crps", m.crps},
        {"brier", threshold_map(thr, m.brier)},
        {"rmse", m.det.rmse},
        {"fss", m.det.fss},
        {"precision", threshold_map(thr, m.det.precision)},
        {"recall", threshold_map(thr, m.det.recall)},
        {"precision_undefined", threshold_map(thr, m.det.precision_undefined)},
        {"recall_undefined", threshold_map(thr, m.det.recall_undefined)},
        {"reliability_diagonal_gap", threshold_map(thr, m.diagonal_gap)},
        {"rank_counts", m.rank_counts},
        {"rank_chi2", m.rank_chi2},
    };
  }
  const json doc = {
      {"schema_version", 1},
      {"kind", "raincast_metric_report"},
      {"options",
       {{"thresholds_mm", options.thresholds_mm},
        {"fss_threshold_mm", options.fss_threshold_mm},
        {"fss_window", options.fss_window},
        {"rank_seed", options.rank_seed}}},
      {"models", scores},
  };
  return doc.dump(2) + "\n";
}

std::string MetricReport::reliability_csv(const ModelScores& m) {
  std::string out = "threshold,bin_lo,bin_hi,mean_prob,obs_freq,count\n";
  for (const ReliabilityRow& r : m.reliability) {
    out += csv_num(r.threshold_mm) + "," + csv_num(r.bin_lo) + "," + csv_num(r.bin_hi) +
           "," + csv_num(r.mean_prob) + "," + csv_num(r.obs_freq) + "," +
           std::to_string(r.count) + "\n";
  }
  return out;
}

std::string MetricReport::rank_csv(const ModelScores& m) {
  std::string out = "rank,count\n";
  for (std::size_t r = 0; r < m.rank_counts.size(); ++r) {
    out += std::to_string(r) + "," + std::to_string(m.rank_counts[r]) + "\n";
  }
  return out;
}

void MetricReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", to_json());
  for (const ModelScores& m : models) {
    const std::string tag = filename_tag(m.model);
    write_text(dir / ("reliability_" + tag + ".csv"), reliability_csv(m));
    write_text(dir / ("rank_" + tag + ".csv"), rank_csv(m));
  }
}

ModelScores evaluate_model(const std::string& model, const std::vector<EvalCase>& cases,
                           const EvalOptions& opts) {
  Evaluator ev(model, opts);
  for (const EvalCase& c : cases) ev.add(c.ens, c.obs);
  return ev.finalize();
}

MetricReport evaluate(const std::vector<ModelRun>& runs, const EvalOptions& opts) {
  if (runs.empty()) throw ValidationError("evaluate: no models");
  MetricReport rep;
  rep.options = opts;
  rep.models.reserve(runs.size());
  for (const ModelRun& run : runs) {
    rep.models.push_back(evaluate_model(run.model, run.cases, opts));
  }
  return rep;
}

EnsembleForecast interpolation_baseline(const InputPatch& x, const NormalizationSpec& norm) {
  x.validate();
  EnsembleForecast out;
  out.members.reserve(kEnsembleMembers);
  for (int m = 0; m < kEnsembleMembers; ++m) {
    const GridField raw =
        denormalize(x.channels[static_cast<std::size_t>(kChPrecipBegin + m)], norm);
    GridField fine = regrid_bilinear(raw, kTargetSize, kTargetSize);
    fine.resolution_km = raw.resolution_km / kUpscaleFactor;
    out.members.push_back(std::move(fine));
  }
  return out;
}

}  // namespace raincast
