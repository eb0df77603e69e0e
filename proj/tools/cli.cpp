#include "cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <utility>

#include "CLI11.hpp"
#include "raincast/checkpoint.hpp"
#include "raincast/dataset.hpp"
#include "raincast/error.hpp"
#include "raincast/evaluate.hpp"
#include "raincast/gridfile.hpp"
#include "raincast/rng.hpp"
#include "raincast/synth.hpp"
#include "raincast/trainer.hpp"
#include "raincast/transform.hpp"

namespace raincast::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kGenSeedTag = 0x47454e53;  // ensemble-generation stream

// Everything a command touches lives under one output directory.
struct Paths {
  fs::path out;
  fs::path dataset;
  fs::path checkpoints;
  fs::path ensembles;
  fs::path reports;

  explicit Paths(const std::string& out_dir)
      : out(out_dir),
        dataset(out / "dataset"),
        checkpoints(out / "checkpoints"),
        ensembles(out / "ensembles"),
        reports(out / "reports") {}
};

// Exclusive advisory lock on the output directory: writing commands must not
// interleave. Stale locks (from a killed run) are reported, not stolen.
class OutLock {
 public:
  explicit OutLock(const fs::path& out) : file_(out / ".lock") {
    fs::create_directories(out);
    const int fd = ::open(file_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST) {
        throw std::runtime_error("output directory is locked: " + file_.string() +
                                 " exists (remove it if no other command is running)");
      }
      throw std::runtime_error("cannot create lock file " + file_.string());
    }
    ::close(fd);
  }
  ~OutLock() {
    std::error_code ec;
    fs::remove(file_, ec);
  }
  OutLock(const OutLock&) = delete;
  OutLock& operator=(const OutLock&) = delete;

 private:
  fs::path file_;
};

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write " + file.string());
  out << text;
  if (!out.flush()) throw FormatError("write failed for " + file.string());
}

// --- Config plumbing ---------------------------------------------------------

void merge_checked(json& base, const json& patch, const std::string& prefix) {
  for (const auto& [key, val] : patch.items()) {
    if (!base.contains(key)) {
      throw ValidationError("config: unknown key " + prefix + key);
    }
    json& slot = base[key];
    if (slot.is_object() && val.is_object()) {
      merge_checked(slot, val, prefix + key + ".");
    } else if (slot.is_object() || val.is_object()) {
      throw ValidationError("config: " + prefix + key + " must " +
                            (slot.is_object() ? "be a section" : "not be a section"));
    } else {
      slot = val;
    }
  }
}

int type_category(const json& j) {
  if (j.is_number()) return 0;
  if (j.is_boolean()) return 1;
  if (j.is_string()) return 2;
  if (j.is_array()) return 3;
  return 4;
}

void apply_override(json& cfg, const std::string& spec) {
  const std::size_t eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("--set expects dotted.path=value, got: " + spec);
  }
  const std::string path = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);

  json* cur = &cfg;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string part = path.substr(start, dot - start);
    if (!cur->is_object() || !cur->contains(part)) {
      throw ValidationError("--set: unknown config key " + path);
    }
    cur = &(*cur)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (cur->is_object()) {
    throw ValidationError("--set: " + path + " is a section, not a value");
  }

  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // bare strings need no quotes
  }
  if (type_category(parsed) != type_category(*cur)) {
    throw ValidationError("--set: value for " + path + " has the wrong type");
  }
  *cur = parsed;
}

// --- Config -> core structs --------------------------------------------------

SynthConfig synth_config_from(const json& j) {
  SynthConfig c;
  c.n_members = j.at("n_members").get<int>();
  c.cells_min = j.at("cells_min").get<int>();
  c.cells_max = j.at("cells_max").get<int>();
  c.amp_min_mm = j.at("amp_min_mm").get<double>();
  c.amp_max_mm = j.at("amp_max_mm").get<double>();
  c.sigma_min = j.at("sigma_min").get<double>();
  c.sigma_max = j.at("sigma_max").get<double>();
  c.anisotropy_min = j.at("anisotropy_min").get<double>();
  c.truth_noise_amp = j.at("truth_noise_amp").get<double>();
  c.truth_noise_grid = j.at("truth_noise_grid").get<int>();
  c.texture_amp = j.at("texture_amp").get<double>();
  c.texture_grid = j.at("texture_grid").get<int>();
  c.bias_enabled = j.at("bias_enabled").get<bool>();
  c.bias_shift_y = j.at("bias_shift_y").get<int>();
  c.bias_shift_x = j.at("bias_shift_x").get<int>();
  c.bias_damp = j.at("bias_damp").get<double>();
  c.member_noise_amp = j.at("member_noise_amp").get<double>();
  c.member_noise_grid = j.at("member_noise_grid").get<int>();
  c.tcw_noise_amp = j.at("tcw_noise_amp").get<double>();
  c.cov_noise_grid = j.at("cov_noise_grid").get<int>();
  c.norm.y_max_mm = j.at("y_max_mm").get<double>();
  const json& sw = j.at("sampler");
  c.sampler.w_min = sw.at("w_min").get<double>();
  c.sampler.w_max = sw.at("w_max").get<double>();
  c.sampler.a = sw.at("a").get<int>();
  c.sampler.rain_threshold_mm = sw.at("rain_threshold_mm").get<double>();
  return c;
}

TrainConfig train_config_from(const json& cfg) {
  const json& m = cfg.at("model");
  const json& t = cfg.at("training");
  TrainConfig tc;
  tc.mode = parse_train_mode(m.at("mode").get<std::string>());
  tc.arch.width_divisor = m.at("width_divisor").get<int>();
  tc.arch.leaky_slope = m.at("leaky_slope").get<double>();
  tc.arch.input_channels = plan_mode(tc.mode).input_channels;
  tc.stage1 = {t.at("stage1").at("epochs").get<int>(), t.at("stage1").at("batch").get<int>()};
  tc.stage2 = {t.at("stage2").at("epochs").get<int>(), t.at("stage2").at("batch").get<int>()};
  tc.stage3 = {t.at("stage3").at("epochs").get<int>(), t.at("stage3").at("batch").get<int>()};
  tc.lr = t.at("lr").get<double>();
  tc.beta1 = t.at("beta1").get<double>();
  tc.beta2 = t.at("beta2").get<double>();
  tc.adam_eps = t.at("adam_eps").get<double>();
  tc.critic_steps_per_gen = t.at("critic_steps_per_gen").get<int>();
  tc.seed = t.at("seed").get<std::uint64_t>();
  tc.val_k = t.at("val_k").get<int>();
  tc.val_patch_cap = t.at("val_patch_cap").get<int>();
  const json& w = t.at("weights");
  tc.weights.gamma0 = w.at("gamma0").get<double>();
  tc.weights.gamma1 = w.at("gamma1").get<double>();
  tc.weights.gamma2 = w.at("gamma2").get<double>();
  tc.weights.lambda_gp = w.at("lambda_gp").get<double>();
  tc.weights.fss_threshold = w.at("fss_threshold").get<double>();
  tc.weights.fss_sharpness = w.at("fss_sharpness").get<double>();
  tc.weights.fss_window = w.at("fss_window").get<int>();
  tc.weights.ensemble_k_loss = w.at("ensemble_k_loss").get<int>();
  tc.validate();
  return tc;
}

EvalOptions eval_options_from(const json& cfg) {
  const json& e = cfg.at("evaluation");
  EvalOptions opts;
  opts.thresholds_mm = e.at("thresholds_mm").get<std::vector<double>>();
  opts.fss_threshold_mm = e.at("fss_threshold_mm").get<double>();
  opts.fss_window = e.at("fss_window").get<int>();
  opts.rank_seed = e.at("rank_seed").get<std::uint64_t>();
  opts.validate();
  return opts;
}

fs::path dataset_dir(const json& cfg, const Paths& p) {
  const std::string path = cfg.at("dataset").at("path").get<std::string>();
  return path.empty() ? p.dataset : fs::path(path);
}

Dataset load_dataset_checked(const json& cfg, const Paths& p) {
  const fs::path dir = dataset_dir(cfg, p);
  if (!fs::exists(dir / "manifest.json")) {
    throw ValidationError("dataset not found at " + dir.string() +
                          " (run synth-data or set dataset.path)");
  }
  return load_dataset(dir);
}

std::string patch_filename(std::size_t row) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "patch_%05zu.rgf", row);
  return buf;
}

// --- Commands ----------------------------------------------------------------

void cmd_synth_data(const json& cfg, const Paths& p) {
  const json& d = cfg.at("dataset");
  const int n = d.at("n").get<int>();
  if (n < 1) throw ValidationError("synth-data: dataset.n must be at least 1");
  const auto seed = d.at("seed").get<std::uint64_t>();
  const SynthConfig sc = synth_config_from(d.at("synth"));
  sc.validate();

  Dataset ds;
  ds.pairs = synth_dataset(n, seed, sc);
  ds.splits = positional_splits(ds.pairs.size());
  ds.norm = sc.norm;
  ds.sampler = sc.sampler;
  ds.seed = seed;

  fs::remove_all(p.dataset);
  save_dataset(p.dataset, ds);
  std::cout << "dataset: " << n << " patches -> " << p.dataset.string() << "\n";
}

void cmd_train(const json& cfg, const Paths& p) {
  const Dataset ds = load_dataset_checked(cfg, p);
  const TrainConfig tc = train_config_from(cfg);
  const TrainReport rep = train(ds, tc, p.checkpoints);

  fs::create_directories(p.reports);
  write_text(p.reports / "train_report.json", rep.to_json());
  std::cout << "train: mode " << to_string(rep.mode) << ", " << rep.stages.size()
            << " stage(s), selected epoch " << rep.selected_epoch << " (val CRPS "
            << rep.selected_val_crps << ") -> " << p.checkpoints.string() << "\n";
}

void cmd_generate(const json& cfg, const Paths& p, const std::string& checkpoint_arg,
                  const std::string& name_arg) {
  const Dataset ds = load_dataset_checked(cfg, p);
  const TrainMode mode = parse_train_mode(cfg.at("model").at("mode").get<std::string>());
  const ModePlan plan = plan_mode(mode);

  const std::string ck_rel = checkpoint_arg.empty() ? "checkpoints/selected" : checkpoint_arg;
  fs::path ck_dir(ck_rel);
  if (ck_dir.is_relative()) ck_dir = p.out / ck_dir;
  if (!fs::exists(ck_dir / "checkpoint.json")) {
    throw ValidationError("generate: no checkpoint at " + ck_dir.string());
  }
  const Checkpoint ck = load_checkpoint(ck_dir.string());
  if (!ck.gen.has_value()) {
    throw ValidationError("generate: checkpoint has no generator");
  }
  if (ck.arch.input_channels != plan.input_channels) {
    throw ValidationError("generate: checkpoint expects " +
                          std::to_string(ck.arch.input_channels) +
                          " input channels but mode " + to_string(mode) + " feeds " +
                          std::to_string(plan.input_channels));
  }

  const json& e = cfg.at("evaluation");
  const int k = e.at("k").get<int>();
  if (k < 1) throw ValidationError("generate: evaluation.k must be at least 1");
  const auto seed = e.at("seed").get<std::uint64_t>();
  const std::string split = e.at("split").get<std::string>();
  std::vector<std::size_t> rows = ds.split_indices(split);
  const int cap = e.at("patch_cap").get<int>();
  if (cap > 0 && rows.size() > static_cast<std::size_t>(cap)) rows.resize(cap);
  if (rows.empty()) {
    throw ValidationError("generate: split '" + split + "' has no patches");
  }

  const std::string name = name_arg.empty() ? to_string(mode) : name_arg;
  const fs::path dir = p.ensembles / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (const std::size_t row : rows) {
    const EnsembleForecast ens =
        sample_ensemble(*ck.gen, ds.pairs[row].x, k,
                        seed_stream(seed, kGenSeedTag, row), plan, ds.norm);
    write_grid_file(dir / patch_filename(row), "precip_ensemble", "mm", ens.members);
  }

  // The manifest is written last: its presence marks a complete run.
  const json manifest = {
      {"schema_version", 1},
      {"kind", "raincast_ensemble_run"},
      {"model", name},
      {"mode", to_string(mode)},
      {"k", k},
      {"seed", seed},
      {"split", split},
      {"checkpoint", ck_rel},
      {"rows", rows},
  };
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "generate: " << rows.size() << " patches x " << k << " members -> "
            << dir.string() << "\n";
}

void cmd_evaluate(const json& cfg, const Paths& p) {
  const Dataset ds = load_dataset_checked(cfg, p);
  const EvalOptions opts = eval_options_from(cfg);
  const json& e = cfg.at("evaluation");
  const bool baseline = e.at("baseline").get<bool>();

  struct Run {
    std::string name;
    fs::path dir;
    json manifest;
  };
  std::vector<Run> model_runs;
  if (fs::exists(p.ensembles)) {
    for (const auto& entry : fs::directory_iterator(p.ensembles)) {
      if (!entry.is_directory()) continue;
      const fs::path mf = entry.path() / "manifest.json";
      if (!fs::exists(mf)) continue;
      std::ifstream in(mf);
      json manifest;
      try {
        in >> manifest;
      } catch (const json::exception& ex) {
        throw FormatError("evaluate: bad ensemble manifest " + mf.string() + ": " +
                          ex.what());
      }
      model_runs.push_back(
          {manifest.at("model").get<std::string>(), entry.path(), std::move(manifest)});
    }
  }
  std::sort(model_runs.begin(), model_runs.end(),
            [](const Run& a, const Run& b) { return a.name < b.name; });
  if (model_runs.empty() && !baseline) {
    throw ValidationError("evaluate: no ensemble runs under " + p.ensembles.string() +
                          " and the interpolation baseline is disabled");
  }

  // Every run must cover the same patches as the others.
  std::vector<std::size_t> rows;
  if (!model_runs.empty()) {
    rows = model_runs.front().manifest.at("rows").get<std::vector<std::size_t>>();
    for (const Run& r : model_runs) {
      if (r.manifest.at("rows").get<std::vector<std::size_t>>() != rows) {
        throw ValidationError("evaluate: ensemble runs cover different patch sets");
      }
    }
  } else {
    rows = ds.split_indices(e.at("split").get<std::string>());
    const int cap = e.at("patch_cap").get<int>();
    if (cap > 0 && rows.size() > static_cast<std::size_t>(cap)) rows.resize(cap);
  }
  if (rows.empty()) throw ValidationError("evaluate: no patches to score");
  for (const std::size_t row : rows) {
    if (row >= ds.pairs.size()) {
      throw ValidationError("evaluate: ensemble run references patch " +
                            std::to_string(row) + " beyond the dataset");
    }
  }

  MetricReport rep;
  rep.options = opts;
  for (const Run& r : model_runs) {
    const int k = r.manifest.at("k").get<int>();
    Evaluator ev(r.name, opts);
    for (const std::size_t row : rows) {
      auto [header, channels] = read_grid_file(r.dir / patch_filename(row));
      if (static_cast<int>(channels.size()) != k) {
        throw ValidationError("evaluate: " + r.name + " patch " + std::to_string(row) +
                              " holds " + std::to_string(channels.size()) +
                              " members, manifest says " + std::to_string(k));
      }
      EnsembleForecast ens;
      ens.members = std::move(channels);
      ev.add(ens, denormalize(ds.pairs[row].y, ds.norm));
    }
    rep.models.push_back(ev.finalize());
  }
  if (baseline) {
    Evaluator ev("interp", opts);
    for (const std::size_t row : rows) {
      ev.add(interpolation_baseline(ds.pairs[row].x, ds.norm),
             denormalize(ds.pairs[row].y, ds.norm));
    }
    rep.models.push_back(ev.finalize());
  }

  rep.write(p.reports);
  for (const ModelScores& m : rep.models) {
    std::cout << "evaluate: " << m.model << " crps " << m.crps << ", rmse " << m.det.rmse
              << ", " << m.patches << " patches\n";
  }
  std::cout << "evaluate: report -> " << (p.reports / "report.json").string() << "\n";
}

void cmd_report(const Paths& p) {
  const fs::path file = p.reports / "report.json";
  if (!fs::exists(file)) {
    throw ValidationError("report: " + file.string() + " not found (run evaluate first)");
  }
  std::ifstream in(file);
  json doc;
  in >> doc;

  std::printf("%-24s %10s %10s %8s %10s\n", "model", "crps", "rmse", "fss", "rank_chi2");
  for (const auto& [name, m] : doc.at("models").items()) {
    std::printf("%-24s %10.5f %10.4f %8.4f %10.2f\n", name.c_str(),
                m.at("crps").get<double>(), m.at("rmse").get<double>(),
                m.at("fss").get<double>(), m.at("rank_chi2").get<double>());
  }
  std::printf("\n%-24s", "brier");
  const json& thresholds = doc.at("options").at("thresholds_mm");
  for (const auto& t : thresholds) std::printf(" %9gmm", t.get<double>());
  std::printf("\n");
  for (const auto& [name, m] : doc.at("models").items()) {
    std::printf("%-24s", name.c_str());
    for (const auto& [key, v] : m.at("brier").items()) {
      (void)key;
      std::printf(" %11.6f", v.get<double>());
    }
    std::printf("\n");
  }
}

}  // namespace

json default_config() {
  return json{
      {"schema_version", 1},
      {"dataset",
       {{"path", ""},
        {"n", 300},
        {"seed", 2025},
        {"synth",
         {{"n_members", 10},
          {"cells_min", 2},
          {"cells_max", 6},
          {"amp_min_mm", 4.0},
          {"amp_max_mm", 28.0},
          {"sigma_min", 8.0},
          {"sigma_max", 26.0},
          {"anisotropy_min", 0.35},
          {"truth_noise_amp", 0.2},
          {"truth_noise_grid", 12},
          {"texture_amp", 0.1},
          {"texture_grid", 92},
          {"bias_enabled", true},
          {"bias_shift_y", 1},
          {"bias_shift_x", 1},
          {"bias_damp", 0.7},
          {"member_noise_amp", 0.35},
          {"member_noise_grid", 6},
          {"tcw_noise_amp", 0.08},
          {"cov_noise_grid", 5},
          {"y_max_mm", 100.0},
          {"sampler",
           {{"w_min", 0.02},
            {"w_max", 0.4},
            {"a", 4},
            {"rain_threshold_mm", 0.025}}}}}}},
      {"model",
       {{"mode", "corrector_gan"}, {"width_divisor", 4}, {"leaky_slope", 0.2}}},
      {"training",
       {{"stage1", {{"epochs", 5}, {"batch", 128}}},
        {"stage2", {{"epochs", 7}, {"batch", 128}}},
        {"stage3", {{"epochs", 35}, {"batch", 256}}},
        {"lr", 5e-5},
        {"beta1", 0.0},
        {"beta2", 0.9},
        {"adam_eps", 1e-8},
        {"critic_steps_per_gen", 5},
        {"seed", 0},
        {"val_k", 6},
        {"val_patch_cap", 0},
        {"weights",
         {{"gamma0", 0.1},
          {"gamma1", 20.0},
          {"gamma2", 20.0},
          {"lambda_gp", 10.0},
          {"fss_threshold", 0.5},
          {"fss_sharpness", 10.0},
          {"fss_window", 4},
          {"ensemble_k_loss", 6}}}}},
      {"evaluation",
       {{"k", 10},
        {"seed", 7},
        {"split", "test"},
        {"patch_cap", 0},
        {"thresholds_mm", {1.0, 5.0, 10.0, 30.0}},
        {"fss_threshold_mm", 4.0},
        {"fss_window", 16},
        {"rank_seed", 0},
        {"baseline", true}}},
  };
}

json effective_config(const std::string& config_path,
                      const std::vector<std::string>& overrides) {
  json cfg = default_config();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ValidationError("config: cannot open " + config_path);
    json file;
    try {
      in >> file;
    } catch (const json::exception& e) {
      throw ValidationError("config: " + config_path + ": " + e.what());
    }
    if (!file.is_object()) throw ValidationError("config: root must be a JSON object");
    if (file.contains("schema_version") &&
        file.at("schema_version") != json(1)) {
      throw ValidationError("config: unsupported schema_version");
    }
    merge_checked(cfg, file, "");
  }
  for (const std::string& spec : overrides) apply_override(cfg, spec);
  return cfg;
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"raincast: precipitation downscaling ensembles"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string checkpoint_arg;
  std::string name_arg;
  std::vector<std::string> overrides;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config JSON file");
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--set", overrides,
                    "override a config value: dotted.path=value (repeatable)");
  };

  CLI::App* synth = app.add_subcommand("synth-data", "write a synthetic dataset");
  CLI::App* train = app.add_subcommand("train", "run the mode's training schedule");
  CLI::App* generate = app.add_subcommand("generate", "sample ensembles from a checkpoint");
  CLI::App* evaluate = app.add_subcommand("evaluate", "score ensembles against observations");
  CLI::App* report = app.add_subcommand("report", "print the metric report");
  for (CLI::App* sub : {synth, train, generate, evaluate, report}) add_common(sub);
  generate->add_option("--checkpoint", checkpoint_arg,
                       "checkpoint directory (default <out>/checkpoints/selected)");
  generate->add_option("--name", name_arg, "ensemble run name (default the mode)");

  try {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("raincast");
    for (const std::string& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const Paths paths(out_dir);
    if (report->parsed()) {
      cmd_report(paths);
      return 0;
    }
    const json cfg = effective_config(config_path, overrides);
    const OutLock lock(paths.out);
    write_text(paths.out / "effective_config.json", cfg.dump(2) + "\n");
    if (synth->parsed()) {
      cmd_synth_data(cfg, paths);
    } else if (train->parsed()) {
      cmd_train(cfg, paths);
    } else if (generate->parsed()) {
      cmd_generate(cfg, paths, checkpoint_arg, name_arg);
    } else if (evaluate->parsed()) {
      cmd_evaluate(cfg, paths);
    }
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace raincast::cli
