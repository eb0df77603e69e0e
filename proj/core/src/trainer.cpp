#include "raincast/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "raincast/checkpoint.hpp"
#include "raincast/error.hpp"
#include "raincast/rng.hpp"
#include "raincast/transform.hpp"

namespace raincast {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Stream tags for every random purpose. Each draw is seeded from
// (seed, tag, epoch, step...) counters alone, so a run resumed from an epoch
// checkpoint replays the identical batches, noise and interpolation points.
constexpr std::uint64_t kTagSampler = 0x53414d50;
constexpr std::uint64_t kTagMember = 0x4d454d42;
constexpr std::uint64_t kTagZGen = 0x5a47454e;
constexpr std::uint64_t kTagZCritic = 0x5a435254;
constexpr std::uint64_t kTagEps = 0x45505347;
constexpr std::uint64_t kTagValZ = 0x56414c5a;

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

bool plan_has_stage(const ModePlan& plan, int stage) {
  return std::find(plan.stages.begin(), plan.stages.end(), stage) != plan.stages.end();
}

struct SplitView {
  std::vector<std::size_t> rows;  // dataset indices
  std::vector<double> weights;    // sampler weights, parallel to rows
};

SplitView train_view(const Dataset& ds) {
  SplitView v;
  v.rows = ds.split_indices("train");
  if (v.rows.empty()) throw ValidationError("trainer: dataset has no training split");
  v.weights.reserve(v.rows.size());
  for (std::size_t r : v.rows) v.weights.push_back(ds.pairs[r].weight);
  return v;
}

// Next `count` sampled dataset rows; `picks` indexes into `view.rows`.
std::vector<std::size_t> next_rows(const SplitView& view,
                                   const std::vector<std::size_t>& picks,
                                   std::size_t& cursor, std::size_t count) {
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(view.rows[picks[cursor++]]);
  return out;
}

std::vector<int> draw_members(std::size_t count, std::mt19937_64& eng) {
  std::vector<int> m(count);
  for (int& v : m) v = static_cast<int>(uniform_index(eng, kEnsembleMembers));
  return m;
}

bool needs_member_choice(const ModePlan& plan) {
  return plan.input_channels == 1 && !plan.precip_from_truth;
}

Tensor<float> zero_noise(int batch) {
  return Tensor<float>(Shape{batch, kPatchSize, kPatchSize, 1});
}

double checked_loss(const Var<float>& loss, const char* what, int stage, int epoch,
                    std::int64_t step) {
  const double v = static_cast<double>(loss.value().data[0]);
  if (!std::isfinite(v)) {
    throw DivergenceError(std::string(what) + " became non-finite at stage " +
                          std::to_string(stage) + ", epoch " + std::to_string(epoch) +
                          ", step " + std::to_string(step));
  }
  return v;
}

// Mean pre-training loss over the validation split, evaluated in fixed
// batches with no graph construction.
double heldout_pretrain_loss(int stage, const Dataset& ds,
                             const std::vector<std::size_t>& val_rows,
                             const Generator<float>& gen, const ModePlan& plan,
                             const TrainConfig& cfg, int batch) {
  if (val_rows.empty()) throw ValidationError("trainer: dataset has no validation split");
  NoGradGuard ng;
  KahanSum num;
  std::size_t total = 0;
  const std::size_t stride = static_cast<std::size_t>(batch);
  for (std::size_t start = 0; start < val_rows.size(); start += stride) {
    const std::size_t len = std::min(stride, val_rows.size() - start);
    std::vector<std::size_t> rows(val_rows.begin() + static_cast<std::ptrdiff_t>(start),
                                  val_rows.begin() + static_cast<std::ptrdiff_t>(start + len));
    const Batch bt = make_batch(ds, rows, plan);
    const Var<float> x = Var<float>::constant(bt.x);
    const Var<float> z = Var<float>::constant(zero_noise(static_cast<int>(len)));
    const Var<float> yc = Var<float>::constant(bt.y_coarse);
    Var<float> loss;
    if (stage == 1) {
      loss = stage1_loss(gen.correct(x, z), yc, cfg.weights);
    } else {
      const GeneratorOut<float> out = gen(x, z);
      loss = stage2_loss(out.lo_proxy, out.hi_res, yc, Var<float>::constant(bt.y));
    }
    num.add(static_cast<double>(loss.value().data[0]) * static_cast<double>(len));
    total += len;
  }
  return num.sum / static_cast<double>(total);
}

// Shared stage-1/2 loop: weighted with-replacement batches, zero noise,
// Adam over the stage's parameter subset, held-out curve bracketing every
// epoch (entry 0 is the pre-training value).
StageTrace run_pretrain_stage(int stage, const Dataset& ds, Generator<float>& gen,
                              const TrainConfig& cfg) {
  const ModePlan plan = configure_mode(cfg);
  if (!plan_has_stage(plan, stage)) {
    throw ValidationError("trainer: stage " + std::to_string(stage) +
                          " is not part of the " + to_string(cfg.mode) + " schedule");
  }
  const StageSchedule sched = stage == 1 ? cfg.stage1 : cfg.stage2;
  const SplitView view = train_view(ds);
  const std::vector<std::size_t> val_rows = ds.split_indices("val");
  const std::vector<Var<float>> params =
      stage == 1 ? gen.trainable("corr.") : gen.trainable();
  Adam opt(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, params);

  StageTrace tr;
  tr.stage = stage;
  tr.heldout_loss.push_back(
      heldout_pretrain_loss(stage, ds, val_rows, gen, plan, cfg, sched.batch));

  const std::size_t bpe = ceil_div(view.rows.size(), sched.batch);
  for (int epoch = 0; epoch < sched.epochs; ++epoch) {
    const std::vector<std::size_t> picks = weighted_sample_indices(
        view.weights, bpe * sched.batch, seed_stream(cfg.seed, kTagSampler, stage, epoch));
    std::size_t cursor = 0;
    KahanSum ep;
    for (std::size_t b = 0; b < bpe; ++b) {
      const std::vector<std::size_t> rows = next_rows(view, picks, cursor, sched.batch);
      const Batch bt = make_batch(ds, rows, plan);
      const Var<float> x = Var<float>::constant(bt.x);
      const Var<float> z = Var<float>::constant(zero_noise(sched.batch));
      const Var<float> yc = Var<float>::constant(bt.y_coarse);
      Var<float> loss;
      if (stage == 1) {
        loss = stage1_loss(gen.correct(x, z), yc, cfg.weights);
      } else {
        const GeneratorOut<float> out = gen(x, z);
        loss = stage2_loss(out.lo_proxy, out.hi_res, yc, Var<float>::constant(bt.y));
      }
      ep.add(checked_loss(loss, "pre-training loss", stage, epoch,
                          static_cast<std::int64_t>(b)));
      opt.step(grad(loss, params));
    }
    tr.train_loss.push_back(ep.sum / static_cast<double>(bpe));
    tr.heldout_loss.push_back(
        heldout_pretrain_loss(stage, ds, val_rows, gen, plan, cfg, sched.batch));
  }
  return tr;
}

void check_checkpoint_matches(const Checkpoint& ck, const TrainConfig& cfg) {
  if (ck.seed != cfg.seed || ck.arch.width_divisor != cfg.arch.width_divisor ||
      ck.arch.input_channels != cfg.arch.input_channels ||
      ck.arch.leaky_slope != cfg.arch.leaky_slope) {
    throw ValidationError(
        "trainer: checkpoint directory belongs to a different run "
        "(seed or architecture mismatch)");
  }
}

std::string stage3_epoch_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "stage3_epoch_%04d", epoch);
  return buf;
}

// Epoch indices of readable-looking stage-3 checkpoints, ascending.
std::vector<int> stage3_epochs_on_disk(const fs::path& root) {
  std::vector<int> found;
  if (!fs::exists(root)) return found;
  const std::string prefix = "stage3_epoch_";
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind(prefix, 0) != 0) continue;
    const std::string tail = name.substr(prefix.size());
    if (tail.empty() || tail.find_first_not_of("0123456789") != std::string::npos) continue;
    found.push_back(std::stoi(tail));
  }
  std::sort(found.begin(), found.end());
  return found;
}

json trace_json(const StageTrace& tr, int epoch) {
  return json{{"epoch", epoch},
              {"gen_loss", tr.gen_loss},
              {"critic_loss", tr.critic_loss},
              {"val_crps", tr.val_crps},
              {"gen_steps", tr.gen_steps},
              {"critic_steps", tr.critic_steps}};
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kCorrectorGan: return "corrector_gan";
    case TrainMode::kNpt: return "npt";
    case TrainMode::kLeinStyle: return "lein_style";
    case TrainMode::kPureSr: return "pure_sr";
  }
  throw ValidationError("unknown training mode value");
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "corrector_gan") return TrainMode::kCorrectorGan;
  if (name == "npt") return TrainMode::kNpt;
  if (name == "lein_style") return TrainMode::kLeinStyle;
  if (name == "pure_sr") return TrainMode::kPureSr;
  throw ValidationError("unknown training mode: " + name);
}

void TrainConfig::validate() const {
  arch.validate();
  weights.validate();
  const auto sched_ok = [](const StageSchedule& s) { return s.epochs >= 1 && s.batch >= 1; };
  if (!sched_ok(stage1) || !sched_ok(stage2) || !sched_ok(stage3)) {
    throw ValidationError("train config: epochs and batch sizes must be positive");
  }
  if (!std::isfinite(lr) || lr < 0) {
    throw ValidationError("train config: learning rate must be finite and non-negative");
  }
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw ValidationError("train config: Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) throw ValidationError("train config: Adam epsilon must be positive");
  if (critic_steps_per_gen < 1) {
    throw ValidationError("train config: critic_steps_per_gen must be at least 1");
  }
  if (val_k < 1) throw ValidationError("train config: val_k must be at least 1");
  if (val_patch_cap < 0) throw ValidationError("train config: val_patch_cap must be >= 0");
}

ModePlan plan_mode(TrainMode mode) {
  switch (mode) {
    case TrainMode::kCorrectorGan:
      return ModePlan{{1, 2, 3}, kInputChannels, true, false};
    case TrainMode::kNpt:
      return ModePlan{{3}, kInputChannels, true, false};
    case TrainMode::kLeinStyle:
      return ModePlan{{3}, 1, true, false};
    case TrainMode::kPureSr:
      return ModePlan{{2, 3}, 1, false, true};
  }
  throw ValidationError("unknown training mode value");
}

ModePlan configure_mode(const TrainConfig& cfg) {
  cfg.validate();
  const ModePlan plan = plan_mode(cfg.mode);
  if (cfg.arch.input_channels != plan.input_channels) {
    throw ValidationError("train config: mode " + to_string(cfg.mode) + " needs " +
                          std::to_string(plan.input_channels) +
                          " input channels, architecture declares " +
                          std::to_string(cfg.arch.input_channels));
  }
  return plan;
}

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& rows,
                 const ModePlan& plan, const std::vector<int>& member_choice) {
  if (rows.empty()) throw ValidationError("make_batch: empty row list");
  if (plan.input_channels != 1 && plan.input_channels != kInputChannels) {
    throw ValidationError("make_batch: unsupported input channel plan");
  }
  const bool member_input = needs_member_choice(plan);
  if (member_input && member_choice.size() != rows.size()) {
    throw ValidationError("make_batch: member choice must cover every row");
  }
  const int bsz = static_cast<int>(rows.size());
  Batch bt{Tensor<float>(Shape{bsz, kPatchSize, kPatchSize, plan.input_channels}),
           Tensor<float>(Shape{bsz, kTargetSize, kTargetSize, 1}),
           Tensor<float>(Shape{bsz, kPatchSize, kPatchSize, 1})};
  for (int i = 0; i < bsz; ++i) {
    if (rows[i] >= ds.pairs.size()) throw ValidationError("make_batch: row out of range");
    const PatchPair& p = ds.pairs[rows[i]];
    if (p.y.height != kTargetSize || p.y.width != kTargetSize ||
        p.y_coarse.height != kPatchSize || p.y_coarse.width != kPatchSize) {
      throw ValidationError("make_batch: pair has wrong grid dimensions");
    }
    if (plan.input_channels == kInputChannels) {
      p.x.validate();
      for (int c = 0; c < kInputChannels; ++c) {
        const GridField& f = p.x.channels[c];
        for (int yy = 0; yy < kPatchSize; ++yy)
          for (int xx = 0; xx < kPatchSize; ++xx) bt.x.at(i, yy, xx, c) = f.at(yy, xx);
      }
    } else {
      const GridField* src = nullptr;
      if (plan.precip_from_truth) {
        src = &p.y_coarse;
      } else {
        const int m = member_choice[i];
        if (m < 0 || m >= kEnsembleMembers) {
          throw ValidationError("make_batch: member index out of range");
        }
        p.x.validate();
        src = &p.x.channels[kChPrecipBegin + m];
      }
      for (int yy = 0; yy < kPatchSize; ++yy)
        for (int xx = 0; xx < kPatchSize; ++xx) bt.x.at(i, yy, xx, 0) = src->at(yy, xx);
    }
    for (int yy = 0; yy < kTargetSize; ++yy)
      for (int xx = 0; xx < kTargetSize; ++xx) bt.y.at(i, yy, xx, 0) = p.y.at(yy, xx);
    for (int yy = 0; yy < kPatchSize; ++yy)
      for (int xx = 0; xx < kPatchSize; ++xx) bt.y_coarse.at(i, yy, xx, 0) = p.y_coarse.at(yy, xx);
  }
  return bt;
}

Adam::Adam(double lr, double beta1, double beta2, double eps,
           std::vector<Var<float>> params)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), params_(std::move(params)) {
  if (!std::isfinite(lr_) || lr_ < 0 || b1_ < 0 || b1_ >= 1 || b2_ < 0 || b2_ >= 1 ||
      !(eps_ > 0)) {
    throw ValidationError("adam: invalid hyperparameters");
  }
  if (params_.empty()) throw ValidationError("adam: empty parameter list");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Var<float>& p : params_) {
    if (!p.defined()) throw ValidationError("adam: undefined parameter");
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::step(const std::vector<Var<float>>& grads) {
  if (grads.size() != params_.size()) {
    throw ValidationError("adam: gradient list does not match the parameter list");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor<float>& g = grads[i].value();
    if (!(g.shape == params_[i].shape())) {
      throw ValidationError("adam: gradient shape mismatch");
    }
    auto& pv = params_[i].mutable_value().data;
    auto& mv = m_[i].data;
    auto& vv = v_[i].data;
    const auto& gd = g.data;
    for (std::size_t e = 0; e < pv.size(); ++e) {
      const double gg = static_cast<double>(gd[e]);
      const double m = b1_ * static_cast<double>(mv[e]) + (1.0 - b1_) * gg;
      const double v = b2_ * static_cast<double>(vv[e]) + (1.0 - b2_) * gg * gg;
      mv[e] = static_cast<float>(m);
      vv[e] = static_cast<float>(v);
      pv[e] = static_cast<float>(static_cast<double>(pv[e]) -
                                 lr_ * (m / c1) / (std::sqrt(v / c2) + eps_));
    }
  }
}

void Adam::set_steps(std::int64_t t) {
  if (t < 0) throw ValidationError("adam: negative step count");
  t_ = t;
}

void Adam::export_state(const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor<float>>>& out) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back(prefix + ".m" + std::to_string(i), m_[i]);
    out.emplace_back(prefix + ".v" + std::to_string(i), v_[i]);
  }
}

void Adam::import_state(const std::string& prefix,
                        const std::vector<std::pair<std::string, Tensor<float>>>& in) {
  const auto find = [&in](const std::string& name) -> const Tensor<float>& {
    for (const auto& [n, t] : in) {
      if (n == name) return t;
    }
    throw FormatError("optimizer state tensor missing: " + name);
  };
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor<float>& mt = find(prefix + ".m" + std::to_string(i));
    const Tensor<float>& vt = find(prefix + ".v" + std::to_string(i));
    if (!(mt.shape == m_[i].shape) || !(vt.shape == v_[i].shape)) {
      throw FormatError("optimizer state shape mismatch under " + prefix);
    }
    m_[i] = mt;
    v_[i] = vt;
  }
}

StageTrace run_stage1(const Dataset& ds, Generator<float>& gen, const TrainConfig& cfg) {
  return run_pretrain_stage(1, ds, gen, cfg);
}

StageTrace run_stage2(const Dataset& ds, Generator<float>& gen, const TrainConfig& cfg) {
  return run_pretrain_stage(2, ds, gen, cfg);
}

double validation_crps(const Dataset& ds, const Generator<float>& gen,
                       const ModePlan& plan, const TrainConfig& cfg) {
  std::vector<std::size_t> val = ds.split_indices("val");
  if (val.empty()) throw ValidationError("trainer: dataset has no validation split");
  if (cfg.val_patch_cap > 0 && val.size() > static_cast<std::size_t>(cfg.val_patch_cap)) {
    val.resize(cfg.val_patch_cap);
  }
  KahanSum acc;
  for (std::size_t r : val) {
    const PatchPair& pair = ds.pairs[r];
    const EnsembleForecast ens =
        sample_ensemble(gen, pair.x, cfg.val_k,
                        seed_stream(cfg.seed, kTagValZ, static_cast<std::uint64_t>(r)),
                        plan, ds.norm);
    acc.add(crps_field_mean(ens, denormalize(pair.y, ds.norm)));
  }
  return acc.sum / static_cast<double>(val.size());
}

Stage3Result run_stage3(const Dataset& ds, Generator<float>& gen,
                        Discriminator<float>& disc, const TrainConfig& cfg,
                        const std::filesystem::path& checkpoint_root) {
  const ModePlan plan = configure_mode(cfg);
  const SplitView view = train_view(ds);
  fs::create_directories(checkpoint_root);

  StageTrace tr;
  tr.stage = 3;
  int start_epoch = 0;

  // Resume from the newest readable epoch checkpoint, if any.
  Adam opt_g, opt_d;
  {
    const std::vector<int> on_disk = stage3_epochs_on_disk(checkpoint_root);
    bool adopted = false;
    for (auto it = on_disk.rbegin(); it != on_disk.rend() && !adopted; ++it) {
      Checkpoint ck;
      try {
        ck = load_checkpoint((checkpoint_root / stage3_epoch_name(*it)).string());
      } catch (const FormatError&) {
        continue;  // half-written checkpoint; fall back to the previous epoch
      }
      check_checkpoint_matches(ck, cfg);
      if (!ck.gen || !ck.disc) {
        throw FormatError("stage-3 checkpoint is missing network parameters");
      }
      json ex;
      try {
        ex = json::parse(ck.extra_json);
        gen = std::move(*ck.gen);
        disc = std::move(*ck.disc);
        opt_g = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, gen.trainable());
        opt_d = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, disc.trainable());
        opt_g.import_state("opt_g", ck.extra_tensors);
        opt_d.import_state("opt_d", ck.extra_tensors);
        opt_g.set_steps(ex.at("opt_g_steps").get<std::int64_t>());
        opt_d.set_steps(ex.at("opt_d_steps").get<std::int64_t>());
        tr.gen_loss = ex.at("gen_loss").get<std::vector<double>>();
        tr.critic_loss = ex.at("critic_loss").get<std::vector<double>>();
        tr.val_crps = ex.at("val_crps").get<std::vector<double>>();
        tr.gen_steps = ex.at("gen_steps").get<std::int64_t>();
        tr.critic_steps = ex.at("critic_steps").get<std::int64_t>();
        if (ex.at("epoch").get<int>() + 1 != static_cast<int>(tr.val_crps.size())) {
          throw FormatError("stage-3 checkpoint bookkeeping is inconsistent");
        }
      } catch (const json::exception&) {
        throw FormatError("stage-3 checkpoint bookkeeping is unreadable");
      }
      adopted = true;
    }
    if (!adopted) {
      opt_g = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, gen.trainable());
      opt_d = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, disc.trainable());
    }
    // A directory holding more epochs than the config asks for is truncated
    // to the configured horizon for selection purposes.
    if (static_cast<int>(tr.val_crps.size()) > cfg.stage3.epochs) {
      tr.gen_loss.resize(cfg.stage3.epochs);
      tr.critic_loss.resize(cfg.stage3.epochs);
      tr.val_crps.resize(cfg.stage3.epochs);
    }
    start_epoch = static_cast<int>(tr.val_crps.size());
  }

  const std::vector<Var<float>> gparams = gen.trainable();
  const std::vector<Var<float>> dparams = disc.trainable();
  const auto critic_fn = [&disc](const Var<float>& cx, const Var<float>& cy) {
    return disc(cx, cy);
  };

  const int csteps = cfg.critic_steps_per_gen;
  const std::size_t bpe = ceil_div(view.rows.size(), cfg.stage3.batch);
  const std::size_t cycles = std::max<std::size_t>(1, bpe / (csteps + 1));
  const int k_eff = plan.stochastic_z ? cfg.weights.ensemble_k_loss : 1;
  const int bsz = cfg.stage3.batch;

  for (int epoch = start_epoch; epoch < cfg.stage3.epochs; ++epoch) {
    const std::vector<std::size_t> picks = weighted_sample_indices(
        view.weights, cycles * (csteps + 1) * bsz,
        seed_stream(cfg.seed, kTagSampler, 3, epoch));
    auto member_eng = make_rng(cfg.seed, kTagMember, 3, epoch);
    std::size_t cursor = 0;
    KahanSum closs, gloss;

    for (std::size_t cyc = 0; cyc < cycles; ++cyc) {
      for (int j = 0; j < csteps; ++j) {
        const std::vector<std::size_t> rows = next_rows(view, picks, cursor, bsz);
        const std::vector<int> members =
            needs_member_choice(plan) ? draw_members(rows.size(), member_eng)
                                      : std::vector<int>{};
        const Batch bt = make_batch(ds, rows, plan, members);
        const Var<float> x = Var<float>::constant(bt.x);
        const Var<float> y = Var<float>::constant(bt.y);
        Tensor<float> z = zero_noise(bsz);
        if (plan.stochastic_z) {
          auto zeng = make_rng(cfg.seed, kTagZCritic, epoch, cyc, j);
          z = sample_noise<float>(bsz, kPatchSize, kPatchSize, zeng);
        }
        Var<float> fake;
        {
          NoGradGuard ng;
          fake = gen(x, Var<float>::constant(z)).hi_res;
        }
        Tensor<float> eps(Shape{bsz, 1, 1, 1});
        {
          auto eeng = make_rng(cfg.seed, kTagEps, epoch, cyc, j);
          for (float& v : eps.data) v = static_cast<float>(uniform01(eeng));
        }
        const Var<float> loss =
            critic_loss(critic_fn, x, y, fake, eps, cfg.weights.lambda_gp);
        closs.add(checked_loss(loss, "critic loss", 3, epoch, tr.critic_steps));
        opt_d.step(grad(loss, dparams));
        ++tr.critic_steps;
      }

      const std::vector<std::size_t> rows = next_rows(view, picks, cursor, bsz);
      const std::vector<int> members =
          needs_member_choice(plan) ? draw_members(rows.size(), member_eng)
                                    : std::vector<int>{};
      const Batch bt = make_batch(ds, rows, plan, members);
      const Var<float> x = Var<float>::constant(bt.x);
      const Var<float> y = Var<float>::constant(bt.y);
      const Var<float> yc = Var<float>::constant(bt.y_coarse);
      auto zeng = make_rng(cfg.seed, kTagZGen, epoch, cyc);
      std::vector<GeneratorOut<float>> samples;
      samples.reserve(k_eff);
      for (int s = 0; s < k_eff; ++s) {
        Tensor<float> z = plan.stochastic_z
                              ? sample_noise<float>(bsz, kPatchSize, kPatchSize, zeng)
                              : zero_noise(bsz);
        samples.push_back(gen(x, Var<float>::constant(z)));
      }
      const Var<float> loss = generator_loss(critic_fn, x, y, yc, samples, cfg.weights);
      gloss.add(checked_loss(loss, "generator loss", 3, epoch, tr.gen_steps));
      opt_g.step(grad(loss, gparams));
      ++tr.gen_steps;
    }

    tr.critic_loss.push_back(closs.sum / static_cast<double>(cycles * csteps));
    tr.gen_loss.push_back(gloss.sum / static_cast<double>(cycles));
    tr.val_crps.push_back(validation_crps(ds, gen, plan, cfg));

    std::vector<std::pair<std::string, Tensor<float>>> extras;
    opt_g.export_state("opt_g", extras);
    opt_d.export_state("opt_d", extras);
    json ex = trace_json(tr, epoch);
    ex["opt_g_steps"] = opt_g.steps();
    ex["opt_d_steps"] = opt_d.steps();
    save_checkpoint((checkpoint_root / stage3_epoch_name(epoch)).string(), gen, &disc,
                    "stage3", extras, ex.dump());
  }

  Stage3Result res;
  res.trace = std::move(tr);
  for (std::size_t i = 0; i < res.trace.val_crps.size(); ++i) {
    if (res.selected_epoch < 0 || res.trace.val_crps[i] < res.selected_val_crps) {
      res.selected_epoch = static_cast<int>(i);
      res.selected_val_crps = res.trace.val_crps[i];
    }
  }
  res.selected_checkpoint = stage3_epoch_name(res.selected_epoch);
  return res;
}

namespace {

// Adopts a completed pre-training stage checkpoint when one is present and
// readable; unreadable directories are retrained and overwritten, but a
// checkpoint from a different run aborts instead of being clobbered.
bool adopt_pretrain_checkpoint(const fs::path& dir, const TrainConfig& cfg, int stage,
                               Generator<float>& gen, StageTrace& out) {
  if (!fs::exists(dir / "checkpoint.json")) return false;
  Checkpoint ck;
  try {
    ck = load_checkpoint(dir.string());
  } catch (const FormatError&) {
    return false;
  }
  check_checkpoint_matches(ck, cfg);
  if (!ck.gen) return false;
  json ex;
  try {
    ex = json::parse(ck.extra_json);
    if (!ex.value("completed", false)) return false;
    out.stage = stage;
    out.train_loss = ex.value("train_loss", std::vector<double>{});
    out.heldout_loss = ex.value("heldout_loss", std::vector<double>{});
  } catch (const json::exception&) {
    return false;
  }
  gen = std::move(*ck.gen);
  return true;
}

}  // namespace

TrainReport train(const Dataset& ds, const TrainConfig& cfg,
                  const std::filesystem::path& checkpoint_root) {
  const auto t0 = std::chrono::steady_clock::now();
  const ModePlan plan = configure_mode(cfg);
  fs::create_directories(checkpoint_root);

  TrainReport rep;
  rep.mode = cfg.mode;
  rep.seed = cfg.seed;

  Generator<float> gen(cfg.arch, cfg.seed);
  Discriminator<float> disc(cfg.arch, cfg.seed);

  for (int stage : plan.stages) {
    if (stage == 1 || stage == 2) {
      const std::string name = stage == 1 ? "stage1" : "stage2";
      const fs::path dir = checkpoint_root / name;
      StageTrace tr;
      if (!adopt_pretrain_checkpoint(dir, cfg, stage, gen, tr)) {
        tr = stage == 1 ? run_stage1(ds, gen, cfg) : run_stage2(ds, gen, cfg);
        const json ex{{"completed", true},
                      {"stage", stage},
                      {"train_loss", tr.train_loss},
                      {"heldout_loss", tr.heldout_loss}};
        save_checkpoint(dir.string(), gen, nullptr, name, {}, ex.dump());
      }
      rep.stages.push_back(std::move(tr));
    } else {
      const Stage3Result res = run_stage3(ds, gen, disc, cfg, checkpoint_root);
      rep.stages.push_back(res.trace);
      rep.selected_epoch = res.selected_epoch;
      rep.selected_val_crps = res.selected_val_crps;
      rep.selected_checkpoint = res.selected_checkpoint;
      const Checkpoint best =
          load_checkpoint((checkpoint_root / res.selected_checkpoint).string());
      const json ex{{"source", res.selected_checkpoint},
                    {"epoch", res.selected_epoch},
                    {"val_crps", res.selected_val_crps}};
      save_checkpoint((checkpoint_root / "selected").string(), *best.gen, nullptr,
                      "selected", {}, ex.dump());
    }
  }

  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

EnsembleForecast sample_ensemble(const Generator<float>& gen, const InputPatch& x,
                                 int k, std::uint64_t seed, const ModePlan& plan,
                                 const NormalizationSpec& norm) {
  if (k < 1) throw ValidationError("sample_ensemble: k must be at least 1");
  x.validate();
  if (gen.arch().input_channels != plan.input_channels) {
    throw ValidationError(
        "sample_ensemble: generator input channels do not match the plan");
  }
  NoGradGuard ng;
  Tensor<float> xt(Shape{k, kPatchSize, kPatchSize, plan.input_channels});
  for (int j = 0; j < k; ++j) {
    if (plan.input_channels == kInputChannels) {
      for (int c = 0; c < kInputChannels; ++c) {
        const GridField& f = x.channels[c];
        for (int yy = 0; yy < kPatchSize; ++yy)
          for (int xx = 0; xx < kPatchSize; ++xx) xt.at(j, yy, xx, c) = f.at(yy, xx);
      }
    } else {
      const GridField& f = x.channels[kChPrecipBegin + j % kEnsembleMembers];
      for (int yy = 0; yy < kPatchSize; ++yy)
        for (int xx = 0; xx < kPatchSize; ++xx) xt.at(j, yy, xx, 0) = f.at(yy, xx);
    }
  }
  Tensor<float> z(Shape{k, kPatchSize, kPatchSize, 1});
  if (plan.stochastic_z) {
    auto zeng = make_rng(seed);
    z = sample_noise<float>(k, kPatchSize, kPatchSize, zeng);
  }
  const Var<float> hi =
      gen(Var<float>::constant(std::move(xt)), Var<float>::constant(std::move(z))).hi_res;
  const Tensor<float>& hv = hi.value();

  const double res_km =
      x.channels[0].resolution_km > 0 ? x.channels[0].resolution_km / kUpscaleFactor : 0.0;
  EnsembleForecast ens;
  ens.members.reserve(k);
  for (int j = 0; j < k; ++j) {
    GridField f(kTargetSize, kTargetSize, Space::Normalized, res_km);
    for (int yy = 0; yy < kTargetSize; ++yy)
      for (int xx = 0; xx < kTargetSize; ++xx) f.at(yy, xx) = hv.at(j, yy, xx, 0);
    ens.members.push_back(denormalize(f, norm));
  }
  return ens;
}

std::string TrainReport::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["kind"] = "raincast_train_report";
  j["mode"] = raincast::to_string(mode);
  j["seed"] = seed;
  j["wall_seconds"] = wall_seconds;
  j["selected"] = json{{"epoch", selected_epoch},
                       {"checkpoint", selected_checkpoint},
                       {"val_crps", std::isfinite(selected_val_crps)
                                        ? json(selected_val_crps)
                                        : json(nullptr)}};
  j["stages"] = json::array();
  for (const StageTrace& st : stages) {
    json s{{"stage", st.stage}};
    if (!st.train_loss.empty()) s["train_loss"] = st.train_loss;
    if (!st.heldout_loss.empty()) s["heldout_loss"] = st.heldout_loss;
    if (!st.gen_loss.empty()) s["gen_loss"] = st.gen_loss;
    if (!st.critic_loss.empty()) s["critic_loss"] = st.critic_loss;
    if (!st.val_crps.empty()) s["val_crps"] = st.val_crps;
    if (st.stage == 3) {
      s["gen_steps"] = st.gen_steps;
      s["critic_steps"] = st.critic_steps;
    }
    j["stages"].push_back(std::move(s));
  }
  return j.dump(2) + "\n";
}

}  // namespace raincast
