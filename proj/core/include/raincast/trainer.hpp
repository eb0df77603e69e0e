#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "raincast/dataset.hpp"
#include "raincast/losses.hpp"
#include "raincast/metrics.hpp"
#include "raincast/netcore.hpp"

namespace raincast {

// Training lanes. The primary lane pre-trains the corrector on coarse
// targets, pre-trains the full generator on pixel losses, then runs
// adversarial training; the others are ablations and baselines that share
// the same machinery.
enum class TrainMode {
  kCorrectorGan,  // three-stage schedule, 24-channel input, stochastic noise
  kNpt,           // no pre-training: adversarial stage only, 24-channel input
  kLeinStyle,     // adversarial-only on 1-channel individual forecast members
  kPureSr,        // deterministic super-resolution: zero noise, coarse-truth input
};

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& name);  // throws ValidationError

struct StageSchedule {
  int epochs = 0;
  int batch = 0;
};

struct TrainConfig {
  ArchSpec arch{};  // input_channels must agree with the mode; see configure_mode
  StageSchedule stage1{5, 128};
  StageSchedule stage2{7, 128};
  StageSchedule stage3{35, 256};
  double lr = 5e-5;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double adam_eps = 1e-8;
  int critic_steps_per_gen = 5;
  LossWeights weights{};
  TrainMode mode = TrainMode::kCorrectorGan;
  std::uint64_t seed = 0;
  int val_k = 6;           // ensemble size of the validation-CRPS selection proxy
  int val_patch_cap = 0;   // score only the first N validation patches; 0 = all

  void validate() const;  // throws ValidationError
};

// Static consequences of a mode choice. One-channel plans feed a single
// precipitation field to the networks: during training that field is the
// coarsened truth when precip_from_truth is set, otherwise a randomly chosen
// forecast member per draw; at sampling time ensemble members cycle through
// the coarse forecast members.
struct ModePlan {
  std::vector<int> stages;  // which of {1, 2, 3} run, in order
  int input_channels = kInputChannels;
  bool stochastic_z = true;
  bool precip_from_truth = false;
};

ModePlan plan_mode(TrainMode mode);

// Plan for cfg.mode, checked against the rest of the config. Throws
// ValidationError when the architecture contradicts the mode (wrong input
// channel count).
ModePlan configure_mode(const TrainConfig& cfg);

// One assembled training batch, all in normalized space.
struct Batch {
  Tensor<float> x;         // [B,16,16,C] conditioning stack
  Tensor<float> y;         // [B,128,128,1] high-resolution target
  Tensor<float> y_coarse;  // [B,16,16,1] coarse target
};

// rows: dataset pair indices. member_choice: for one-channel plans that feed
// forecast members, the member index per row; ignored otherwise.
Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& rows,
                 const ModePlan& plan, const std::vector<int>& member_choice = {});

// Adam over a fixed parameter list. Moment state is kept in float so that a
// checkpoint round-trip restores it bit-exactly.
class Adam {
 public:
  Adam() = default;
  Adam(double lr, double beta1, double beta2, double eps,
       std::vector<Var<float>> params);

  // One update; grads run parallel to the parameter list (as returned by
  // raincast::grad over the same list).
  void step(const std::vector<Var<float>>& grads);

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t);

  // Moment tensors as checkpoint extras, named "<prefix>.m<i>" / "<prefix>.v<i>".
  void export_state(const std::string& prefix,
                    std::vector<std::pair<std::string, Tensor<float>>>& out) const;
  // Restores moments from checkpoint extras written by export_state. Throws
  // FormatError when a tensor is missing or has the wrong shape.
  void import_state(const std::string& prefix,
                    const std::vector<std::pair<std::string, Tensor<float>>>& in);

 private:
  double lr_ = 0.0, b1_ = 0.0, b2_ = 0.0, eps_ = 1e-8;
  std::vector<Var<float>> params_;
  std::vector<Tensor<float>> m_, v_;
  std::int64_t t_ = 0;
};

// Per-stage training curves. Stages 1-2 fill train_loss/heldout_loss
// (heldout_loss[0] is the pre-training value, so it has epochs+1 entries);
// stage 3 fills gen_loss/critic_loss/val_crps plus the step counters.
struct StageTrace {
  int stage = 0;
  std::vector<double> train_loss;
  std::vector<double> heldout_loss;
  std::vector<double> gen_loss;
  std::vector<double> critic_loss;
  std::vector<double> val_crps;
  std::int64_t gen_steps = 0;
  std::int64_t critic_steps = 0;
};

struct Stage3Result {
  StageTrace trace;
  int selected_epoch = -1;  // argmin of trace.val_crps (first minimum on ties)
  double selected_val_crps = std::numeric_limits<double>::quiet_NaN();
  std::string selected_checkpoint;  // directory name under the checkpoint root
};

struct TrainReport {
  TrainMode mode = TrainMode::kCorrectorGan;
  std::uint64_t seed = 0;
  std::vector<StageTrace> stages;
  int selected_epoch = -1;
  double selected_val_crps = std::numeric_limits<double>::quiet_NaN();
  std::string selected_checkpoint;
  double wall_seconds = 0.0;

  std::string to_json() const;
};

// Coarse-corrector pre-training: only "corr." parameters update, noise is
// zero. Throws ValidationError when the mode's plan excludes stage 1, and
// DivergenceError on a non-finite loss.
StageTrace run_stage1(const Dataset& ds, Generator<float>& gen,
                      const TrainConfig& cfg);

// Full-generator pixel-loss pre-training with zero noise. Mode-gated like
// run_stage1.
StageTrace run_stage2(const Dataset& ds, Generator<float>& gen,
                      const TrainConfig& cfg);

// Adversarial stage: critic_steps_per_gen critic updates per generator
// update, fresh noise and interpolation draws per sample per step, one
// checkpoint per epoch under checkpoint_root, validation-CRPS model
// selection. If checkpoint_root already holds epoch checkpoints for this
// config, training resumes after the last one and the recorded curves are
// extended; the resumed trace is identical to an uninterrupted run.
Stage3Result run_stage3(const Dataset& ds, Generator<float>& gen,
                        Discriminator<float>& disc, const TrainConfig& cfg,
                        const std::filesystem::path& checkpoint_root);

// The full mode-dependent schedule: fresh (or resumed) networks, every stage
// in the mode's plan, per-stage completion checkpoints, and a final
// "selected" generator-only checkpoint for the best validation epoch.
TrainReport train(const Dataset& ds, const TrainConfig& cfg,
                  const std::filesystem::path& checkpoint_root);

// Mean validation-split CRPS of val_k-member ensembles in raw millimetres;
// the stage-3 selection metric.
double validation_crps(const Dataset& ds, const Generator<float>& gen,
                       const ModePlan& plan, const TrainConfig& cfg);

// k-member predictive ensemble for one conditioning patch, denormalized to
// raw millimetres. Deterministic in seed. Twenty-four-channel plans draw k
// independent noise fields over a fixed stack; one-channel plans cycle the
// forecast members (with fresh noise per member when the plan is stochastic).
EnsembleForecast sample_ensemble(const Generator<float>& gen, const InputPatch& x,
                                 int k, std::uint64_t seed,
                                 const ModePlan& plan = plan_mode(TrainMode::kCorrectorGan),
                                 const NormalizationSpec& norm = {});

}  // namespace raincast
