#include <benchmark/benchmark.h>

#include <cstdint>
#include <random>
#include <vector>

#include "raincast/evaluate.hpp"
#include "raincast/gridfile.hpp"
#include "raincast/losses.hpp"
#include "raincast/metrics.hpp"
#include "raincast/netcore.hpp"
#include "raincast/ops.hpp"
#include "raincast/rng.hpp"
#include "raincast/synth.hpp"
#include "raincast/trainer.hpp"

namespace {

using namespace raincast;

Tensor<float> random_tensor(Shape s, std::uint64_t seed, float lo = 0.0f,
                            float hi = 1.0f) {
  Tensor<float> t(s);
  std::mt19937_64 g = make_rng(seed);
  for (float& v : t.data) v = static_cast<float>(uniform(g, lo, hi));
  return t;
}

// Representative corrector-trunk layer at the desk-scale width.
void conv_forward(benchmark::State& state) {
  NoGradGuard ng;
  const int c = static_cast<int>(state.range(0));
  const Var<float> x = Var<float>::constant(random_tensor(Shape{16, 16, 16, c}, 1));
  const Var<float> w =
      Var<float>::constant(random_tensor(Shape{3, 3, c, c}, 2, -0.1f, 0.1f));
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d(x, w, ConvGeom{}).value().data.data());
  }
  const double flops = 2.0 * 16 * 16 * 16 * 3 * 3 * double(c) * c;
  state.counters["GF/s"] =
      benchmark::Counter(flops, benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::OneK::kIs1000);
}

void conv_train_step(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const Var<float> x = Var<float>::param(random_tensor(Shape{16, 16, 16, c}, 1));
  const Var<float> w =
      Var<float>::param(random_tensor(Shape{3, 3, c, c}, 2, -0.1f, 0.1f));
  for (auto _ : state) {
    const Var<float> loss = mean_all(conv2d(x, w, ConvGeom{}));
    const auto grads = grad(loss, {x, w});
    benchmark::DoNotOptimize(grads.front().value().data.data());
  }
}

void generator_forward(benchmark::State& state) {
  NoGradGuard ng;
  const ArchSpec arch{4, kInputChannels, 0.2};
  const Generator<float> gen(arch, 7);
  const int batch = static_cast<int>(state.range(0));
  const Var<float> x =
      Var<float>::constant(random_tensor(Shape{batch, 16, 16, kInputChannels}, 3));
  const Var<float> z = Var<float>::constant(random_tensor(Shape{batch, 16, 16, 1}, 4));
  for (auto _ : state) {
    benchmark::DoNotOptimize(gen(x, z).hi_res.value().data.data());
  }
  state.counters["samples/s"] = benchmark::Counter(
      batch, benchmark::Counter::kIsIterationInvariantRate);
}

void generator_backward(benchmark::State& state) {
  const ArchSpec arch{4, kInputChannels, 0.2};
  const Generator<float> gen(arch, 7);
  const int batch = static_cast<int>(state.range(0));
  const Var<float> x =
      Var<float>::constant(random_tensor(Shape{batch, 16, 16, kInputChannels}, 3));
  const Var<float> z = Var<float>::constant(random_tensor(Shape{batch, 16, 16, 1}, 4));
  const std::vector<Var<float>> params = gen.trainable();
  for (auto _ : state) {
    const GeneratorOut<float> out = gen(x, z);
    const Var<float> loss = mean_all(out.hi_res);
    const auto grads = grad(loss, params);
    benchmark::DoNotOptimize(grads.front().value().data.data());
  }
  state.counters["samples/s"] = benchmark::Counter(
      batch, benchmark::Counter::kIsIterationInvariantRate);
}

// One critic update with the gradient penalty's second-order path.
void critic_step_with_penalty(benchmark::State& state) {
  const ArchSpec arch{4, kInputChannels, 0.2};
  const Discriminator<float> disc(arch, 9);
  const int batch = static_cast<int>(state.range(0));
  const Var<float> x =
      Var<float>::constant(random_tensor(Shape{batch, 16, 16, kInputChannels}, 3));
  const Var<float> y =
      Var<float>::constant(random_tensor(Shape{batch, 128, 128, 1}, 5, 0.01f, 0.99f));
  const Var<float> fake =
      Var<float>::constant(random_tensor(Shape{batch, 128, 128, 1}, 6, 0.01f, 0.99f));
  Tensor<float> eps(Shape{batch, 1, 1, 1});
  for (float& e : eps.data) e = 0.5f;
  const auto critic = [&disc](const Var<float>& cx, const Var<float>& cy) {
    return disc(cx, cy);
  };
  const std::vector<Var<float>> params = disc.trainable();
  for (auto _ : state) {
    const Var<float> loss = critic_loss(critic, x, y, fake, eps, 10.0);
    const auto grads = grad(loss, params);
    benchmark::DoNotOptimize(grads.front().value().data.data());
  }
  state.counters["samples/s"] = benchmark::Counter(
      batch, benchmark::Counter::kIsIterationInvariantRate);
}

EnsembleForecast bench_ensemble(int k, std::uint64_t seed) {
  EnsembleForecast ens;
  std::mt19937_64 g = make_rng(seed);
  for (int m = 0; m < k; ++m) {
    GridField f(kTargetSize, kTargetSize, Space::RawMm);
    for (float& v : f.values) v = static_cast<float>(uniform(g, 0.0, 20.0));
    ens.members.push_back(std::move(f));
  }
  return ens;
}

void crps_patch(benchmark::State& state) {
  const EnsembleForecast ens = bench_ensemble(10, 11);
  GridField obs(kTargetSize, kTargetSize, Space::RawMm);
  std::mt19937_64 g = make_rng(12);
  for (float& v : obs.values) v = static_cast<float>(uniform(g, 0.0, 20.0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(crps_field_mean(ens, obs));
  }
  state.counters["px/s"] = benchmark::Counter(
      obs.values.size(), benchmark::Counter::kIsIterationInvariantRate);
}

// The full verification pass: CRPS, Brier, reliability, ranks, per-member
// deterministic scores.
void evaluator_patch(benchmark::State& state) {
  const EnsembleForecast ens = bench_ensemble(10, 11);
  GridField obs(kTargetSize, kTargetSize, Space::RawMm);
  std::mt19937_64 g = make_rng(12);
  for (float& v : obs.values) v = static_cast<float>(uniform(g, 0.0, 20.0));
  for (auto _ : state) {
    Evaluator ev("bench");
    ev.add(ens, obs);
    benchmark::DoNotOptimize(ev.finalize().crps);
  }
}

void grid_file_round_trip(benchmark::State& state) {
  const EnsembleForecast ens = bench_ensemble(10, 13);
  const std::filesystem::path file =
      std::filesystem::temp_directory_path() / "raincast_bench.rgf";
  for (auto _ : state) {
    write_grid_file(file, "precip_ensemble", "mm", ens.members);
    benchmark::DoNotOptimize(read_grid_file(file).second.size());
  }
  std::filesystem::remove(file);
  state.counters["MB/s"] = benchmark::Counter(
      2.0 * 10 * kTargetSize * kTargetSize * sizeof(float),
      benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::OneK::kIs1024);
}

void ensemble_sampling(benchmark::State& state) {
  SynthConfig cfg;
  const PatchPair pair = synth_pair(cfg, 99, 0);
  const ArchSpec arch{4, kInputChannels, 0.2};
  const Generator<float> gen(arch, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        sample_ensemble(gen, pair.x, 10, 123, plan_mode(TrainMode::kCorrectorGan), cfg.norm)
            .members.front()
            .values.data());
  }
  state.counters["members/s"] =
      benchmark::Counter(10, benchmark::Counter::kIsIterationInvariantRate);
}

void synth_patch(benchmark::State& state) {
  const SynthConfig cfg;
  std::uint64_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(synth_pair(cfg, 7, i++).weight);
  }
}

BENCHMARK(conv_forward)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_train_step)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(generator_forward)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(generator_backward)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(critic_step_with_penalty)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(crps_patch)->Unit(benchmark::kMillisecond);
BENCHMARK(evaluator_patch)->Unit(benchmark::kMillisecond);
BENCHMARK(grid_file_round_trip)->Unit(benchmark::kMillisecond);
BENCHMARK(ensemble_sampling)->Unit(benchmark::kMillisecond);
BENCHMARK(synth_patch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
