#include <benchmark/benchmark.h>

#include <random>

#include "roiedit/data.hpp"
#include "roiedit/pipeline.hpp"
#include "roiedit/training.hpp"

namespace {

using namespace roiedit;

ImageTensor random_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  ImageTensor t({size, size, 3});
  for (auto& v : t.values()) v = u(rng);
  return t;
}

void BM_Edit(benchmark::State& state) {
  ModelConfig m;
  m.image_size = static_cast<int>(state.range(0));
  const ArchSpec arch = ArchSpec::from_config(m);
  const AutoencoderParams smn(arch, 1), smpn(arch, 2);
  const auto x = random_image(m.image_size, 3);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    auto r = edit(smn, smpn, x, EditConfig{RoiId::eyes, 1.0, seed++}, m.slice_scheme);
    benchmark::DoNotOptimize(r.edited.data());
  }
  state.counters["macs"] = static_cast<double>(estimate_edit_macs(arch));
}
BENCHMARK(BM_Edit)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Blur(benchmark::State& state) {
  const auto x = random_image(static_cast<int>(state.range(0)), 5);
  for (auto _ : state) benchmark::DoNotOptimize(blur(x).data());
}
BENCHMARK(BM_Blur)->Arg(64)->Arg(256);

void BM_AlphaMatting(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto x = random_image(n, 6), y = random_image(n, 7);
  RoiMask mask(n, n);
  for (int i = n / 4; i < 3 * n / 4; ++i)
    for (int j = n / 4; j < 3 * n / 4; ++j) mask.set(i, j, true);
  for (auto _ : state) benchmark::DoNotOptimize(alpha_matting(x, mask, y).composite.data());
}
BENCHMARK(BM_AlphaMatting)->Arg(64);

void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Tensor<float> x({4, 32, 32, c}, 0.5f), w({3, 3, c, c}, 0.01f), b({c});
  auto xv = ag::constant(x), wv = ag::constant(w), bv = ag::constant(b);
  for (auto _ : state) benchmark::DoNotOptimize(ag::conv2d(xv, wv, bv, 1, 1)->value.data());
  state.SetItemsProcessed(state.iterations() * 4LL * 32 * 32 * c * c * 9);
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(64);

void BM_TrainStep(benchmark::State& state) {
  const Phase phase = state.range(0) == 0 ? Phase::smn : Phase::smpn;
  ModelConfig m;
  SynthConfig sc;
  sc.count = 8;
  const auto recs = synthesize_records(sc);
  BatchStream stream(recs, 4, 1);
  const ArchSpec arch = ArchSpec::from_config(m);
  TrainConfig cfg;
  cfg.phase = phase;
  Trainer trainer(AutoencoderParams(arch, 1), DiscriminatorParams(arch, 2), cfg, m.slice_scheme);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step(stream.next()).d_loss);
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
