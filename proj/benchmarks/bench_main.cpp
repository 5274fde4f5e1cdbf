#include <benchmark/benchmark.h>

#include <random>

#include "fcd/annotation.hpp"
#include "fcd/evaluation.hpp"
#include "fcd/models.hpp"
#include "fcd/patching.hpp"
#include "fcd/phantom.hpp"

using namespace fcd;

namespace {

const Phantom& phantom() {
  static const Phantom p = [] {
    PhantomParams params;
    params.seed = 1;
    return generate_phantom(params);
  }();
  return p;
}

void BM_ClassifierForward(benchmark::State& state) {
  EncoderConfig cfg;
  for (int i = 1; i < state.range(0); ++i) cfg.views.push_back(i == 1 ? View::coronal : View::sagittal);
  const ClassifierModel model(cfg, 1);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> n;
  std::vector<PatchStack> stacks;
  for (int i = 0; i < 64; ++i) {
    PatchStack s(cfg.channels(), cfg.height, cfg.width);
    for (auto& v : s.data) v = n(rng);
    stacks.push_back(std::move(s));
  }
  for (auto _ : state) benchmark::DoNotOptimize(model.predict_batch(stacks));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_ClassifierForward)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_PatchGrid(benchmark::State& state) {
  PatchParams params;
  for (auto _ : state) benchmark::DoNotOptimize(generate_patch_grid(phantom().brain, params, "b"));
}
BENCHMARK(BM_PatchGrid)->Unit(benchmark::kMillisecond);

void BM_ExtractStacks(benchmark::State& state) {
  PatchParams params;
  params.views = {View::axial, View::coronal, View::sagittal};
  params.stride_z = 8;
  const auto grid = generate_patch_grid(phantom().brain, params, "b");
  for (auto _ : state) {
    for (const auto& spec : grid) benchmark::DoNotOptimize(extract_stack(phantom().volume, spec, params));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(grid.size()));
}
BENCHMARK(BM_ExtractStacks)->Unit(benchmark::kMillisecond);

void BM_TopK(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u;
  SubjectScores s{"b", {}};
  for (int i = 0; i < state.range(0); ++i) {
    ScoredPatch p;
    p.spec = {"b", i / 40, (i % 4) * 20, (i / 4 % 10) * 12, 24, 40, PatchCategory::side};
    p.probability = u(rng);
    p.overlap = 0;
    s.patches.push_back(std::move(p));
  }
  for (auto _ : state) benchmark::DoNotOptimize(top_k_success(s, 20));
}
BENCHMARK(BM_TopK)->Arg(1000)->Arg(10000);

void BM_InscribedEllipsoid(benchmark::State& state) {
  const Dims dims{96, 96, 96};
  Parallelepiped box;
  box.x_range = {0, 40};
  box.y_range = {0, 40};
  box.z_range = {0, 40};
  for (auto _ : state) benchmark::DoNotOptimize(inscribe_ellipsoid(box, dims));
}
BENCHMARK(BM_InscribedEllipsoid)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
