#include <benchmark/benchmark.h>

#include "mvcount/density.hpp"
#include "mvcount/net.hpp"
#include "mvcount/rotation_select.hpp"
#include "mvcount/sampler.hpp"
#include "mvcount/scenesim.hpp"

namespace {

using namespace mvcount;

Map2D noise_map(int w, int h, int c, GridTag tag, std::uint64_t seed) {
  CounterRng rng(seed, 0);
  Map2D m(w, h, c, std::move(tag));
  for (double& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

const Dataset& scene() {
  static const Dataset ds = [] {
    SimConfig c = SimConfig::toy();
    c.frames = 1;
    return generate(c, 1).dataset;
  }();
  return ds;
}

void BM_Sample(benchmark::State& state) {
  const auto& ds = scene();
  const int stride = static_cast<int>(state.range(0));
  const auto field = build_correspondence(ds.cameras[0], ds.scene, FieldDirection::GroundToImage, stride);
  const Map2D img = noise_map(field.source_width, field.source_height, 8, field.source_tag, 1);
  for (auto _ : state) benchmark::DoNotOptimize(sample(img, field));
}
BENCHMARK(BM_Sample)->Arg(1)->Arg(2)->Arg(4);

void BM_SampleAdjoint(benchmark::State& state) {
  const auto& ds = scene();
  const auto field = build_correspondence(ds.cameras[0], ds.scene, FieldDirection::GroundToImage, 2);
  const Map2D up = noise_map(field.target_width, field.target_height, 8, field.target_tag, 2);
  for (auto _ : state) benchmark::DoNotOptimize(sample_adjoint(up, field));
}
BENCHMARK(BM_SampleAdjoint);

void BM_Conv2d(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0));
  const Map2D in = noise_map(32, 24, ch, GridTag::ground(), 3);
  std::vector<double> w(static_cast<std::size_t>(ch) * ch * 25);
  CounterRng rng(4, 0);
  for (double& v : w) v = rng.uniform(-0.1, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(net::conv2d(in, w, ch, 5, 5));
}
BENCHMARK(BM_Conv2d)->Arg(4)->Arg(16);

void BM_RotationSelect(benchmark::State& state) {
  const auto& ds = scene();
  const RotationMasks masks =
      quantize_angle_map(view_ray_angle_map(ds.cameras[0], ds.scene), static_cast<double>(state.range(0)));
  const RotationLayerShape shape{8, 8, 5, 3};
  const Map2D in = noise_map(ds.scene.grid_width, ds.scene.grid_height, 8, GridTag::ground(), 5);
  std::vector<double> w(shape.weight_count());
  CounterRng rng(6, 0);
  for (double& v : w) v = rng.uniform(-0.1, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(rotation_select_forward(in, w, shape, masks));
}
BENCHMARK(BM_RotationSelect)->Arg(360)->Arg(45)->Arg(15);

void BM_NormalizationMap(benchmark::State& state) {
  const auto& ds = scene();
  for (auto _ : state) benchmark::DoNotOptimize(normalization_map(ds.cameras[0], ds.scene, 0.75, 4));
}
BENCHMARK(BM_NormalizationMap);

}  // namespace

BENCHMARK_MAIN();
