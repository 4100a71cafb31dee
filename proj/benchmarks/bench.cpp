#include <benchmark/benchmark.h>

#include <cmath>

#include "retinamatch/geometry.hpp"
#include "retinamatch/matching.hpp"
#include "retinamatch/model.hpp"
#include "retinamatch/rng.hpp"

using namespace retina;

namespace {

Grid random_grid(int h, int w, uint64_t seed) {
  Grid g(h, w);
  Rng rng(seed);
  for (auto& v : g.v) v = float(rng.uniform());
  return g;
}

std::vector<std::vector<float>> random_descriptors(int n, int d, uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<float>> out(static_cast<size_t>(n), std::vector<float>(static_cast<size_t>(d)));
  for (auto& row : out) {
    double norm2 = 0.0;
    for (auto& v : row) {
      v = float(rng.normal());
      norm2 += double(v) * v;
    }
    const float inv = float(1.0 / std::sqrt(norm2 + 1e-8));
    for (auto& v : row) v *= inv;
  }
  return out;
}

void BM_ModelForward(benchmark::State& state) {
  const int size = int(state.range(0));
  ModelConfig cfg;
  cfg.descriptor_dim = 64;  // keeps a single-core run affordable
  Model model(cfg, 7);
  ImageGrid img(size, size);
  Rng rng(11);
  for (auto& v : img.v) v = float(rng.uniform());
  for (auto _ : state) {
    ForwardResult out = model.forward(img);
    benchmark::DoNotOptimize(out.P.v.data());
  }
  state.SetItemsProcessed(state.iterations());
}

void BM_Nms(benchmark::State& state) {
  const Grid map = random_grid(512, 512, 3);
  for (auto _ : state) {
    KeypointSet kps = nms(map, 10, 0.5);
    benchmark::DoNotOptimize(kps.data());
  }
}

void BM_WarpGrid(benchmark::State& state) {
  const Grid img = random_grid(512, 512, 5);
  HomographySamplerConfig scfg;
  Rng rng(1);
  const Homography H = sample_homography(scfg, 512, 512, rng);
  for (auto _ : state) {
    Grid out = warp_grid(img, H, 512, 512);
    benchmark::DoNotOptimize(out.v.data());
  }
}

void BM_MatchDescriptors(benchmark::State& state) {
  const int n = int(state.range(0));
  const auto a = random_descriptors(n, 64, 21);
  const auto b = random_descriptors(n, 64, 22);
  for (auto _ : state) {
    MatchSet m = match_descriptors(a, b, 0.9, false);
    benchmark::DoNotOptimize(m.matches.data());
  }
}

void BM_EstimateHomography(benchmark::State& state) {
  Rng rng(9);
  const Homography H = Homography::translation(12.0, -7.0);
  KeypointSet ka, kb;
  MatchSet ms;
  for (int i = 0; i < 300; ++i) {
    const int x = int(rng.uniform(30.0, 700.0));
    const int y = int(rng.uniform(30.0, 700.0));
    ka.push_back({x, y, 1.f});
    Eigen::Vector2d q = H.apply(x, y);
    if (i % 4 == 0) q += Eigen::Vector2d(rng.uniform(-80, 80), rng.uniform(-80, 80));
    kb.push_back({int(std::lround(q.x())), int(std::lround(q.y())), 1.f});
    ms.matches.push_back({i, i, 0.0});
  }
  for (auto _ : state) {
    HomographyEstimate est = estimate_homography(ms, ka, kb);
    benchmark::DoNotOptimize(est.inlier_count);
  }
}

}  // namespace

BENCHMARK(BM_ModelForward)->Arg(256)->Unit(benchmark::kMillisecond)->Iterations(2);
BENCHMARK(BM_Nms)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_WarpGrid)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MatchDescriptors)->Arg(500)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EstimateHomography)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
