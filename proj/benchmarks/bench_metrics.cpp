#include <benchmark/benchmark.h>

#include <random>

#include "rpdetect/metrics.hpp"
#include "rpdetect/postprocess.hpp"

using namespace rpdetect;

namespace {

std::vector<Detection> random_detections(int n, std::mt19937& rng) {
  std::uniform_real_distribution<float> pos(0, 220), ext(4, 36), score(0, 1);
  std::uniform_int_distribution<int> cls(0, 1);
  std::vector<Detection> dets;
  for (int i = 0; i < n; ++i) {
    const float x = pos(rng), y = pos(rng);
    dets.push_back({{x, y, x + ext(rng), y + ext(rng)}, score(rng), cls(rng)});
  }
  return dets;
}

void BM_Nms(benchmark::State& state) {
  std::mt19937 rng(7);
  const auto dets = random_detections(static_cast<int>(state.range(0)), rng);
  for (auto _ : state) benchmark::DoNotOptimize(nms(dets, 0.6f));
}
BENCHMARK(BM_Nms)->Arg(50)->Arg(500)->Arg(2000);

// 50 images, Arg(0) detections per image, 5 ground truths per image.
void BM_EvaluateDetections(benchmark::State& state) {
  std::mt19937 rng(8);
  ImageDetections dets;
  ImageGroundTruths gts;
  for (int i = 0; i < 50; ++i) {
    dets.push_back(random_detections(static_cast<int>(state.range(0)), rng));
    std::vector<GroundTruth> g;
    for (const Detection& d : random_detections(5, rng)) g.push_back({d.class_id, d.box});
    gts.push_back(g);
  }
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_detections(dets, gts, 2));
}
BENCHMARK(BM_EvaluateDetections)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
