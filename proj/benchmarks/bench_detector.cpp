#include <benchmark/benchmark.h>

#include "rpdetect/detector.hpp"
#include "rpdetect/reparam.hpp"
#include "rpdetect/tape.hpp"

using namespace rpdetect;

namespace {

const char* const kRows[] = {"baseline", "+dbb", "+dbb+head", "+dbb+head+bifpn"};

// Args: ablation row, deploy form (0/1). Input 256, batch 1.
void BM_DetectorForward(benchmark::State& state) {
  DetectorConfig c;
  apply_ablation(c, kRows[state.range(0)]);
  auto net = build_detector(c);
  if (state.range(1) == 1) reparameterize_model(*net);
  const Tensor images = probe_batch(1, c.input_size, 5);
  NoGradScope ng;
  for (auto _ : state) benchmark::DoNotOptimize(net->forward(images, Mode::eval));
  state.SetLabel(std::string(kRows[state.range(0)]) + (state.range(1) ? " deploy" : " train"));
  state.counters["fps"] = benchmark::Counter(static_cast<double>(state.iterations()), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_DetectorForward)
    ->Args({0, 0})
    ->Args({1, 0})
    ->Args({1, 1})
    ->Args({3, 0})
    ->Args({3, 1})
    ->Unit(benchmark::kMillisecond);

}  // namespace
