#include <benchmark/benchmark.h>

#include <random>

#include "rpdetect/dbb.hpp"
#include "rpdetect/ops.hpp"
#include "rpdetect/reparam.hpp"
#include "rpdetect/tape.hpp"

using namespace rpdetect;

namespace {

Tensor random_input(Shape s, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor t(s);
  for (float& v : t.mutable_data()) v = u(rng);
  return t;
}

// Args: channels, spatial size, kernel.
void BM_Conv2d(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), hw = static_cast<int>(state.range(1)),
            k = static_cast<int>(state.range(2));
  std::mt19937 rng(1);
  const ConvLayer layer = ConvLayer::random(c, c, k, rng, 1, k / 2, 1, true);
  const Tensor x = random_input({1, c, hw, hw}, rng);
  NoGradScope ng;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, layer));
  state.SetItemsProcessed(state.iterations() * 2LL * k * k * c * c * hw * hw);
}
BENCHMARK(BM_Conv2d)->Args({8, 64, 3})->Args({16, 32, 3})->Args({32, 16, 3})->Args({16, 32, 5});

// Arg 0: 0 for the four-branch training form, 1 for the merged conv.
void BM_DbbForward(benchmark::State& state) {
  std::mt19937 rng(2);
  DBBBlock block(DBBConfig{16, 16, 3, 1, 1, 0, 1e-3f}, rng);
  if (state.range(0) == 1) block.switch_to_deploy();
  const Tensor x = random_input({1, 16, 32, 32}, rng);
  NoGradScope ng;
  for (auto _ : state) benchmark::DoNotOptimize(block.forward(x, Mode::eval));
  state.SetLabel(state.range(0) ? "deploy" : "train");
}
BENCHMARK(BM_DbbForward)->Arg(0)->Arg(1);

void BM_DbbReparameterize(benchmark::State& state) {
  std::mt19937 rng(3);
  DBBBlock block(DBBConfig{16, 16, 3, 1, 1, 0, 1e-3f}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(reparameterize_dbb(block));
}
BENCHMARK(BM_DbbReparameterize);

}  // namespace
