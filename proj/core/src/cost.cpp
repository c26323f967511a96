#include "rpdetect/cost.hpp"

#include <algorithm>
#include <chrono>
#include <vector>

#include "rpdetect/error.hpp"
#include "rpdetect/ops.hpp"
#include "rpdetect/tape.hpp"

namespace rpdetect {

double count_flops(const std::function<void()>& forward) {
  NoGradScope no_grad;
  FlopCounter counter;
  forward();
  return counter.total();
}

double count_flops(Detector& net, int input_size) {
  const Tensor x(Shape{1, 3, input_size, input_size}, 0.5f);
  return count_flops([&] { net.forward(x, Mode::eval); });
}

double count_flops(DBBBlock& block, const Shape& input) {
  const Tensor x(input, 0.5f);
  return count_flops([&] { block.forward(x, Mode::eval); });
}

double count_flops(const ConvLayer& layer, const Shape& input) {
  const Tensor x(input, 0.5f);
  return count_flops([&] { conv2d(x, layer); });
}

FpsStats measure_fps(const std::function<void()>& run, int warmup, int iters) {
  if (warmup < 0 || iters < 1) throw ConfigError("measure_fps: need warmup >= 0 and iters >= 1");
  for (int i = 0; i < warmup; ++i) run();
  std::vector<double> rates;
  rates.reserve(iters);
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rates.push_back(1.0 / std::max(s, 1e-9));
  }
  std::sort(rates.begin(), rates.end());
  const std::size_t n = rates.size();
  const double median = n % 2 ? rates[n / 2] : 0.5 * (rates[n / 2 - 1] + rates[n / 2]);
  return {rates.front(), median, rates.back()};
}

FpsStats measure_fps(Detector& net, int input_size, int warmup, int iters) {
  const Tensor x(Shape{1, 3, input_size, input_size}, 0.5f);
  NoGradScope no_grad;
  return measure_fps([&] { net.forward(x, Mode::eval); }, warmup, iters);
}

}  // namespace rpdetect
