#pragma once

#include <cstdint>
#include <functional>

#include "rpdetect/dbb.hpp"
#include "rpdetect/detector.hpp"
#include "rpdetect/metrics.hpp"

namespace rpdetect {

/// FLOPs issued by `forward` (run once, no gradient recording). Convention:
/// convolution 2*K*K*(I/g)*O*Ho*Wo plus O*Ho*Wo bias adds, batch norm 2 per
/// element, activations and adds 1 per element, average pooling K*K per
/// output, max pooling K*K-1 per output, weighted fusion 2*E per element;
/// resampling, concat and slicing are free.
double count_flops(const std::function<void()>& forward);

/// Inference FLOPs of a detector on one S x S image.
double count_flops(Detector& net, int input_size);
/// Inference FLOPs of one DBB block on `input`-shaped data.
double count_flops(DBBBlock& block, const Shape& input);
/// Inference FLOPs of a single conv on `input`-shaped data.
double count_flops(const ConvLayer& layer, const Shape& input);

/// Per-iteration frequencies (1 / seconds) of `run` after `warmup` discarded
/// calls: min, median and max over `iters` timed calls.
FpsStats measure_fps(const std::function<void()>& run, int warmup, int iters);

/// Batch-1 inference frame rate of a detector on a fixed S x S input.
FpsStats measure_fps(Detector& net, int input_size, int warmup = 5, int iters = 30);

}  // namespace rpdetect
