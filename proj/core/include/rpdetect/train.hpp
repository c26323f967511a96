#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rpdetect/dataset.hpp"
#include "rpdetect/detector.hpp"
#include "rpdetect/loss.hpp"
#include "rpdetect/metrics.hpp"
#include "rpdetect/postprocess.hpp"

namespace rpdetect {

/// Heavy-ball SGD without weight decay: v = momentum * v + g; p -= lr * v.
class SGD {
 public:
  SGD(std::vector<Tensor> params, float learning_rate, float momentum);

  void zero_grad();
  void step();
  float learning_rate() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> velocity_;
  float lr_;
  float momentum_;
};

/// One forward/backward/update on a prepared batch; returns the loss value.
double train_step(Detector& net, SGD& optimizer, const Tensor& images,
                  const std::vector<std::vector<GroundTruth>>& gts,
                  LossBreakdown* breakdown = nullptr);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;  // mean over the epoch's steps
  double map50 = 0.0;
  double map50_95 = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  /// Header epoch,loss,map50,map50_95 and one row per epoch.
  std::string to_csv() const;
};

struct TrainOptions {
  /// Validate after every epoch (otherwise only after the last one).
  bool evaluate_each_epoch = true;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Evaluation-time postprocessing used for mAP: a low confidence floor so
/// the ranked list covers the whole PR curve.
inline PostprocessOptions map_postprocess() { return {0.001f, 0.6f, 100}; }

/// Trains with the detector's own config (epochs, batch size, learning rate,
/// momentum, seed). Epoch e visits the training images in an order shuffled
/// by seed and e, so runs are reproducible. `val` may be empty, in which case
/// mAP columns are 0.
TrainLog train(Detector& net, const Dataset& train_set, const Dataset& val,
               const TrainOptions& options = {});

/// Inference over a dataset in eval mode, batches of `batch` images.
ImageDetections predict(Detector& net, const Dataset& data, const PostprocessOptions& post,
                        int batch = 16);

/// predict() with map_postprocess() followed by evaluate_detections().
DetectionMetrics evaluate_model(Detector& net, const Dataset& data,
                                const EvalOptions& options = {});

}  // namespace rpdetect
