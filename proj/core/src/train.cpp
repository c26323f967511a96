#include "rpdetect/train.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <numeric>
#include <random>

#include "rpdetect/error.hpp"
#include "rpdetect/tape.hpp"

namespace rpdetect {

SGD::SGD(std::vector<Tensor> params, float learning_rate, float momentum)
    : params_(std::move(params)), lr_(learning_rate), momentum_(momentum) {
  for (const Tensor& p : params_) velocity_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
}

void SGD::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void SGD::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    std::vector<float>& v = velocity_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = momentum_ * v[k] + g[k];
      w[k] -= lr_ * v[k];
    }
  }
}

double train_step(Detector& net, SGD& optimizer, const Tensor& images,
                  const std::vector<std::vector<GroundTruth>>& gts, LossBreakdown* breakdown) {
  const TrainingTargets targets = assign_targets(gts, images.shape().h);
  optimizer.zero_grad();
  GradTape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    const HeadOutput out = net.forward(images, Mode::train);
    loss = detection_loss(out, targets, net.config().loss, breakdown);
  }
  const double value = loss.item();
  if (!std::isfinite(value)) throw StateError("train: non-finite loss");
  tape.backward(loss);
  optimizer.step();
  return value;
}

std::string TrainLog::to_csv() const {
  std::string out = "epoch,loss,map50,map50_95\n";
  char buf[128];
  for (const EpochRecord& e : epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f\n", e.epoch, e.loss, e.map50, e.map50_95);
    out += buf;
  }
  return out;
}

namespace {

void check_dataset(const Dataset& data, const DetectorConfig& cfg, const char* role) {
  for (const AnnotatedImage& it : data.items) {
    if (it.image.width != cfg.input_size || it.image.height != cfg.input_size) {
      throw ValidationError(std::string("train: ") + role + " image " + it.record.file + " is " +
                            std::to_string(it.image.width) + "x" +
                            std::to_string(it.image.height) + ", model input is " +
                            std::to_string(cfg.input_size));
    }
    for (const GroundTruth& g : it.record.objects) {
      if (g.class_id < 0 || g.class_id >= cfg.num_classes) {
        throw ValidationError(std::string("train: ") + role + " image " + it.record.file +
                              " has class " + std::to_string(g.class_id) + " but model has " +
                              std::to_string(cfg.num_classes));
      }
    }
  }
}

}  // namespace

TrainLog train(Detector& net, const Dataset& train_set, const Dataset& val,
               const TrainOptions& options) {
  const DetectorConfig& cfg = net.config();
  if (train_set.empty()) throw ValidationError("train: empty training set");
  check_dataset(train_set, cfg, "training");
  check_dataset(val, cfg, "validation");

  enable_gradients(net);
  SGD optimizer(parameters(net), cfg.learning_rate, cfg.momentum);
  TrainLog log;
  std::vector<int> order(train_set.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
      total += train_step(net, optimizer, to_batch(train_set, idx), batch_targets(train_set, idx));
      ++steps;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = total / steps;
    if (!val.empty() && (options.evaluate_each_epoch || epoch == cfg.epochs)) {
      const DetectionMetrics m = evaluate_model(net, val);
      rec.map50 = m.map50;
      rec.map50_95 = m.map50_95;
    }
    log.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  return log;
}

ImageDetections predict(Detector& net, const Dataset& data, const PostprocessOptions& post,
                        int batch) {
  if (batch < 1) throw ConfigError("predict: batch must be positive");
  NoGradScope no_grad;
  ImageDetections out;
  out.reserve(data.size());
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t end = std::min(data.size(), start + batch);
    std::vector<int> idx(end - start);
    std::iota(idx.begin(), idx.end(), static_cast<int>(start));
    const Tensor images = to_batch(data, idx);
    const HeadOutput head = net.forward(images, Mode::eval);
    for (auto& dets : postprocess(head, images.shape().h, post)) out.push_back(std::move(dets));
  }
  return out;
}

DetectionMetrics evaluate_model(Detector& net, const Dataset& data, const EvalOptions& options) {
  const ImageDetections dets = predict(net, data, map_postprocess());
  ImageGroundTruths gts;
  for (const AnnotatedImage& it : data.items) gts.push_back(it.record.objects);
  return evaluate_detections(dets, gts, net.config().num_classes, options);
}

}  // namespace rpdetect
