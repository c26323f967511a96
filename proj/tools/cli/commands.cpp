#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>

#include "CLI11.hpp"
#include "cli.hpp"
#include "manifest.hpp"
#include "rpdetect/cost.hpp"
#include "rpdetect/error.hpp"
#include "rpdetect/pixmap.hpp"
#include "rpdetect/synthetic.hpp"
#include "rpdetect/train.hpp"
#include "rpdetect/weights.hpp"

namespace rpdetect::cli {

namespace fs = std::filesystem;

namespace {

constexpr float kEquivalenceTolerance = 1e-3f;
constexpr std::uint64_t kProbeSeed = 0x5eed;

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

RunManifest start_manifest(const std::string& command, const std::vector<std::string>& args) {
  RunManifest m;
  m.command = command;
  m.args = args;
  m.started_at = utc_timestamp();
  return m;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

void copy_bytes(const std::string& from, const std::string& to) {
  std::ifstream in(from, std::ios::binary);
  if (!in) throw IoError("cannot open " + from);
  std::ofstream out(to, std::ios::binary);
  if (!out) throw IoError("cannot write " + to);
  out << in.rdbuf();
  if (!out) throw IoError("write failed: " + to);
}

double gflops(Detector& net) { return count_flops(net, net.config().input_size) / 1e9; }

// ---------------------------------------------------------------------------

struct GenArgs {
  std::uint64_t seed = 0;
  int n = 200;
  int size = 256;
  int classes = 2;
  std::string out;
};

int cmd_gen(const GenArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest manifest = start_manifest("gen", argv);
  manifest.seed = a.seed;
  SyntheticConfig sc;
  sc.seed = a.seed;
  sc.n_images = a.n;
  sc.size = a.size;
  sc.num_classes = a.classes;
  sc.max_scale = std::min(sc.max_scale, a.size);
  sc.min_scale = std::min(sc.min_scale, a.size / 8 - 1);
  const Dataset data = generate_synthetic(sc);
  save_dataset(a.out, data);
  const std::string ann = (fs::path(a.out) / kAnnotationFile).string();
  manifest.add_output("annotations", ann);
  manifest.write((fs::path(a.out) / "manifest.json").string());
  std::size_t objects = 0;
  for (const AnnotatedImage& it : data.items) objects += it.record.objects.size();
  out << "wrote " << data.size() << " images, " << objects << " objects to " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string val;
  std::string config;
  std::string ablation;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest manifest = start_manifest("train", argv);
  DetectorConfig cfg;
  if (!a.config.empty()) {
    cfg = load_config(a.config);
    manifest.add_input("config", a.config);
  }
  if (!a.ablation.empty()) apply_ablation(cfg, a.ablation);
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.seed) cfg.seed = *a.seed;

  const Dataset train_set = load_dataset(a.data);
  manifest.add_input("train_annotations", (fs::path(a.data) / kAnnotationFile).string());
  Dataset val;
  if (!a.val.empty()) {
    val = load_dataset(a.val);
    manifest.add_input("val_annotations", (fs::path(a.val) / kAnnotationFile).string());
  }
  if (train_set.num_classes > 0) cfg.num_classes = train_set.num_classes;
  cfg.validate();
  manifest.seed = cfg.seed;
  manifest.config = format_config(cfg);

  out << "train: " << ablation_name(cfg) << ", " << train_set.size() << " images, " << cfg.epochs
      << " epochs, seed " << cfg.seed << "\n";
  auto net = build_detector(cfg);
  TrainOptions options;
  options.evaluate_each_epoch = !val.empty();
  options.on_epoch = [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " loss " << fmt("%.4f", r.loss);
    if (!val.empty()) out << " map50 " << fmt("%.4f", r.map50) << " map50_95 " << fmt("%.4f", r.map50_95);
    out << "\n" << std::flush;
  };
  const TrainLog log = train(*net, train_set, val, options);

  ensure_dir(a.out);
  const std::string weights = (fs::path(a.out) / "weights.rpdt").string();
  const std::string csv = (fs::path(a.out) / "epochs.csv").string();
  const std::string config = (fs::path(a.out) / "config.txt").string();
  save_weights(weights, *net);
  write_text(csv, log.to_csv());
  write_text(config, format_config(cfg));
  manifest.add_output("weights", weights);
  manifest.add_output("epochs_csv", csv);
  manifest.add_output("config", config);
  manifest.write((fs::path(a.out) / "manifest.json").string());
  out << "wrote " << weights << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct ReparamArgs {
  std::string in;
  std::string out;
};

int cmd_reparam(const ReparamArgs& a, const std::vector<std::string>& argv, std::ostream& out,
                std::ostream& err) {
  RunManifest manifest = start_manifest("reparam", argv);
  auto train_net = load_weights(a.in);
  manifest.add_input("weights_in", a.in);
  manifest.seed = train_net->config().seed;
  manifest.config = format_config(train_net->config());

  if (train_net->deployed()) {
    err << "warning: " << a.in << " is already in deploy form; copied unchanged\n";
    copy_bytes(a.in, a.out);
  } else {
    auto deploy_net = train_net->clone();
    const int rewritten = reparameterize_model(*deploy_net);
    const int size = train_net->config().input_size;
    const float dev =
        max_logit_deviation(*train_net, *deploy_net, probe_batch(2, size, kProbeSeed));
    out << "merged blocks " << rewritten << "\n";
    out << "equivalence max|Δ| " << fmt("%.3e", dev) << " (tolerance "
        << fmt("%.0e", kEquivalenceTolerance) << ")\n";
    if (!(dev <= kEquivalenceTolerance)) {
      throw StateError("reparam: deploy-form logits deviate by " + fmt("%.3e", dev));
    }
    const std::int64_t p0 = count_params(*train_net), p1 = count_params(*deploy_net);
    const double g0 = gflops(*train_net), g1 = gflops(*deploy_net);
    out << "params " << p0 << " -> " << p1 << " (" << (p1 - p0) << ")\n";
    out << "gflops " << fmt("%.6f", g0) << " -> " << fmt("%.6f", g1) << " ("
        << fmt("%+.6f", g1 - g0) << ")\n";
    save_weights(a.out, *deploy_net);
  }
  manifest.add_output("weights_out", a.out);
  manifest.write(a.out + ".manifest.json");
  out << "wrote " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string weights;
  std::string data;
  double iou = 0.5;
  double conf = 0.25;
  std::string curve_out;
  bool oracle = false;
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest manifest = start_manifest("eval", argv);
  if (!(a.iou > 0.0 && a.iou <= 1.0)) throw ConfigError("eval: --iou must be in (0, 1]");
  if (!a.oracle && a.weights.empty()) throw ConfigError("eval: --weights is required without --oracle");
  const Dataset data = load_dataset(a.data);
  manifest.add_input("annotations", (fs::path(a.data) / kAnnotationFile).string());

  ImageGroundTruths gts;
  for (const AnnotatedImage& it : data.items) gts.push_back(it.record.objects);
  ImageDetections dets;
  MetricsReport report;
  int num_classes = data.num_classes;
  for (const auto& list : gts) {
    for (const GroundTruth& g : list) num_classes = std::max(num_classes, g.class_id + 1);
  }
  if (a.oracle) {
    for (const auto& list : gts) {
      std::vector<Detection> d;
      for (const GroundTruth& g : list) d.push_back({g.box, 1.0f, g.class_id});
      dets.push_back(std::move(d));
    }
  } else {
    auto net = load_weights(a.weights);
    manifest.add_input("weights", a.weights);
    manifest.seed = net->config().seed;
    manifest.config = format_config(net->config());
    num_classes = net->config().num_classes;
    dets = predict(*net, data, map_postprocess());
    report.params = count_params(*net);
    report.gflops = gflops(*net);
  }
  EvalOptions options;
  options.conf_threshold = a.conf;
  options.pr_iou = a.iou;
  options.curve_iou = a.iou;
  const DetectionMetrics m = evaluate_detections(dets, gts, num_classes, options);
  report.precision = m.precision;
  report.recall = m.recall;
  report.map50 = m.map50;
  report.map50_95 = m.map50_95;
  report.validate();
  out << report.to_key_values();
  for (int c = 0; c < static_cast<int>(m.ap50_per_class.size()); ++c) {
    if (m.ap50_per_class[c] >= 0.0) out << "ap50_class" << c << "=" << fmt("%.6f", m.ap50_per_class[c]) << "\n";
  }
  if (!a.curve_out.empty()) {
    write_pr_curves(a.curve_out, m.curves);
    manifest.add_output("pr_curves", a.curve_out);
    manifest.write(a.curve_out + ".manifest.json");
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string weights;
  int size = 0;
  int iters = 30;
  int warmup = 3;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  if (a.iters < 1) throw ConfigError("bench: --iters must be at least 1");
  if (a.warmup < 0) throw ConfigError("bench: --warmup must be non-negative");
  auto net = load_weights(a.weights);
  const int size = a.size > 0 ? a.size : net->config().input_size;
  MetricsReport r;
  r.params = count_params(*net);
  r.gflops = count_flops(*net, size) / 1e9;
  r.fps = measure_fps(*net, size, a.warmup, a.iters);
  out << "form=" << (net->deployed() ? "deploy" : "train") << "\n";
  out << "size=" << size << "\n";
  out << "params=" << r.params << "\n";
  out << "gflops=" << fmt("%.6f", r.gflops) << "\n";
  out << "fps_min=" << fmt("%.3f", r.fps.min) << "\n";
  out << "fps_median=" << fmt("%.3f", r.fps.median) << "\n";
  out << "fps_max=" << fmt("%.3f", r.fps.max) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct RenderArgs {
  std::string weights;
  std::string data;
  std::string out;
  double conf = 0.25;
};

constexpr Rgb kPalette[] = {{255, 64, 64}, {64, 255, 64}, {64, 128, 255}, {255, 255, 0}, {255, 0, 255}};

void draw_detections(Image& img, const std::vector<Detection>& dets) {
  for (const Detection& d : dets) {
    const Rgb color = kPalette[static_cast<std::size_t>(d.class_id) % std::size(kPalette)];
    const int x1 = static_cast<int>(std::floor(d.box.x1)), y1 = static_cast<int>(std::floor(d.box.y1));
    const int x2 = static_cast<int>(std::ceil(d.box.x2)), y2 = static_cast<int>(std::ceil(d.box.y2));
    draw_rect(img, x1, y1, x2, y2, color);
    const int ty = y1 >= 6 ? y1 - 6 : y1 + 2;
    draw_text(img, x1 + 1, ty, fmt("%.2f", d.score), color);
  }
}

int cmd_render(const RenderArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  if (!(a.conf >= 0.0 && a.conf <= 1.0)) throw ConfigError("render: --conf must be in [0, 1]");
  RunManifest manifest = start_manifest("render", argv);
  auto net = load_weights(a.weights);
  manifest.add_input("weights", a.weights);
  manifest.seed = net->config().seed;
  manifest.config = format_config(net->config());
  const Dataset data = load_dataset(a.data);
  manifest.add_input("annotations", (fs::path(a.data) / kAnnotationFile).string());

  PostprocessOptions post;
  post.conf_threshold = static_cast<float>(a.conf);
  const ImageDetections dets = predict(*net, data, post);
  std::size_t drawn = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Image img = data.items[i].image;
    draw_detections(img, dets[i]);
    drawn += dets[i].size();
    const fs::path file = fs::path(a.out) / data.items[i].record.file;
    ensure_dir(file.parent_path().string());
    write_ppm(file.string(), img);
    manifest.add_output("image", file.string());
  }
  ensure_dir(a.out);
  manifest.write((fs::path(a.out) / "manifest.json").string());
  out << "rendered " << data.size() << " images, " << drawn << " boxes to " << a.out << "\n";
  return kOk;
}

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::shape: return kShape;
    case ErrorCategory::config: return kConfig;
    case ErrorCategory::io: return kIo;
    case ErrorCategory::format: return kFormat;
    case ErrorCategory::validation: return kValidation;
    case ErrorCategory::state: return kState;
  }
  return kInternal;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reparameterized object detector: data, training, deployment and evaluation",
               "rpdetect"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic shapes dataset");
  g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  g->add_option("--n", gen.n, "Number of images")->capture_default_str()->check(CLI::NonNegativeNumber);
  g->add_option("--size", gen.size, "Square image side in pixels")->capture_default_str();
  g->add_option("--classes", gen.classes, "Number of shape classes (1-5)")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a detector");
  t->add_option("--data", tr.data, "Training dataset directory")->required();
  t->add_option("--val", tr.val, "Validation dataset directory (per-epoch mAP)");
  t->add_option("--config", tr.config, "key=value config file");
  t->add_option("--ablation", tr.ablation, "Cumulative ablation row")
      ->check(CLI::IsMember({"baseline", "+dbb", "+dbb+head", "+dbb+head+bifpn"}));
  t->add_option("--epochs", tr.epochs, "Override the configured epoch count")->check(CLI::PositiveNumber);
  t->add_option("--seed", tr.seed, "Override the configured seed");
  t->add_option("--out", tr.out, "Output directory")->required();

  ReparamArgs rp;
  auto* r = app.add_subcommand("reparam", "Convert train-form weights to deploy form");
  r->add_option("--weights-in", rp.in, "Train-form weights")->required();
  r->add_option("--weights-out", rp.out, "Deploy-form weights to write")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate detection metrics on a dataset");
  e->add_option("--weights", ev.weights, "Weights file");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--iou", ev.iou, "IoU threshold for P/R and the PR curve")->capture_default_str();
  e->add_option("--conf", ev.conf, "Confidence threshold for P/R")->capture_default_str();
  e->add_option("--curve-out", ev.curve_out, "Write PR curves as CSV");
  e->add_flag("--oracle", ev.oracle, "Replay ground truth as detections");

  BenchArgs bn;
  auto* b = app.add_subcommand("bench", "Report Params, GFLOPs and FPS");
  b->add_option("--weights", bn.weights, "Weights file")->required();
  b->add_option("--size", bn.size, "Input side (default: configured input size)");
  b->add_option("--iters", bn.iters, "Timed iterations")->capture_default_str();
  b->add_option("--warmup", bn.warmup, "Untimed warmup iterations")->capture_default_str();

  RenderArgs rd;
  auto* d = app.add_subcommand("render", "Draw detections onto dataset images");
  d->add_option("--weights", rd.weights, "Weights file")->required();
  d->add_option("--data", rd.data, "Dataset directory")->required();
  d->add_option("--out", rd.out, "Output directory")->required();
  d->add_option("--conf", rd.conf, "Confidence threshold")->capture_default_str();

  std::vector<const char*> argv;
  for (const std::string& s : args) argv.push_back(s.c_str());
  if (argv.empty()) argv.push_back("rpdetect");
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error[usage]: " << one_line(ex.what()) << "\n";
    return kUsage;
  }

  const std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
  try {
    if (g->parsed()) return cmd_gen(gen, rest, out);
    if (t->parsed()) return cmd_train(tr, rest, out);
    if (r->parsed()) return cmd_reparam(rp, rest, out, err);
    if (e->parsed()) return cmd_eval(ev, rest, out);
    if (b->parsed()) return cmd_bench(bn, out);
    if (d->parsed()) return cmd_render(rd, rest, out);
  } catch (const Error& ex) {
    err << "error[" << to_string(ex.category()) << "]: " << one_line(ex.what()) << "\n";
    return exit_code(ex.category());
  } catch (const std::exception& ex) {
    err << "error[internal]: " << one_line(ex.what()) << "\n";
    return kInternal;
  }
  err << "error[usage]: no command\n";
  return kUsage;
}

}  // namespace rpdetect::cli
