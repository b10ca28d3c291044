#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "carpe/carpe.hpp"

namespace fs = std::filesystem;

namespace {

struct CliConfig {
  std::string data_root;
  std::string leave_out;
  std::string weights;
  std::string out;
  std::string json_out;
  std::string input;
  std::string baseline;
  int epochs = 80;
  int frame_batch = 64;
  double lr = 0.01;
  double clip = 5.0;
  unsigned seed = 1;
  int runs = 1000;
  int warmup = 50;
  std::string precision = "f32";
  bool quiet = false;
};

std::vector<std::string> training_scenes(const std::string& leave_out) {
  carpe::SplitPlan plan = carpe::leave_one_out_split(leave_out);
  return plan.train_scenes;
}

// Training consumes the train split plus the val split when one exists; there
// is no early stopping, so held-back validation data would only shrink the
// training set.
std::vector<carpe::FrameSample> load_training_samples(const std::string& root,
                                                      const std::vector<std::string>& scenes,
                                                      int beta, int horizon) {
  std::vector<carpe::FrameSample> samples = carpe::load_split(root, scenes, "train", beta, horizon);
  for (const std::string& scene : scenes) {
    if (fs::is_directory(fs::path(root) / scene / "val")) {
      auto extra = carpe::load_split(root, {scene}, "val", beta, horizon);
      samples.insert(samples.end(), extra.begin(), extra.end());
    }
  }
  return samples;
}

// Test samples: the held-out scene when one is named, otherwise every scene.
std::vector<carpe::FrameSample> load_test_samples(const CliConfig& cfg, int beta, int horizon) {
  std::vector<std::string> scenes;
  if (cfg.leave_out.empty()) {
    for (std::string_view scene : carpe::kScenes) {
      scenes.emplace_back(scene);
    }
  } else {
    scenes.push_back(carpe::leave_one_out_split(cfg.leave_out).held_out);
  }
  return carpe::load_split(cfg.data_root, scenes, "test", beta, horizon);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path + " for writing");
  }
  out << text;
  if (!out) {
    throw std::runtime_error("short write to " + path);
  }
}

void print_metrics(const carpe::MetricsReport& report) {
  std::printf("ADE: %.2f  FDE: %.2f  (%zu pedestrians, %zu windows)\n", report.ade, report.fde,
              report.peds, report.windows);
  for (const carpe::SceneMetrics& m : report.per_scene) {
    std::printf("  %-8s ADE %.2f  FDE %.2f  (%zu pedestrians, %zu windows)\n", m.scene.c_str(),
                m.ade, m.fde, m.peds, m.windows);
  }
}

void emit_metrics_outputs(const carpe::MetricsReport& report, const CliConfig& cfg) {
  print_metrics(report);
  if (!cfg.out.empty()) {
    std::ostringstream os;
    carpe::write_metrics_csv(report, os);
    write_text_file(cfg.out, os.str());
  }
  if (!cfg.json_out.empty()) {
    write_text_file(cfg.json_out, carpe::metrics_json(report).dump(2) + "\n");
  }
}

template <class S>
int run_train(const CliConfig& cfg) {
  const carpe::ModelConfig mc;
  auto samples = load_training_samples(cfg.data_root, training_scenes(cfg.leave_out), mc.beta,
                                       mc.horizon);
  if (samples.empty()) {
    throw std::runtime_error("no training windows found under " + cfg.data_root);
  }
  carpe::CarpeModel<S> model = carpe::make_model<S>(mc, cfg.seed);
  carpe::TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.frame_batch = cfg.frame_batch;
  tc.lr = cfg.lr;
  tc.clip_norm = cfg.clip;
  tc.seed = cfg.seed;
  tc.verbose = !cfg.quiet;
  if (!cfg.quiet) {
    std::fprintf(stderr, "training on %zu frames (leave-out %s, %d epochs, precision %s)\n",
                 samples.size(), cfg.leave_out.c_str(), cfg.epochs, cfg.precision.c_str());
  }
  carpe::TrainReport report = carpe::train(model, samples, tc);
  const std::string out_path = cfg.out.empty() ? "model.carpe" : cfg.out;
  carpe::save_weights(model, out_path);
  std::printf("wrote %s (%zu parameters, %zu optimizer steps, %.1f s)\n", out_path.c_str(),
              carpe::count_params(model), report.optimizer_steps, report.wall_seconds);
  if (!cfg.json_out.empty()) {
    nlohmann::json j = {{"weights", out_path},
                        {"leave_out", cfg.leave_out},
                        {"precision", cfg.precision},
                        {"seed", cfg.seed},
                        {"epochs", cfg.epochs},
                        {"frame_batch", cfg.frame_batch},
                        {"lr", cfg.lr},
                        {"clip", cfg.clip},
                        {"frames", report.frames},
                        {"optimizer_steps", report.optimizer_steps},
                        {"wall_seconds", report.wall_seconds},
                        {"epoch_loss", report.epoch_loss}};
    write_text_file(cfg.json_out, j.dump(2) + "\n");
  }
  return 0;
}

template <class S>
int run_eval(const CliConfig& cfg) {
  carpe::Predictor predictor;
  carpe::ModelConfig mc;
  if (!cfg.baseline.empty()) {
    if (cfg.baseline != "linear") {
      throw std::runtime_error("unknown baseline '" + cfg.baseline + "' (supported: linear)");
    }
    predictor = carpe::make_linear_predictor(mc.horizon);
  } else {
    carpe::CarpeModel<S> model = carpe::load_weights<S>(cfg.weights);
    mc = model.config;
    predictor = carpe::make_model_predictor(model);
  }
  auto samples = load_test_samples(cfg, mc.beta, mc.horizon);
  emit_metrics_outputs(carpe::evaluate(predictor, samples), cfg);
  return 0;
}

template <class S>
int run_bench(const CliConfig& cfg) {
  carpe::CarpeModel<S> model = carpe::load_weights<S>(cfg.weights);
  auto samples = load_test_samples(cfg, model.config.beta, model.config.horizon);
  carpe::BenchOptions opts;
  opts.warmup = cfg.warmup;
  opts.runs = cfg.runs;
  carpe::LatencyReport report = carpe::benchmark(
      [&model](const carpe::FrameSample& sample) { (void)carpe::forward(model, sample); }, samples,
      opts);
  std::printf("frames: %zu  mean %.1f us  median %.1f us  p99 %.1f us  fps %.2f\n",
              report.samples.size(), report.mean_us, report.median_us, report.p99_us, report.fps);
  std::printf("host: %s\n", report.host.c_str());
  if (!cfg.out.empty()) {
    std::ostringstream os;
    carpe::write_latency_csv(report, os);
    write_text_file(cfg.out, os.str());
  }
  if (!cfg.json_out.empty()) {
    write_text_file(cfg.json_out, carpe::latency_json(report).dump(2) + "\n");
  }
  return 0;
}

// One buffered frame of streaming input: annotation lines share a frame id
// until the id changes, then the whole group becomes a single buffer push.
template <class S>
class StreamPredictor {
 public:
  StreamPredictor(carpe::CarpeModel<S> model)
      : model_(std::move(model)), buffer_(model_.config.beta) {}

  void consume_line(const std::string& line, std::size_t line_no) {
    std::optional<carpe::RawAnnotation> ann;
    try {
      ann = carpe::parse_annotation_line(line);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "carpe: line %zu skipped: %s\n", line_no, e.what());
      return;
    }
    if (!ann) {
      return;  // blank or comment
    }
    if (pending_frame_ && ann->frame_id < *pending_frame_) {
      std::fprintf(stderr, "carpe: line %zu dropped: frame %ld arrived after frame %ld\n", line_no,
                   ann->frame_id, *pending_frame_);
      return;
    }
    if (pending_frame_ && ann->frame_id != *pending_frame_) {
      flush_pending();
    }
    pending_frame_ = ann->frame_id;
    pending_.push_back({ann->ped_id, ann->x, ann->y});
  }

  void finish() { flush_pending(); }

 private:
  void flush_pending() {
    if (!pending_frame_) {
      return;
    }
    std::optional<carpe::FrameSample> sample;
    try {
      sample = buffer_.push(*pending_frame_, pending_);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "carpe: frame %ld dropped: %s\n", *pending_frame_, e.what());
    }
    pending_.clear();
    pending_frame_.reset();
    if (!sample) {
      return;
    }
    const std::vector<carpe::Path> paths = carpe::forward(model_, *sample);
    for (std::size_t i = 0; i < sample->peds.size(); ++i) {
      std::printf("%ld %d", sample->window_start_frame, sample->peds[i].ped_id);
      for (const carpe::Point& pt : paths[i]) {
        std::printf(" %.17g %.17g", pt[0], pt[1]);
      }
      std::printf("\n");
    }
    std::fflush(stdout);
  }

  carpe::CarpeModel<S> model_;
  carpe::StreamBuffer buffer_;
  std::optional<long> pending_frame_;
  std::vector<carpe::Detection> pending_;
};

template <class S>
int run_predict(const CliConfig& cfg) {
  carpe::CarpeModel<S> model = carpe::load_weights<S>(cfg.weights);
  StreamPredictor<S> predictor(std::move(model));
  std::ifstream file;
  std::istream* in = &std::cin;
  if (!cfg.input.empty()) {
    file.open(cfg.input);
    if (!file) {
      throw std::runtime_error("cannot open input " + cfg.input);
    }
    in = &file;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(*in, line)) {
    predictor.consume_line(line, ++line_no);
  }
  predictor.finish();
  return 0;
}

int run_inspect(const CliConfig& cfg) {
  const carpe::WeightManifest manifest = carpe::peek_weights(cfg.weights);
  carpe::ModelConfig mc;
  mc.beta = manifest.beta;
  mc.horizon = manifest.horizon;
  mc.c1 = manifest.c1;
  mc.c2 = manifest.c2;
  carpe::CarpeModel<float> model = carpe::load_weights<float>(cfg.weights);

  std::printf("%s", carpe::render_manifest(mc, manifest.count).c_str());
  std::printf("parameters: %zu\n", carpe::count_params(model));

  const carpe::FlopEstimate one = carpe::count_flops(model, 1);
  const carpe::FlopEstimate ten = carpe::count_flops(model, 10);
  std::printf("macs per pedestrian: %zu\n", one.macs_per_ped);
  std::printf("flops per frame (P=1): %zu (%.3f MFLOPs)\n", one.frame_flops, one.frame_mflops);
  std::printf("flops per frame (P=10): %zu (%.3f MFLOPs)\n", ten.frame_flops, ten.frame_mflops);

  const auto layer = [](const char* name, const carpe::Tensor<float>& w,
                        const carpe::Tensor<float>& b) {
    std::printf("  %-10s %-14s %zu params\n", name, carpe::shape_to_string(w.shape()).c_str(),
                w.numel() + b.numel());
  };
  std::printf("layers:\n");
  layer("embed", model.graph.embed_w, model.graph.embed_b);
  layer("phi_self", model.graph.phi_self.w1, model.graph.phi_self.b1);
  layer("", model.graph.phi_self.w2, model.graph.phi_self.b2);
  layer("phi_neigh", model.graph.phi_neigh.w1, model.graph.phi_neigh.b1);
  layer("", model.graph.phi_neigh.w2, model.graph.phi_neigh.b2);
  std::printf("  %-10s %-14s 1 params\n", "eps", "[1]");
  layer("conv1", model.pred.conv1.kernel, model.pred.conv1.bias);
  layer("conv2", model.pred.conv2.kernel, model.pred.conv2.bias);
  layer("conv3", model.pred.conv3.kernel, model.pred.conv3.bias);
  layer("conv4", model.pred.conv4.kernel, model.pred.conv4.bias);
  return 0;
}

template <int (*Fn32)(const CliConfig&), int (*Fn64)(const CliConfig&)>
int dispatch(const CliConfig& cfg) {
  if (cfg.precision == "f64") {
    return Fn64(cfg);
  }
  return Fn32(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"real-time pedestrian trajectory prediction"};
  app.require_subcommand(1);
  CliConfig cfg;

  const auto add_precision = [&cfg](CLI::App* cmd) {
    cmd->add_option("--precision", cfg.precision, "arithmetic precision")
        ->check(CLI::IsMember({"f32", "f64"}))
        ->capture_default_str();
  };

  CLI::App* train = app.add_subcommand("train", "train on four scenes, hold one out");
  train->add_option("--data", cfg.data_root, "dataset root directory")->required();
  train->add_option("--leave-out", cfg.leave_out, "scene to hold out")->required();
  train->add_option("--out", cfg.out, "weight file to write (default: model.carpe)");
  train->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
  train->add_option("--batch", cfg.frame_batch, "frames per optimizer step")->capture_default_str();
  train->add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--clip", cfg.clip, "global gradient norm limit")->capture_default_str();
  train->add_option("--seed", cfg.seed, "seed for init and shuffling")->capture_default_str();
  train->add_option("--json", cfg.json_out, "training report JSON path");
  train->add_flag("--quiet", cfg.quiet, "suppress per-epoch progress");
  add_precision(train);

  CLI::App* eval = app.add_subcommand("eval", "score a model on held-out test data");
  eval->add_option("--data", cfg.data_root, "dataset root directory")->required();
  eval->add_option("--leave-out", cfg.leave_out, "test only this scene (default: all scenes)");
  eval->add_option("--weights", cfg.weights, "weight file to evaluate");
  eval->add_option("--baseline", cfg.baseline, "evaluate a reference instead (linear)");
  eval->add_option("--out", cfg.out, "per-scene metrics CSV path");
  eval->add_option("--json", cfg.json_out, "metrics JSON path");
  add_precision(eval);

  CLI::App* bench = app.add_subcommand("bench", "measure single-frame inference latency");
  bench->add_option("--weights", cfg.weights, "weight file to load")->required();
  bench->add_option("--data", cfg.data_root, "dataset root directory")->required();
  bench->add_option("--leave-out", cfg.leave_out, "draw frames from this scene's test split");
  bench->add_option("--runs", cfg.runs, "recorded iterations")->capture_default_str();
  bench->add_option("--warmup", cfg.warmup, "discarded leading iterations")->capture_default_str();
  bench->add_option("--out", cfg.out, "per-iteration latency CSV path");
  bench->add_option("--json", cfg.json_out, "latency summary JSON path");
  add_precision(bench);

  CLI::App* predict = app.add_subcommand("predict", "stream annotation lines in, predictions out");
  predict->add_option("--weights", cfg.weights, "weight file to load")->required();
  predict->add_option("--input", cfg.input, "annotation file (default: standard input)");
  add_precision(predict);

  CLI::App* inspect = app.add_subcommand("inspect", "print a weight file's architecture and cost");
  inspect->add_option("--weights", cfg.weights, "weight file to inspect")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      return dispatch<run_train<float>, run_train<double>>(cfg);
    }
    if (eval->parsed()) {
      if (cfg.weights.empty() && cfg.baseline.empty()) {
        throw std::runtime_error("eval needs --weights or --baseline");
      }
      if (!cfg.weights.empty() && !cfg.baseline.empty()) {
        throw std::runtime_error("eval takes --weights or --baseline, not both");
      }
      return dispatch<run_eval<float>, run_eval<double>>(cfg);
    }
    if (bench->parsed()) {
      return dispatch<run_bench<float>, run_bench<double>>(cfg);
    }
    if (predict->parsed()) {
      return dispatch<run_predict<float>, run_predict<double>>(cfg);
    }
    if (inspect->parsed()) {
      return run_inspect(cfg);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "carpe: %s\n", e.what());
    return 1;
  }
  return 0;
}
