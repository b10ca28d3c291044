#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "carpe/dataio.hpp"
#include "carpe/model.hpp"

namespace carpe {

namespace detail {

inline void check_paths(const std::vector<Path>& gt, const std::vector<Path>& pred) {
  if (gt.empty() || gt.size() != pred.size()) {
    throw std::invalid_argument("metrics: need matching non-empty trajectory sets, got " +
                                std::to_string(gt.size()) + " and " + std::to_string(pred.size()));
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i].empty() || gt[i].size() != pred[i].size()) {
      throw std::invalid_argument("metrics: trajectory " + std::to_string(i) +
                                  " length mismatch: " + std::to_string(gt[i].size()) + " vs " +
                                  std::to_string(pred[i].size()));
    }
  }
}

inline double dist(const Point& a, const Point& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

}  // namespace detail

// Mean L2 distance over every (pedestrian, step) pair.
inline double ade(const std::vector<Path>& gt, const std::vector<Path>& pred) {
  detail::check_paths(gt, pred);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    for (std::size_t t = 0; t < gt[i].size(); ++t) {
      sum += detail::dist(gt[i][t], pred[i][t]);
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

// Mean L2 distance at the final step only.
inline double fde(const std::vector<Path>& gt, const std::vector<Path>& pred) {
  detail::check_paths(gt, pred);
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    sum += detail::dist(gt[i].back(), pred[i].back());
  }
  return sum / static_cast<double>(gt.size());
}

// Constant-velocity reference: an ordinary least-squares line per coordinate
// over the observed steps (abscissa 1..beta), evaluated at beta+1..beta+T.
inline Path linear_baseline(const Path& observed, int horizon) {
  const std::size_t beta = observed.size();
  if (beta < 2) {
    throw std::invalid_argument("linear_baseline: need at least 2 observed points");
  }
  if (horizon < 1) {
    throw std::invalid_argument("linear_baseline: horizon must be >= 1");
  }
  const double n = static_cast<double>(beta);
  const double mean_t = (n + 1.0) / 2.0;
  double var_t = 0.0;
  for (std::size_t k = 0; k < beta; ++k) {
    const double d = static_cast<double>(k + 1) - mean_t;
    var_t += d * d;
  }
  Path out(static_cast<std::size_t>(horizon));
  for (int c = 0; c < 2; ++c) {
    double mean_x = 0.0;
    for (std::size_t k = 0; k < beta; ++k) {
      mean_x += observed[k][c];
    }
    mean_x /= n;
    double cov = 0.0;
    for (std::size_t k = 0; k < beta; ++k) {
      cov += (static_cast<double>(k + 1) - mean_t) * (observed[k][c] - mean_x);
    }
    const double slope = cov / var_t;
    const double intercept = mean_x - slope * mean_t;
    for (int t = 0; t < horizon; ++t) {
      out[static_cast<std::size_t>(t)][c] = intercept + slope * (n + 1.0 + t);
    }
  }
  return out;
}

// Predicts absolute paths for one sample, orders matching sample.peds.
using Predictor = std::function<std::vector<Path>(const FrameSample&)>;

template <class S>
Predictor make_model_predictor(const CarpeModel<S>& model) {
  return [model](const FrameSample& sample) { return forward(model, sample); };
}

inline Predictor make_linear_predictor(int horizon) {
  return [horizon](const FrameSample& sample) {
    std::vector<Path> out;
    out.reserve(sample.peds.size());
    for (const PedWindow& ped : sample.peds) {
      out.push_back(linear_baseline(ped.observed_abs, horizon));
    }
    return out;
  };
}

struct SceneMetrics {
  std::string scene;
  double ade = 0.0;
  double fde = 0.0;
  std::size_t peds = 0;     // (pedestrian, window) pairs scored
  std::size_t windows = 0;  // frame samples scored
};

struct MetricsReport {
  double ade = 0.0;
  double fde = 0.0;
  std::size_t peds = 0;
  std::size_t windows = 0;
  std::vector<SceneMetrics> per_scene;
};

// Scores a predictor over test samples. Aggregation is global: every
// (pedestrian, window) pair counts once, regardless of how full its frame
// was. Samples must carry futures.
inline MetricsReport evaluate(const Predictor& predict, const std::vector<FrameSample>& samples) {
  if (samples.empty()) {
    throw std::invalid_argument("evaluate: no test samples");
  }
  struct Acc {
    double ade_sum = 0.0;
    double fde_sum = 0.0;
    std::size_t steps = 0;
    std::size_t peds = 0;
    std::size_t windows = 0;
  };
  Acc global;
  std::map<std::string, Acc> by_scene;
  for (const FrameSample& sample : samples) {
    const std::vector<Path> pred = predict(sample);
    if (pred.size() != sample.peds.size()) {
      throw std::runtime_error("evaluate: predictor returned " + std::to_string(pred.size()) +
                               " paths for " + std::to_string(sample.peds.size()) + " pedestrians");
    }
    Acc& scene = by_scene[sample.scene_id];
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const Path& future = sample.peds[i].future_abs;
      if (future.empty() || future.size() != pred[i].size()) {
        throw std::invalid_argument("evaluate: sample futures do not match prediction horizon");
      }
      double path_sum = 0.0;
      for (std::size_t t = 0; t < future.size(); ++t) {
        path_sum += detail::dist(future[t], pred[i][t]);
      }
      const double final_dist = detail::dist(future.back(), pred[i].back());
      for (Acc* acc : {&global, &scene}) {
        acc->ade_sum += path_sum;
        acc->fde_sum += final_dist;
        acc->steps += future.size();
        acc->peds += 1;
      }
    }
    global.windows += 1;
    scene.windows += 1;
  }
  MetricsReport report;
  report.ade = global.ade_sum / static_cast<double>(global.steps);
  report.fde = global.fde_sum / static_cast<double>(global.peds);
  report.peds = global.peds;
  report.windows = global.windows;
  for (const auto& [name, acc] : by_scene) {
    SceneMetrics m;
    m.scene = name;
    m.ade = acc.ade_sum / static_cast<double>(acc.steps);
    m.fde = acc.fde_sum / static_cast<double>(acc.peds);
    m.peds = acc.peds;
    m.windows = acc.windows;
    report.per_scene.push_back(std::move(m));
  }
  return report;
}

struct BenchOptions {
  int warmup = 50;
  int runs = 1000;
};

struct LatencySample {
  int iteration = 0;
  int num_peds = 0;
  double latency_us = 0.0;
};

struct LatencyReport {
  std::vector<LatencySample> samples;
  double mean_us = 0.0;
  double median_us = 0.0;
  double p99_us = 0.0;
  double fps = 0.0;  // 1e6 / mean_us
  std::string host;
};

inline std::string host_description() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    const std::string key = "model name";
    if (line.compare(0, key.size(), key) == 0) {
      const std::size_t colon = line.find(':');
      if (colon != std::string::npos) {
        std::size_t begin = colon + 1;
        while (begin < line.size() && line[begin] == ' ') {
          ++begin;
        }
        return line.substr(begin);
      }
    }
  }
  return "unknown cpu";
}

// Times step(sample) one frame at a time, cycling through the given samples.
// The first `warmup` calls are discarded; the next `runs` are recorded.
inline LatencyReport benchmark(const std::function<void(const FrameSample&)>& step,
                               const std::vector<FrameSample>& samples, const BenchOptions& opts) {
  if (samples.empty()) {
    throw std::invalid_argument("benchmark: no samples");
  }
  if (opts.warmup < 0 || opts.runs < 1) {
    throw std::invalid_argument("benchmark: warmup must be >= 0 and runs >= 1");
  }
  LatencyReport report;
  report.samples.reserve(static_cast<std::size_t>(opts.runs));
  const int total = opts.warmup + opts.runs;
  for (int i = 0; i < total; ++i) {
    const FrameSample& sample = samples[static_cast<std::size_t>(i) % samples.size()];
    const auto t0 = std::chrono::steady_clock::now();
    step(sample);
    const auto t1 = std::chrono::steady_clock::now();
    if (i < opts.warmup) {
      continue;
    }
    LatencySample s;
    s.iteration = i - opts.warmup;
    s.num_peds = static_cast<int>(sample.peds.size());
    s.latency_us = std::chrono::duration<double, std::micro>(t1 - t0).count();
    report.samples.push_back(s);
  }
  std::vector<double> sorted;
  sorted.reserve(report.samples.size());
  double sum = 0.0;
  for (const LatencySample& s : report.samples) {
    sorted.push_back(s.latency_us);
    sum += s.latency_us;
  }
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  report.mean_us = sum / static_cast<double>(n);
  report.median_us = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  const std::size_t p99_rank = static_cast<std::size_t>(
      std::min<double>(static_cast<double>(n) - 1.0, std::ceil(0.99 * static_cast<double>(n)) - 1.0));
  report.p99_us = sorted[p99_rank];
  report.fps = 1.0e6 / report.mean_us;
  report.host = host_description();
  return report;
}

// Serialization used by the command-line tools and kept here so library users
// get identical files.

inline void write_metrics_csv(const MetricsReport& report, std::ostream& out) {
  out << "scene,ade,fde,peds,windows\n";
  for (const SceneMetrics& m : report.per_scene) {
    out << m.scene << ',' << m.ade << ',' << m.fde << ',' << m.peds << ',' << m.windows << '\n';
  }
}

inline nlohmann::json metrics_json(const MetricsReport& report) {
  nlohmann::json scenes = nlohmann::json::array();
  for (const SceneMetrics& m : report.per_scene) {
    scenes.push_back({{"scene", m.scene}, {"ade", m.ade}, {"fde", m.fde}, {"peds", m.peds},
                      {"windows", m.windows}});
  }
  return {{"ade", report.ade}, {"fde", report.fde}, {"peds", report.peds},
          {"windows", report.windows}, {"scenes", scenes}};
}

inline void write_latency_csv(const LatencyReport& report, std::ostream& out) {
  out << "iteration,P,latency_us\n";
  for (const LatencySample& s : report.samples) {
    out << s.iteration << ',' << s.num_peds << ',' << s.latency_us << '\n';
  }
}

inline nlohmann::json latency_json(const LatencyReport& report) {
  return {{"mean_us", report.mean_us}, {"median_us", report.median_us}, {"p99_us", report.p99_us},
          {"fps", report.fps},         {"runs", report.samples.size()}, {"host", report.host}};
}

}  // namespace carpe
