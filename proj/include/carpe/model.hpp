#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "carpe/dataio.hpp"
#include "carpe/graphnet.hpp"
#include "carpe/optim.hpp"
#include "carpe/prednet.hpp"

namespace carpe {

struct ModelConfig {
  int beta = 8;      // observed steps
  int horizon = 12;  // predicted steps
  int c1 = 128;      // first conv width
  int c2 = 256;      // second conv width
};

template <class S>
struct CarpeModel {
  ModelConfig config;
  GraphParams<S> graph;
  PredParams<S> pred;

  // Every trainable tensor, in the fixed order used for optimizer state and
  // weight serialization.
  std::vector<Tensor<S>> parameters() const {
    return {graph.embed_w,       graph.embed_b,       graph.phi_self.w1,  graph.phi_self.b1,
            graph.phi_self.w2,   graph.phi_self.b2,   graph.phi_neigh.w1, graph.phi_neigh.b1,
            graph.phi_neigh.w2,  graph.phi_neigh.b2,  graph.eps,          pred.conv1.kernel,
            pred.conv1.bias,     pred.conv2.kernel,   pred.conv2.bias,    pred.conv3.kernel,
            pred.conv3.bias,     pred.conv4.kernel,   pred.conv4.bias};
  }
};

// Builds a freshly initialized model. All weight draws come from one mt19937
// stream in parameters() order, so a seed pins every initial value.
template <class S>
CarpeModel<S> make_model(const ModelConfig& config, std::uint32_t seed) {
  CarpeModel<S> model;
  model.config = config;
  std::mt19937 rng(seed);
  model.graph = make_graph_params<S>(config.beta, rng);
  model.pred = make_pred_params<S>(config.beta, config.horizon, config.c1, config.c2, rng);
  return model;
}

template <class S>
std::size_t count_params(const CarpeModel<S>& model) {
  std::size_t n = 0;
  for (const Tensor<S>& p : model.parameters()) {
    n += p.numel();
  }
  return n;
}

// Relative-frame predictions for every pedestrian of a sample: [P, T, 2].
template <class S>
Tensor<S> forward_rel(const CarpeModel<S>& model, const FrameSample& sample, TapePtr<S> tape = nullptr) {
  const int beta = model.config.beta;
  for (const PedWindow& ped : sample.peds) {
    if (static_cast<int>(ped.observed_abs.size()) != beta) {
      throw std::invalid_argument("forward: sample observation length " +
                                  std::to_string(ped.observed_abs.size()) + " does not match beta " +
                                  std::to_string(beta));
    }
  }
  NodeFeatures<S> nf = graph_forward(sample, model.graph, tape);
  std::vector<Tensor<S>> per_ped;
  per_ped.reserve(sample.peds.size());
  for (std::size_t i = 0; i < sample.peds.size(); ++i) {
    std::vector<S> rel_values;
    rel_values.reserve(static_cast<std::size_t>(beta) * 2);
    for (const Point& pt : sample.peds[i].observed_rel) {
      rel_values.push_back(static_cast<S>(pt[0]));
      rel_values.push_back(static_cast<S>(pt[1]));
    }
    Tensor<S> rel_obs({beta, 2}, std::move(rel_values));
    Tensor<S> node_feature = select_row(nf.h_prime, static_cast<int>(i), tape);
    per_ped.push_back(cnn_forward(build_input(rel_obs, node_feature, tape), model.pred, tape));
  }
  return stack(per_ped, tape);
}

// Inference: absolute predicted paths, one per pedestrian, aligned with
// sample.peds. Displacements are computed in S, the shift back to world
// coordinates in double.
template <class S>
std::vector<Path> forward(const CarpeModel<S>& model, const FrameSample& sample) {
  Tensor<S> rel = forward_rel(model, sample, nullptr);
  auto rv = rel.values();
  const int horizon = model.config.horizon;
  std::vector<Path> out;
  out.reserve(sample.peds.size());
  for (std::size_t i = 0; i < sample.peds.size(); ++i) {
    Path rel_path(static_cast<std::size_t>(horizon));
    for (int t = 0; t < horizon; ++t) {
      const std::size_t base = (i * horizon + t) * 2;
      rel_path[static_cast<std::size_t>(t)] = {static_cast<double>(rv[base]),
                                               static_cast<double>(rv[base + 1])};
    }
    out.push_back(to_absolute(rel_path, sample.peds[i].origin));
  }
  return out;
}

// Cost model for one forward pass. Multiply-accumulates cover the linear and
// conv layers; extra_ops counts the remaining adds and muls (biases, the
// neighborhood sums, the eps scaling, the branch merge). flops counts a MAC
// as two operations and everything in extra_ops as one.
struct FlopEstimate {
  std::size_t macs_per_ped = 0;
  std::size_t extra_ops_per_ped = 0;   // P-independent part
  std::size_t frame_macs = 0;
  std::size_t frame_extra_ops = 0;     // includes the P*(P-1) neighborhood adds
  std::size_t frame_flops = 0;
  double frame_mflops = 0.0;
};

template <class S>
FlopEstimate count_flops(const CarpeModel<S>& model, int num_peds) {
  if (num_peds < 1) {
    throw std::invalid_argument("count_flops: need at least one pedestrian");
  }
  const std::size_t beta = static_cast<std::size_t>(model.config.beta);
  const std::size_t horizon = static_cast<std::size_t>(model.config.horizon);
  const std::size_t c1 = static_cast<std::size_t>(model.config.c1);
  const std::size_t c2 = static_cast<std::size_t>(model.config.c2);
  const std::size_t p = static_cast<std::size_t>(num_peds);

  FlopEstimate e;
  // Embedding and the two branch MLPs.
  e.macs_per_ped += (8 * beta) * (4 * beta);
  e.macs_per_ped += 2 * ((4 * beta) * (8 * beta) + (2 * beta) * (4 * beta));
  std::size_t bias_adds = 8 * beta + 2 * (4 * beta + 2 * beta);
  // Conv stack; each output element costs in_ch * kh * kw MACs plus one bias add.
  const std::size_t heights[4] = {beta / 2, beta / 4, beta / 8, 1};
  const std::size_t in_ch[4] = {2, c1, c2, 2 * horizon};
  const std::size_t out_ch[4] = {c1, c2, 2 * horizon, 2 * horizon};
  const std::size_t kern[4] = {2 * 2, 2 * 1, 2 * 1, (beta / 8) * 1};
  for (int l = 0; l < 4; ++l) {
    const std::size_t out_elems = out_ch[l] * heights[l];
    e.macs_per_ped += out_elems * in_ch[l] * kern[l];
    bias_adds += out_elems;
  }
  // eps scaling and the self + neighbor merge.
  e.extra_ops_per_ped = bias_adds + 8 * beta + 2 * beta;

  e.frame_macs = e.macs_per_ped * p;
  e.frame_extra_ops = e.extra_ops_per_ped * p + p * (p - 1) * (8 * beta) + 1;
  e.frame_flops = 2 * e.frame_macs + e.frame_extra_ops;
  e.frame_mflops = static_cast<double>(e.frame_flops) / 1.0e6;
  return e;
}

struct TrainConfig {
  int epochs = 80;
  int frame_batch = 64;  // frames per optimizer step
  double lr = 0.01;
  double clip_norm = 5.0;
  std::uint32_t seed = 1;
  bool verbose = false;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // displacement MSE over all elements seen in the epoch
  double wall_seconds = 0.0;
  std::size_t frames = 0;
  std::size_t optimizer_steps = 0;
};

// Trains in place. Each optimizer step accumulates gradients over up to
// frame_batch frames; seeding frame f's backward pass with its element share
// count_f / total_count makes the accumulated gradient the exact gradient of
// the mean squared displacement error over every element in the batch. Frame
// order reshuffles every epoch from one seeded stream.
template <class S>
TrainReport train(CarpeModel<S>& model, const std::vector<FrameSample>& samples,
                  const TrainConfig& config) {
  if (config.epochs < 0 || config.frame_batch < 1) {
    throw std::invalid_argument("train: epochs must be >= 0 and frame_batch >= 1");
  }
  if (samples.empty() && config.epochs > 0) {
    throw std::invalid_argument("train: no training samples");
  }
  for (const FrameSample& sample : samples) {
    for (const PedWindow& ped : sample.peds) {
      if (static_cast<int>(ped.future_abs.size()) != model.config.horizon) {
        throw std::invalid_argument("train: sample future length does not match horizon");
      }
    }
  }

  std::vector<Tensor<S>> params = model.parameters();
  for (Tensor<S>& p : params) {
    p.set_requires_grad(true);
  }
  AdamState<S> opt(std::span<const Tensor<S>>(params.data(), params.size()),
                   static_cast<S>(config.lr));
  std::mt19937 shuffle_rng(config.seed);

  TrainReport report;
  report.frames = samples.size();
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    deterministic_shuffle(order, shuffle_rng);
    double epoch_sse = 0.0;
    std::size_t epoch_elems = 0;
    for (std::size_t batch_begin = 0; batch_begin < order.size();
         batch_begin += static_cast<std::size_t>(config.frame_batch)) {
      const std::size_t batch_end =
          std::min(order.size(), batch_begin + static_cast<std::size_t>(config.frame_batch));
      std::size_t total_count = 0;
      for (std::size_t k = batch_begin; k < batch_end; ++k) {
        total_count += samples[order[k]].peds.size() * model.config.horizon * 2;
      }
      for (Tensor<S>& p : params) {
        p.zero_grad();
      }
      double batch_loss = 0.0;
      for (std::size_t k = batch_begin; k < batch_end; ++k) {
        const FrameSample& sample = samples[order[k]];
        Tape<S> tape;
        Tensor<S> pred = forward_rel(model, sample, &tape);
        Tensor<S> target(pred.shape());
        {
          auto tv = target.values();
          std::size_t idx = 0;
          for (const PedWindow& ped : sample.peds) {
            for (int t = 0; t < model.config.horizon; ++t) {
              tv[idx++] = static_cast<S>(ped.future_abs[static_cast<std::size_t>(t)][0] - ped.origin[0]);
              tv[idx++] = static_cast<S>(ped.future_abs[static_cast<std::size_t>(t)][1] - ped.origin[1]);
            }
          }
        }
        Tensor<S> loss = mse_loss(pred, target, &tape);
        const std::size_t count = sample.peds.size() * model.config.horizon * 2;
        const double weight = static_cast<double>(count) / static_cast<double>(total_count);
        tape.backward(loss, static_cast<S>(weight));
        batch_loss += static_cast<double>(loss.item()) * weight;
      }
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("train: loss diverged to non-finite at epoch " +
                                 std::to_string(epoch + 1) + ", step " +
                                 std::to_string(report.optimizer_steps + 1));
      }
      clip_global_norm(std::span<Tensor<S>>(params.data(), params.size()),
                       static_cast<S>(config.clip_norm));
      adam_step(std::span<Tensor<S>>(params.data(), params.size()), opt);
      report.optimizer_steps += 1;
      epoch_sse += batch_loss * static_cast<double>(total_count);
      epoch_elems += total_count;
    }
    report.epoch_loss.push_back(epoch_elems == 0 ? 0.0 : epoch_sse / static_cast<double>(epoch_elems));
    if (config.verbose) {
      std::fprintf(stderr, "epoch %3d/%d  loss %.6f\n", epoch + 1, config.epochs,
                   report.epoch_loss.back());
    }
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace carpe
