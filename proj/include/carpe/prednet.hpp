#pragma once

#include <random>
#include <stdexcept>
#include <vector>

#include "carpe/dataio.hpp"
#include "carpe/init.hpp"
#include "carpe/ops.hpp"
#include "carpe/tensor.hpp"

// Prediction module: a four-layer CNN maps one pedestrian's observation
// window plus its aggregated graph feature to a displacement sequence. With
// the default geometry (beta = 8, horizon T = 12, c1 = 128, c2 = 256) the
// shapes run
//
//   [2, 8, 2] -> conv 2x2 /(2,1) -> [128, 4, 1]
//             -> conv 2x1 /(2,1) -> [256, 2, 1]
//             -> conv 2x1 /(2,1) -> [ 24, 1, 1]
//             -> conv 1x1 /(1,1) -> [ 24, 1, 1] -> [12, 2]
//
// ReLU follows the first three convs, nothing follows the last. The final
// kernel height is beta / 8, so one extra row survives until the last layer
// when beta = 16. Output rows are displacements from the first observed
// position, time-major with (x, y) columns.

namespace carpe {

template <class S>
struct ConvLayer {
  Tensor<S> kernel;  // [out, in, kh, kw]
  Tensor<S> bias;    // [out]
  int stride_h = 1;
  int stride_w = 1;
};

template <class S>
struct PredParams {
  int beta = 8;
  int horizon = 12;
  int c1 = 128;
  int c2 = 256;
  ConvLayer<S> conv1, conv2, conv3, conv4;
};

template <class S>
ConvLayer<S> make_conv_layer(int out_ch, int in_ch, int kh, int kw, int stride_h, int stride_w,
                             std::mt19937& rng) {
  ConvLayer<S> layer;
  layer.kernel = Tensor<S>({out_ch, in_ch, kh, kw});
  layer.bias = Tensor<S>({out_ch});
  layer.stride_h = stride_h;
  layer.stride_w = stride_w;
  fill_fan_in_uniform(layer.kernel, in_ch * kh * kw, rng);
  return layer;
}

// beta must be a positive multiple of 8 so the height halvings and the final
// beta/8 x 1 kernel line up; horizon doubles into the 2T channel count.
template <class S>
PredParams<S> make_pred_params(int beta, int horizon, int c1, int c2, std::mt19937& rng) {
  if (beta < 8 || beta % 8 != 0) {
    throw std::invalid_argument("make_pred_params: beta must be a positive multiple of 8");
  }
  if (horizon < 1 || c1 < 1 || c2 < 1) {
    throw std::invalid_argument("make_pred_params: horizon and channel counts must be >= 1");
  }
  PredParams<S> p;
  p.beta = beta;
  p.horizon = horizon;
  p.c1 = c1;
  p.c2 = c2;
  p.conv1 = make_conv_layer<S>(c1, 2, 2, 2, 2, 1, rng);
  p.conv2 = make_conv_layer<S>(c2, c1, 2, 1, 2, 1, rng);
  p.conv3 = make_conv_layer<S>(2 * horizon, c2, 2, 1, 2, 1, rng);
  p.conv4 = make_conv_layer<S>(2 * horizon, 2 * horizon, beta / 8, 1, 1, 1, rng);
  return p;
}

// Stacks the observation window and the graph feature into the CNN input:
// channel 0 is R_i as beta x 2 (time-major, (x, y) columns), channel 1 is
// h'_i reshaped the same way.
template <class S>
Tensor<S> build_input(const Tensor<S>& rel_obs, const Tensor<S>& node_feature, TapePtr<S> tape = nullptr) {
  if (rel_obs.rank() != 2 || rel_obs.extent(1) != 2) {
    throw std::invalid_argument("build_input: expected [beta, 2] observations, got " +
                                shape_to_string(rel_obs.shape()));
  }
  const int beta = rel_obs.extent(0);
  if (node_feature.numel() != static_cast<std::size_t>(2 * beta)) {
    throw std::invalid_argument("build_input: node feature size " + std::to_string(node_feature.numel()) +
                                " does not fill a [" + std::to_string(beta) + ", 2] channel");
  }
  Tensor<S> feature_plane = reshape(node_feature, {beta, 2}, tape);
  return stack<S>({rel_obs, feature_plane}, tape);
}

// Runs the four conv layers and returns the [T, 2] displacement sequence.
template <class S>
Tensor<S> cnn_forward(const Tensor<S>& input, const PredParams<S>& params, TapePtr<S> tape = nullptr) {
  if (input.rank() != 3 || input.extent(0) != 2 || input.extent(1) != params.beta ||
      input.extent(2) != 2) {
    throw std::invalid_argument("cnn_forward: expected [2, " + std::to_string(params.beta) +
                                ", 2] input, got " + shape_to_string(input.shape()));
  }
  Tensor<S> x = relu(conv2d(input, params.conv1.kernel, params.conv1.bias, params.conv1.stride_h,
                            params.conv1.stride_w, tape),
                     tape);
  x = relu(conv2d(x, params.conv2.kernel, params.conv2.bias, params.conv2.stride_h,
                  params.conv2.stride_w, tape),
           tape);
  x = relu(conv2d(x, params.conv3.kernel, params.conv3.bias, params.conv3.stride_h,
                  params.conv3.stride_w, tape),
           tape);
  x = conv2d(x, params.conv4.kernel, params.conv4.bias, params.conv4.stride_h, params.conv4.stride_w,
             tape);
  return reshape(x, {params.horizon, 2}, tape);
}

// Displacements back to world coordinates: out[t] = rel[t] + origin.
inline Path to_absolute(const Path& rel_future, Point origin) {
  Path abs(rel_future.size());
  for (std::size_t t = 0; t < rel_future.size(); ++t) {
    abs[t] = {rel_future[t][0] + origin[0], rel_future[t][1] + origin[1]};
  }
  return abs;
}

}  // namespace carpe
