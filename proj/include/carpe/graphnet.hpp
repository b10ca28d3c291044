#pragma once

#include <random>
#include <stdexcept>
#include <vector>

#include "carpe/dataio.hpp"
#include "carpe/init.hpp"
#include "carpe/ops.hpp"
#include "carpe/tensor.hpp"

// Graph module: every pedestrian in a frame is a node, the graph is fully
// connected, and one aggregation hop mixes each node's own embedding with the
// sum of all other nodes' embeddings:
//
//   h'_i = phi_self((1 + eps) * h_i) + phi_neigh(sum_{j != i} h_j)
//
// eps is a single trainable scalar starting at 0. The neighborhood excludes
// the node itself; the self term enters only through the scaled left branch.

namespace carpe {

// Two fully-connected layers with a ReLU between them and none after.
template <class S>
struct MlpParams {
  Tensor<S> w1, b1;
  Tensor<S> w2, b2;
};

template <class S>
Tensor<S> mlp_forward(const Tensor<S>& x, const MlpParams<S>& mlp, TapePtr<S> tape = nullptr) {
  return linear(relu(linear(x, mlp.w1, mlp.b1, tape), tape), mlp.w2, mlp.b2, tape);
}

template <class S>
struct GraphParams {
  Tensor<S> embed_w, embed_b;  // per-node embedding, 4*beta -> 8*beta
  MlpParams<S> phi_self;       // 8*beta -> 4*beta -> 2*beta
  MlpParams<S> phi_neigh;      // same shape as phi_self
  Tensor<S> eps;               // trainable scalar, init 0
};

// Node embeddings before and after the aggregation hop.
template <class S>
struct NodeFeatures {
  Tensor<S> h;        // [P, 8*beta]
  Tensor<S> h_prime;  // [P, 2*beta]
};

template <class S>
MlpParams<S> make_mlp_params(int in_dim, int hidden_dim, int out_dim, std::mt19937& rng) {
  MlpParams<S> mlp;
  mlp.w1 = Tensor<S>({hidden_dim, in_dim});
  mlp.b1 = Tensor<S>({hidden_dim});
  mlp.w2 = Tensor<S>({out_dim, hidden_dim});
  mlp.b2 = Tensor<S>({out_dim});
  fill_fan_in_uniform(mlp.w1, in_dim, rng);
  fill_fan_in_uniform(mlp.w2, hidden_dim, rng);
  return mlp;
}

// Weight draws happen in declared field order; biases and eps start at zero.
template <class S>
GraphParams<S> make_graph_params(int beta, std::mt19937& rng) {
  if (beta < 1) {
    throw std::invalid_argument("make_graph_params: beta must be >= 1");
  }
  GraphParams<S> p;
  p.embed_w = Tensor<S>({8 * beta, 4 * beta});
  p.embed_b = Tensor<S>({8 * beta});
  fill_fan_in_uniform(p.embed_w, 4 * beta, rng);
  p.phi_self = make_mlp_params<S>(8 * beta, 4 * beta, 2 * beta, rng);
  p.phi_neigh = make_mlp_params<S>(8 * beta, 4 * beta, 2 * beta, rng);
  p.eps = Tensor<S>({1});
  return p;
}

// Per-node embedding: row i is the image of [flatten(A_i) ++ flatten(R_i)]
// under one fully-connected layer, no activation. A is [P, beta, 2] absolute
// positions, R the matching relative ones.
template <class S>
Tensor<S> embed_nodes(const Tensor<S>& abs_obs, const Tensor<S>& rel_obs, const GraphParams<S>& params,
                      TapePtr<S> tape = nullptr) {
  if (abs_obs.rank() != 3 || abs_obs.shape() != rel_obs.shape() || abs_obs.extent(2) != 2) {
    throw std::invalid_argument("embed_nodes: expected matching [P, beta, 2] inputs, got " +
                                shape_to_string(abs_obs.shape()) + " and " +
                                shape_to_string(rel_obs.shape()));
  }
  const int p = abs_obs.extent(0);
  const int beta = abs_obs.extent(1);
  Tensor<S> flat = concat_cols(reshape(abs_obs, {p, 2 * beta}, tape), reshape(rel_obs, {p, 2 * beta}, tape), tape);
  return linear(flat, params.embed_w, params.embed_b, tape);
}

// out[i, :] = sum over j != i of h[j, :], rows added in ascending j. For a
// single node the sum is empty, hence zero.
template <class S>
Tensor<S> neighborhood_sum(Tensor<S> h, TapePtr<S> tape = nullptr) {
  if (h.rank() != 2) {
    throw std::invalid_argument("neighborhood_sum: expected [P, D] tensor, got " +
                                shape_to_string(h.shape()));
  }
  const int p = h.extent(0);
  const int d = h.extent(1);
  Tensor<S> out({p, d});
  {
    auto hv = h.values();
    auto ov = out.values();
    for (int i = 0; i < p; ++i) {
      for (int j = 0; j < p; ++j) {
        if (j == i) {
          continue;
        }
        for (int k = 0; k < d; ++k) {
          ov[static_cast<std::size_t>(i) * d + k] += hv[static_cast<std::size_t>(j) * d + k];
        }
      }
    }
  }
  detail::check_finite(out, "neighborhood_sum");
  if (detail::track(tape, {&h})) {
    out.set_requires_grad(true);
    tape->record([h, out, p, d]() mutable {
      auto g = out.grad();
      auto gh = h.grad();
      for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) {
          if (j == i) {
            continue;
          }
          for (int k = 0; k < d; ++k) {
            gh[static_cast<std::size_t>(j) * d + k] += g[static_cast<std::size_t>(i) * d + k];
          }
        }
      }
    });
  }
  return out;
}

// One aggregation hop over the full graph (see header comment).
template <class S>
Tensor<S> gin_layer(const Tensor<S>& h, const GraphParams<S>& params, TapePtr<S> tape = nullptr) {
  Tensor<S> alpha = add_const(params.eps, S(1), tape);
  Tensor<S> self_branch = mlp_forward(scale(h, alpha, tape), params.phi_self, tape);
  Tensor<S> neigh_branch = mlp_forward(neighborhood_sum(h, tape), params.phi_neigh, tape);
  return add(self_branch, neigh_branch, tape);
}

// Packs a sample's observations into tensors and runs embedding plus the
// aggregation hop. Row order follows sample.peds.
template <class S>
NodeFeatures<S> graph_forward(const FrameSample& sample, const GraphParams<S>& params,
                              TapePtr<S> tape = nullptr) {
  if (sample.peds.empty()) {
    throw std::invalid_argument("graph_forward: sample has no pedestrians");
  }
  const int p = static_cast<int>(sample.peds.size());
  const int beta = static_cast<int>(sample.peds.front().observed_abs.size());
  std::vector<S> abs_values;
  std::vector<S> rel_values;
  abs_values.reserve(static_cast<std::size_t>(p) * beta * 2);
  rel_values.reserve(static_cast<std::size_t>(p) * beta * 2);
  for (const PedWindow& ped : sample.peds) {
    if (static_cast<int>(ped.observed_abs.size()) != beta ||
        static_cast<int>(ped.observed_rel.size()) != beta) {
      throw std::invalid_argument("graph_forward: ragged observation lengths in sample");
    }
    for (int t = 0; t < beta; ++t) {
      abs_values.push_back(static_cast<S>(ped.observed_abs[t][0]));
      abs_values.push_back(static_cast<S>(ped.observed_abs[t][1]));
      rel_values.push_back(static_cast<S>(ped.observed_rel[t][0]));
      rel_values.push_back(static_cast<S>(ped.observed_rel[t][1]));
    }
  }
  Tensor<S> abs_obs({p, beta, 2}, std::move(abs_values));
  Tensor<S> rel_obs({p, beta, 2}, std::move(rel_values));
  NodeFeatures<S> nf;
  nf.h = embed_nodes(abs_obs, rel_obs, params, tape);
  nf.h_prime = gin_layer(nf.h, params, tape);
  return nf;
}

}  // namespace carpe
