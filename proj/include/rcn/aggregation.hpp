#pragma once

// Sequence-level features and the Siamese similarity head.

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "rcn/config.hpp"
#include "rcn/errors.hpp"
#include "rcn/ops.hpp"
#include "rcn/recurrent.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

template <typename T>
struct SequenceFeature {
  Tensor<T> h_bar;  // [D]
  PoolingMode provenance = PoolingMode::kLastStep;
};

/// s = sigmoid(v . (a * b) + c)
template <typename T>
struct SimilarityParams {
  Tensor<T> v;  // [D]
  Tensor<T> c;  // [1]

  static SimilarityParams zeros(std::size_t dim) {
    SimilarityParams p{Tensor<T>(Shape{dim}), Tensor<T>(Shape{1})};
    p.v.set_requires_grad();
    p.c.set_requires_grad();
    return p;
  }
};

/// Per-layer linear maps [D x C_l] that bring every layer's pooled state into
/// the common feature space before averaging.
template <typename T>
std::vector<Tensor<T>> make_projections(const std::vector<std::size_t>& layer_channels, std::size_t dim) {
  std::vector<Tensor<T>> out;
  for (auto c : layer_channels) {
    Tensor<T> p(Shape{dim, c});
    for (std::size_t i = 0; i < std::min(dim, c); ++i) p[i * c + i] = T(1);
    p.set_requires_grad();
    out.push_back(p);
  }
  return out;
}

namespace detail {

/// Spatially averaged, projected, layer-averaged descriptor for one step.
template <typename T>
Tensor<T> layer_average(Tape<T>& tape, const std::vector<HiddenState<T>>& step,
                        const std::vector<Tensor<T>>& projections) {
  if (step.empty()) throw DimensionError("layer pooling: no hidden states");
  if (!projections.empty() && projections.size() != step.size()) {
    throw ConfigError("layer pooling: " + std::to_string(projections.size()) + " projections for " +
                      std::to_string(step.size()) + " layers");
  }
  std::vector<Tensor<T>> pooled;
  for (std::size_t l = 0; l < step.size(); ++l) {
    Tensor<T> v = avg_pool_spatial(tape, step[l].h);
    if (!projections.empty()) {
      v = matvec(tape, projections[l], v);
    } else if (!pooled.empty() && v.shape() != pooled.front().shape()) {
      throw ConfigError("layer pooling: layers have " + std::to_string(pooled.front().size()) + " and " +
                        std::to_string(v.size()) + " channels and no projection is configured");
    }
    pooled.push_back(v);
  }
  return stack_mean(tape, pooled);
}

}  // namespace detail

/// Spatially pools each layer's final state, projects it and averages over layers.
template <typename T>
SequenceFeature<T> pool_layers_last_step(Tape<T>& tape, const std::vector<HiddenState<T>>& final_states,
                                         const std::vector<Tensor<T>>& projections = {}) {
  return {detail::layer_average(tape, final_states, projections), PoolingMode::kLastStep};
}

/// Elementwise mean or max over time. Callers pass L2-normalised descriptors.
template <typename T>
Tensor<T> pool_temporal(Tape<T>& tape, const std::vector<Tensor<T>>& per_step, PoolingMode mode) {
  if (per_step.empty()) throw DimensionError("pool_temporal: empty sequence");
  if (mode == PoolingMode::kLastStep) throw ConfigError("pool_temporal: mode must be average or max");
  return mode == PoolingMode::kMax ? stack_max(tape, per_step) : stack_mean(tape, per_step);
}

template <typename T>
SequenceFeature<T> sequence_feature(Tape<T>& tape, const StackStates<T>& states,
                                    const std::vector<Tensor<T>>& projections, PoolingMode mode) {
  if (states.empty()) throw DimensionError("sequence_feature: no time steps");
  if (mode == PoolingMode::kLastStep) return pool_layers_last_step(tape, states.back(), projections);
  std::vector<Tensor<T>> per_step;
  per_step.reserve(states.size());
  for (const auto& step : states) per_step.push_back(l2_normalize(tape, detail::layer_average(tape, step, projections)));
  return {pool_temporal(tape, per_step, mode), mode};
}

template <typename T>
Tensor<T> similarity(Tape<T>& tape, const Tensor<T>& h_a, const Tensor<T>& h_b, const SimilarityParams<T>& p) {
  if (h_a.shape() != h_b.shape() || h_a.shape() != p.v.shape()) {
    throw DimensionError("similarity: features " + shape_str(h_a.shape()) + " and " + shape_str(h_b.shape()) +
                         " against weights " + shape_str(p.v.shape()));
  }
  return sigmoid(tape, add(tape, dot(tape, p.v, mul(tape, h_a, h_b)), p.c));
}

}  // namespace rcn
