#pragma once

// The full Siamese recurrent convolutional network: parameters, their
// initialisation and (de)serialisation, and the per-branch forward pass.

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rcn/aggregation.hpp"
#include "rcn/config.hpp"
#include "rcn/data.hpp"
#include "rcn/encoder.hpp"
#include "rcn/errors.hpp"
#include "rcn/recurrent.hpp"
#include "rcn/serialize.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

inline EncoderGeometry encoder_geometry(const Config& cfg) {
  EncoderGeometry g;
  g.height = cfg.height;
  g.width = cfg.width;
  for (std::size_t s = 0; s < kEncoderStages; ++s) g.channels[s] = cfg.encoder_channels.at(s);
  g.padding = cfg.encoder_padding;
  return g;
}

inline StackConfig stack_config(const Config& cfg) {
  StackConfig s;
  const auto taps = encoder_geometry(cfg).tap_shapes();
  for (const auto& t : taps) s.input_channels.push_back(t[0]);
  s.hidden_channels = cfg.channels;
  s.input_kernel = cfg.input_kernel();
  s.hidden_kernel = cfg.hidden_kernel();
  s.cross_layer = cfg.cross_layer();
  s.candidate_cross = cfg.candidate_cross;
  s.gate_bias = cfg.gate_bias;
  s.dropout = cfg.dropout;
  return s;
}

/// Full validation of a model configuration, including the encoder geometry.
inline void validate_model_config(const Config& cfg) {
  cfg.validate();
  encoder_geometry(cfg).validate();
  stack_config(cfg).validate();
}

/// Theta: every learnable tensor of the network. Both Siamese branches read
/// this single object.
template <typename T>
struct ModelParams {
  EncoderParams<T> encoder;
  std::vector<ConvGruParams<T>> layers;
  std::vector<Tensor<T>> projections;  // [D x C_l]
  SimilarityParams<T> sim;

  /// Every tensor with its checkpoint name, in a fixed order.
  NamedTensors<T> named() const {
    NamedTensors<T> out;
    for (std::size_t s = 0; s < kEncoderStages; ++s) {
      out.emplace_back("enc.conv" + std::to_string(s) + ".w", encoder.kernels[s]);
      out.emplace_back("enc.conv" + std::to_string(s) + ".b", encoder.biases[s]);
    }
    for (std::size_t l = 0; l < layers.size(); ++l)
      for (auto& nt : layers[l].named(l + 1)) out.push_back(std::move(nt));
    for (std::size_t l = 0; l < projections.size(); ++l)
      out.emplace_back("proj.l" + std::to_string(l + 1), projections[l]);
    out.emplace_back("sim.v", sim.v);
    out.emplace_back("sim.c", sim.c);
    return out;
  }

  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors()) t.zero_grad();
  }
};

/// Zero-valued parameters with the layout implied by `cfg`; projections start
/// as (zero-padded) identities.
template <typename T>
ModelParams<T> make_params(const Config& cfg) {
  validate_model_config(cfg);
  ModelParams<T> p;
  p.encoder = EncoderParams<T>::zeros(encoder_geometry(cfg));
  p.layers = make_stack<T>(stack_config(cfg));
  const std::size_t dim = cfg.channels.back();
  p.projections = make_projections<T>(cfg.channels, dim);
  p.sim = SimilarityParams<T>::zeros(dim);
  return p;
}

namespace detail {

inline bool is_bias_name(const std::string& name) {
  return name == "sim.c" || (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0) ||
         name.ends_with(".bz") || name.ends_with(".br") || name.ends_with(".bh");
}

}  // namespace detail

/// Draws every kernel and the similarity weights i.i.d. from
/// uniform[-scale, scale]; biases stay zero and projections stay identity.
template <typename T>
ModelParams<T> init_params(const Config& cfg, std::uint64_t seed) {
  ModelParams<T> p = make_params<T>(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-cfg.init_scale, cfg.init_scale);
  for (auto& [name, t] : p.named()) {
    if (detail::is_bias_name(name) || name.starts_with("proj.")) continue;
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  }
  return p;
}

/// Copies values from named tensors into a freshly laid out parameter set.
template <typename T, typename From>
ModelParams<T> params_from(const Config& cfg, const NamedTensors<From>& source) {
  ModelParams<T> p = make_params<T>(cfg);
  std::map<std::string, const Tensor<From>*> by_name;
  for (const auto& [name, t] : source) by_name[name] = &t;
  for (auto& [name, t] : p.named()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint lacks tensor " + name);
    if (it->second->shape() != t.shape()) {
      throw DataError("checkpoint tensor " + name + " is " + shape_str(it->second->shape()) + ", model expects " +
                      shape_str(t.shape()));
    }
    auto dst = t.data();
    auto src = it->second->data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
  return p;
}

template <typename To, typename From>
ModelParams<To> convert_params(const Config& cfg, const ModelParams<From>& from) {
  return params_from<To>(cfg, from.named());
}

/// Configuration plus parameters: everything needed to run a branch.
template <typename T>
struct Network {
  Config config;
  ModelParams<T> params;

  EncoderGeometry geometry() const { return encoder_geometry(config); }
  StackConfig stack() const { return stack_config(config); }
};

/// One Siamese branch: frames -> encoder -> recurrent stack -> sequence
/// feature. A non-null `dropout_rng` switches on training-time dropout.
template <typename T>
SequenceFeature<T> branch_feature(Tape<T>& tape, const Network<T>& net, const std::vector<Frame>& frames,
                                  std::mt19937_64* dropout_rng = nullptr) {
  std::vector<Tensor<T>> inputs;
  inputs.reserve(frames.size());
  for (const auto& f : frames) inputs.push_back(cast<T>(f));
  const auto geometry = net.geometry();
  const auto pyramids = encode_sequence(tape, inputs, net.params.encoder, geometry);
  const auto states = run_stack(tape, pyramids, net.stack(), net.params.layers, dropout_rng);
  return sequence_feature(tape, states, net.params.projections, net.config.pooling_mode);
}

/// Twin branches over one parameter object.
template <typename T>
class Siamese {
 public:
  explicit Siamese(const Network<T>& net) : net_(&net) {}

  const ModelParams<T>& branch_params(int branch) const {
    (void)branch;
    return net_->params;
  }

  /// Similarity s(X^a, X^b) as a scalar tensor on `tape`.
  Tensor<T> forward(Tape<T>& tape, const std::vector<Frame>& a, const std::vector<Frame>& b,
                    std::mt19937_64* dropout_rng = nullptr) const {
    const auto fa = branch_feature(tape, *net_, a, dropout_rng);
    const auto fb = branch_feature(tape, *net_, b, dropout_rng);
    return similarity(tape, fa.h_bar, fb.h_bar, net_->params.sim);
  }

 private:
  const Network<T>* net_;
};

}  // namespace rcn
