#pragma once

// Gated recurrent cells: the fully connected GRU, the convolutional GRU, and
// the stack of convolutional GRUs in which every layer's gates also see the
// current hidden state of the layer below.

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rcn/encoder.hpp"
#include "rcn/errors.hpp"
#include "rcn/ops.hpp"
#include "rcn/serialize.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

// ---------------------------------------------------------------------------
// Fully connected GRU.

template <typename T>
struct FcGruParams {
  Tensor<T> Wz, Wr, W;  // [C_h x C_x]
  Tensor<T> Uz, Ur, U;  // [C_h x C_h]

  static FcGruParams zeros(std::size_t input_dim, std::size_t hidden_dim) {
    FcGruParams p;
    for (auto* t : {&p.Wz, &p.Wr, &p.W}) *t = Tensor<T>(Shape{hidden_dim, input_dim});
    for (auto* t : {&p.Uz, &p.Ur, &p.U}) *t = Tensor<T>(Shape{hidden_dim, hidden_dim});
    return p;
  }
};

template <typename T>
Tensor<T> fc_gru_step(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& h_prev,
                      const FcGruParams<T>& p) {
  const auto check = [&](const char* name, const Tensor<T>& m, std::size_t cols) {
    if (m.rank() != 2 || m.extent(0) != h_prev.size() || m.extent(1) != cols) {
      throw DimensionError(std::string("fc_gru_step: ") + name + " is " + shape_str(m.shape()) +
                           ", expected [" + std::to_string(h_prev.size()) + "x" +
                           std::to_string(cols) + "]");
    }
  };
  check("W_z", p.Wz, x.size());
  check("W_r", p.Wr, x.size());
  check("W", p.W, x.size());
  check("U_z", p.Uz, h_prev.size());
  check("U_r", p.Ur, h_prev.size());
  check("U", p.U, h_prev.size());

  auto z = sigmoid(tape, add(tape, matvec(tape, p.Wz, x), matvec(tape, p.Uz, h_prev)));
  auto r = sigmoid(tape, add(tape, matvec(tape, p.Wr, x), matvec(tape, p.Ur, h_prev)));
  auto candidate = rcn::tanh(tape, add(tape, matvec(tape, p.W, x), matvec(tape, p.U, mul(tape, r, h_prev))));
  return gru_blend(tape, z, h_prev, candidate);
}

// ---------------------------------------------------------------------------
// Convolutional GRU.

template <typename T>
struct ConvGruParams {
  Tensor<T> Wz, Wr, W;     // input-to-hidden   [C_h x C_x x k_x x k_x]
  Tensor<T> Uz, Ur, U;     // hidden-to-hidden  [C_h x C_h x k_h x k_h]
  Tensor<T> Wzx, Wrx;      // cross-layer gates [C_h x C_prev x k_x x k_x], stacked mode only
  Tensor<T> Whx;           // cross-layer candidate term, ablation only
  Tensor<T> bz, br, bh;    // optional gate biases [C_h]

  std::size_t hidden_channels() const { return Uz.extent(0); }
  bool has_cross() const { return Wzx.defined(); }

  /// Parameters in checkpoint order, named rcn.l{layer}.{...}.
  NamedTensors<T> named(std::size_t layer) const {
    const std::string prefix = "rcn.l" + std::to_string(layer) + ".";
    NamedTensors<T> out{{prefix + "Wz", Wz}, {prefix + "Wr", Wr}, {prefix + "W", W},
                        {prefix + "Uz", Uz}, {prefix + "Ur", Ur}, {prefix + "U", U}};
    if (Wzx.defined()) out.emplace_back(prefix + "Wzx", Wzx);
    if (Wrx.defined()) out.emplace_back(prefix + "Wrx", Wrx);
    if (Whx.defined()) out.emplace_back(prefix + "Whx", Whx);
    if (bz.defined()) out.emplace_back(prefix + "bz", bz);
    if (br.defined()) out.emplace_back(prefix + "br", br);
    if (bh.defined()) out.emplace_back(prefix + "bh", bh);
    return out;
  }

  std::size_t stored_scalars() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named(0)) n += t.size();
    return n;
  }
};

/// Layout of one ConvGRU layer.
struct ConvGruShape {
  std::size_t input_channels = 0;
  std::size_t hidden_channels = 0;
  std::size_t below_channels = 0;  // 0: no cross-layer input
  std::size_t input_kernel = 5;
  std::size_t hidden_kernel = 5;
  bool candidate_cross = false;
  bool gate_bias = false;
};

template <typename T>
ConvGruParams<T> make_conv_gru(const ConvGruShape& s) {
  if (s.input_kernel % 2 == 0 || s.hidden_kernel % 2 == 0) {
    throw ConfigError("ConvGRU kernels must have odd size, got " + std::to_string(s.input_kernel) + " and " +
                      std::to_string(s.hidden_kernel));
  }
  ConvGruParams<T> p;
  const std::size_t kx = s.input_kernel, kh = s.hidden_kernel, ch = s.hidden_channels;
  for (auto* t : {&p.Wz, &p.Wr, &p.W}) *t = Tensor<T>(Shape{ch, s.input_channels, kx, kx});
  for (auto* t : {&p.Uz, &p.Ur, &p.U}) *t = Tensor<T>(Shape{ch, ch, kh, kh});
  if (s.below_channels > 0) {
    p.Wzx = Tensor<T>(Shape{ch, s.below_channels, kx, kx});
    p.Wrx = Tensor<T>(Shape{ch, s.below_channels, kx, kx});
    if (s.candidate_cross) p.Whx = Tensor<T>(Shape{ch, s.below_channels, kx, kx});
  }
  if (s.gate_bias) {
    for (auto* t : {&p.bz, &p.br, &p.bh}) *t = Tensor<T>(Shape{ch});
  }
  for (auto& [name, t] : p.named(0)) t.set_requires_grad();
  return p;
}

namespace detail {

template <typename T>
Tensor<T> same_conv(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernel) {
  return conv2d(tape, x, kernel, 1, (kernel.extent(2) - 1) / 2);
}

template <typename T>
Tensor<T> maybe_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& b) {
  return b.defined() ? bias_add(tape, x, b) : x;
}

}  // namespace detail

/// One ConvGRU update. When `h_below` is given the update and reset gates
/// (and the candidate, if a Whx kernel exists) also receive a convolution of
/// the lower layer's current state.
template <typename T>
Tensor<T> conv_gru_step(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& h_prev,
                        const ConvGruParams<T>& p, const Tensor<T>* h_below = nullptr) {
  if (x.rank() != 3 || h_prev.rank() != 3 || x.extent(1) != h_prev.extent(1) ||
      x.extent(2) != h_prev.extent(2)) {
    throw DimensionError("conv_gru_step: input " + shape_str(x.shape()) + " and state " +
                         shape_str(h_prev.shape()) + " disagree on the spatial grid");
  }
  if (h_below) {
    if (!p.has_cross()) {
      throw ConfigError("conv_gru_step: a lower-layer state was supplied but the layer has no cross-layer kernels");
    }
    if (h_below->rank() != 3 || h_below->extent(1) != x.extent(1) || h_below->extent(2) != x.extent(2)) {
      throw DimensionError("conv_gru_step: lower-layer state " + shape_str(h_below->shape()) +
                           " does not match the grid of " + shape_str(x.shape()));
    }
  }
  using detail::maybe_bias;
  using detail::same_conv;

  auto z_pre = add(tape, same_conv(tape, x, p.Wz), same_conv(tape, h_prev, p.Uz));
  auto r_pre = add(tape, same_conv(tape, x, p.Wr), same_conv(tape, h_prev, p.Ur));
  if (h_below) {
    z_pre = add(tape, z_pre, same_conv(tape, *h_below, p.Wzx));
    r_pre = add(tape, r_pre, same_conv(tape, *h_below, p.Wrx));
  }
  auto z = sigmoid(tape, maybe_bias(tape, z_pre, p.bz));
  auto r = sigmoid(tape, maybe_bias(tape, r_pre, p.br));

  auto c_pre = add(tape, same_conv(tape, x, p.W), same_conv(tape, mul(tape, r, h_prev), p.U));
  if (h_below && p.Whx.defined()) c_pre = add(tape, c_pre, same_conv(tape, *h_below, p.Whx));
  auto candidate = rcn::tanh(tape, maybe_bias(tape, c_pre, p.bh));
  return gru_blend(tape, z, h_prev, candidate);
}

// ---------------------------------------------------------------------------
// Stacked ConvGRUs.

struct StackConfig {
  std::vector<std::size_t> input_channels;   // C_x per layer (encoder tap channels)
  std::vector<std::size_t> hidden_channels{128, 256, 256};
  std::size_t input_kernel = 5;
  std::size_t hidden_kernel = 5;
  bool cross_layer = true;
  bool candidate_cross = false;
  bool gate_bias = false;
  double dropout = 0.0;  // drop probability on the cross-layer input, training only

  std::size_t layers() const { return hidden_channels.size(); }

  ConvGruShape layer_shape(std::size_t l) const {
    ConvGruShape s;
    s.input_channels = input_channels.at(l);
    s.hidden_channels = hidden_channels.at(l);
    s.below_channels = (cross_layer && l > 0) ? hidden_channels[l - 1] : 0;
    s.input_kernel = input_kernel;
    s.hidden_kernel = hidden_kernel;
    s.candidate_cross = candidate_cross;
    s.gate_bias = gate_bias;
    return s;
  }

  void validate() const {
    if (input_channels.size() != hidden_channels.size()) {
      throw ConfigError("stack has " + std::to_string(hidden_channels.size()) + " layers but " +
                        std::to_string(input_channels.size()) + " input channel counts");
    }
    if (hidden_channels.empty()) throw ConfigError("stack needs at least one layer");
  }
};

/// Number of scalars a stack stores: 3*k_x^2*C_x*C_h + 3*k_h^2*C_h^2 per
/// layer, plus 2*k_x^2*C_prev*C_h for the cross-layer gate kernels of layers
/// 2..L (and the optional candidate kernel and biases when enabled).
inline std::size_t count_params(const StackConfig& c) {
  c.validate();
  std::size_t total = 0;
  const std::size_t kx2 = c.input_kernel * c.input_kernel;
  const std::size_t kh2 = c.hidden_kernel * c.hidden_kernel;
  for (std::size_t l = 0; l < c.layers(); ++l) {
    const std::size_t cx = c.input_channels[l], ch = c.hidden_channels[l];
    total += 3 * kx2 * cx * ch + 3 * kh2 * ch * ch;
    if (c.cross_layer && l > 0) {
      const std::size_t cross = kx2 * c.hidden_channels[l - 1] * ch;
      total += (c.candidate_cross ? 3 : 2) * cross;
    }
    if (c.gate_bias) total += 3 * ch;
  }
  return total;
}

/// Multiply-accumulate count of one ConvGRU layer over T steps on an H1 x H2
/// grid (six convolutions per step).
inline double conv_gru_flops(std::size_t T, std::size_t h1, std::size_t h2, std::size_t k1, std::size_t k2,
                             std::size_t cx, std::size_t ch) {
  return 3.0 * T * h1 * h2 * k1 * k2 * (double(cx) * ch + double(ch) * ch);
}

/// The same for a fully connected GRU over the flattened H1 x H2 grid.
inline double fc_gru_flops(std::size_t T, std::size_t h1, std::size_t h2, std::size_t cx, std::size_t ch) {
  return 3.0 * T * double(h1) * h1 * double(h2) * h2 * (double(cx) * ch + double(ch) * ch);
}

template <typename T>
std::vector<ConvGruParams<T>> make_stack(const StackConfig& c) {
  c.validate();
  std::vector<ConvGruParams<T>> out;
  for (std::size_t l = 0; l < c.layers(); ++l) out.push_back(make_conv_gru<T>(c.layer_shape(l)));
  return out;
}

template <typename T>
struct HiddenState {
  Tensor<T> h;
  std::size_t layer = 0;
  std::size_t time = 0;
};

/// states[t][l] is h_{t+1}^{l+1}.
template <typename T>
using StackStates = std::vector<std::vector<HiddenState<T>>>;

/// Unrolls the stack over a sequence of pyramids from zero initial states.
/// Layer l > 0 receives the lower layer's current state max-pooled onto its
/// own grid. Pass an RNG to enable cross-layer dropout (training).
template <typename T>
StackStates<T> run_stack(Tape<T>& tape, const std::vector<FramePyramid<T>>& pyramids, const StackConfig& config,
                         const std::vector<ConvGruParams<T>>& params, std::mt19937_64* dropout_rng = nullptr) {
  if (pyramids.empty()) throw DimensionError("run_stack: empty sequence");
  const std::size_t L = config.layers();
  if (params.size() != L) throw ConfigError("run_stack: " + std::to_string(params.size()) + " parameter sets for " +
                                            std::to_string(L) + " layers");
  std::vector<Tensor<T>> h(L);
  for (std::size_t l = 0; l < L; ++l) {
    if (pyramids.front().maps.size() != L) {
      throw ConfigError("run_stack: pyramid has " + std::to_string(pyramids.front().maps.size()) + " levels, stack has " +
                        std::to_string(L) + " layers");
    }
    const auto& x = pyramids.front().maps[l];
    h[l] = Tensor<T>(Shape{config.hidden_channels[l], x.extent(1), x.extent(2)});
  }

  StackStates<T> states;
  states.reserve(pyramids.size());
  for (std::size_t t = 0; t < pyramids.size(); ++t) {
    const auto& maps = pyramids[t].maps;
    if (maps.size() != L) throw ConfigError("run_stack: pyramid length differs from layer count");
    std::vector<HiddenState<T>> step;
    for (std::size_t l = 0; l < L; ++l) {
      const auto& x = maps[l];
      if (l > 0 && params[l].has_cross()) {
        Tensor<T> below = adaptive_max_pool2d(tape, h[l - 1], x.extent(1), x.extent(2));
        if (dropout_rng && config.dropout > 0.0) below = dropout(tape, below, config.dropout, *dropout_rng);
        h[l] = conv_gru_step(tape, x, h[l], params[l], &below);
      } else {
        h[l] = conv_gru_step(tape, x, h[l], params[l]);
      }
      step.push_back(HiddenState<T>{h[l], l, t});
    }
    states.push_back(std::move(step));
  }
  return states;
}

/// A single ConvGRU layer run on its own over a sequence of inputs.
template <typename T>
std::vector<Tensor<T>> run_layer(Tape<T>& tape, const std::vector<Tensor<T>>& inputs, const ConvGruParams<T>& params) {
  if (inputs.empty()) throw DimensionError("run_layer: empty sequence");
  Tensor<T> h(Shape{params.hidden_channels(), inputs.front().extent(1), inputs.front().extent(2)});
  std::vector<Tensor<T>> out;
  for (const auto& x : inputs) {
    h = conv_gru_step(tape, x, h, params);
    out.push_back(h);
  }
  return out;
}

}  // namespace rcn
