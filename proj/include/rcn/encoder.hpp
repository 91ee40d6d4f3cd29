#pragma once

// Per-frame convolutional encoder: Conv0 Pool0 Conv1 Pool1 Conv2 Pool2 Conv3,
// 3x3 stride-1 convolutions each followed by tanh, 2x2 stride-2 max pooling.
// Three maps are tapped for the recurrent layers: after Pool0, after Pool1
// and after Conv3.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "rcn/errors.hpp"
#include "rcn/ops.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

inline constexpr std::size_t kEncoderStages = 4;
inline constexpr std::size_t kEncoderKernel = 3;
inline constexpr std::size_t kPyramidLevels = 3;
inline constexpr std::size_t kPoolWindow = 2;
inline constexpr std::size_t kPoolStride = 2;

struct EncoderGeometry {
  std::size_t height = 160;
  std::size_t width = 60;
  std::array<std::size_t, kEncoderStages> channels{32, 32, 32, 32};
  std::size_t padding = 0;

  /// Shape after every stage: conv0, pool0, conv1, pool1, conv2, pool2, conv3.
  std::vector<Shape> stage_shapes() const {
    std::vector<Shape> out;
    Shape cur{3, height, width};
    std::size_t in_c = 3;
    for (std::size_t s = 0; s < kEncoderStages; ++s) {
      cur = conv2d_shape(cur, {channels[s], in_c, kEncoderKernel, kEncoderKernel}, 1, padding);
      out.push_back(cur);
      in_c = channels[s];
      if (s + 1 < kEncoderStages) {
        cur = max_pool2d_shape(cur, kPoolWindow, kPoolWindow, kPoolStride);
        out.push_back(cur);
      }
    }
    return out;
  }

  /// Shapes of the three tapped maps, finest first.
  std::array<Shape, kPyramidLevels> tap_shapes() const {
    const auto s = stage_shapes();
    return {s[1], s[3], s[6]};
  }

  /// Throws unless every stage is non-empty and tap extents strictly shrink.
  void validate() const {
    std::array<Shape, kPyramidLevels> taps;
    try {
      taps = tap_shapes();
    } catch (const DimensionError& e) {
      throw ConfigError("encoder cannot process " + std::to_string(height) + "x" +
                        std::to_string(width) + " frames: " + e.what());
    }
    for (std::size_t l = 0; l < kPyramidLevels; ++l) {
      if (taps[l][1] == 0 || taps[l][2] == 0) throw ConfigError("encoder tap " + std::to_string(l) + " is empty");
      if (l > 0 && (taps[l][1] >= taps[l - 1][1] || taps[l][2] >= taps[l - 1][2])) {
        throw ConfigError("encoder tap resolutions must strictly decrease");
      }
    }
  }
};

template <typename T>
struct EncoderParams {
  std::array<Tensor<T>, kEncoderStages> kernels;  // [C_out x C_in x 3 x 3]
  std::array<Tensor<T>, kEncoderStages> biases;   // [C_out]

  static EncoderParams zeros(const EncoderGeometry& g) {
    EncoderParams p;
    std::size_t in_c = 3;
    for (std::size_t s = 0; s < kEncoderStages; ++s) {
      p.kernels[s] = Tensor<T>(Shape{g.channels[s], in_c, kEncoderKernel, kEncoderKernel});
      p.biases[s] = Tensor<T>(Shape{g.channels[s]});
      p.kernels[s].set_requires_grad();
      p.biases[s].set_requires_grad();
      in_c = g.channels[s];
    }
    return p;
  }

  std::size_t stage_param_count(std::size_t stage) const {
    return kernels[stage].size() + biases[stage].size();
  }
};

/// Feature maps x_t^l for one frame, finest level first.
template <typename T>
struct FramePyramid {
  std::vector<Tensor<T>> maps;
};

template <typename T>
FramePyramid<T> encode_frame(Tape<T>& tape, const Tensor<T>& frame, const EncoderParams<T>& params,
                             const EncoderGeometry& geometry) {
  const Shape expected{3, geometry.height, geometry.width};
  if (frame.shape() != expected) {
    throw DimensionError("encode_frame: frame is " + shape_str(frame.shape()) + " but the encoder expects " +
                         shape_str(expected) + "; resize frames during ingestion");
  }
  FramePyramid<T> out;
  Tensor<T> cur = frame;
  for (std::size_t s = 0; s < kEncoderStages; ++s) {
    cur = conv2d(tape, cur, params.kernels[s], 1, geometry.padding);
    cur = bias_add(tape, cur, params.biases[s]);
    cur = rcn::tanh(tape, cur);
    if (s + 1 < kEncoderStages) {
      cur = max_pool2d(tape, cur, kPoolWindow, kPoolWindow, kPoolStride);
      if (s < 2) out.maps.push_back(cur);
    }
  }
  out.maps.push_back(cur);
  return out;
}

template <typename T>
std::vector<FramePyramid<T>> encode_sequence(Tape<T>& tape, const std::vector<Tensor<T>>& frames,
                                             const EncoderParams<T>& params, const EncoderGeometry& geometry) {
  if (frames.empty()) throw DimensionError("encode_sequence: empty frame sequence");
  std::vector<FramePyramid<T>> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    if (f.shape() != frames.front().shape()) {
      throw DimensionError("encode_sequence: frames differ in shape (" + shape_str(f.shape()) + " vs " +
                           shape_str(frames.front().shape()) + ")");
    }
    out.push_back(encode_frame(tape, f, params, geometry));
  }
  return out;
}

}  // namespace rcn
