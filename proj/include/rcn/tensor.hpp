#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rcn/errors.hpp"

namespace rcn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
};

/// Dense row-major array with an optional gradient buffer.
///
/// A Tensor is a handle: copies alias the same storage, which is what lets a
/// Tape refer to intermediates and lets two network branches share one set of
/// parameters. Use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<TensorStorage<T>>()) {
    impl_->data.assign(shape_size(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<TensorStorage<T>>()) {
    if (shape_size(shape) != data.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                           std::to_string(shape_size(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
  }

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const noexcept { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }
  T item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<T> grad() { return ensure_grad(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> ensure_grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }
  void zero_grad() const { std::fill(impl_->grad.begin(), impl_->grad.end(), T(0)); }
  void drop_grad() const { std::vector<T>().swap(impl_->grad); }

  /// Identity comparison: true when both handles alias one storage.
  bool same(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  Tensor clone() const {
    Tensor out(shape(), std::vector<T>(impl_->data));
    out.impl_->requires_grad = impl_->requires_grad;
    return out;
  }

  Tensor reshaped(Shape shape) const {
    Tensor out(std::move(shape), std::vector<T>(impl_->data));
    return out;
  }

 private:
  std::shared_ptr<TensorStorage<T>> impl_;
};

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& in) {
  std::vector<To> out(in.size());
  std::transform(in.data().begin(), in.data().end(), out.begin(),
                 [](From v) { return static_cast<To>(v); });
  return Tensor<To>(in.shape(), std::move(out));
}

/// Primitive kinds recorded on a tape; used for diagnostics and fault injection.
enum class OpKind {
  kAdd,
  kSub,
  kMul,
  kScale,
  kSigmoid,
  kTanh,
  kGruBlend,
  kConv2d,
  kBiasAdd,
  kMaxPool,
  kAdaptiveMaxPool,
  kAvgPoolSpatial,
  kMatVec,
  kDot,
  kSum,
  kDropout,
  kL2Normalize,
  kStackMean,
  kStackMax,
  kBinaryCrossEntropy,
};

inline const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kGruBlend: return "gru_blend";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kBiasAdd: return "bias_add";
    case OpKind::kMaxPool: return "max_pool2d";
    case OpKind::kAdaptiveMaxPool: return "adaptive_max_pool2d";
    case OpKind::kAvgPoolSpatial: return "avg_pool_spatial";
    case OpKind::kMatVec: return "matvec";
    case OpKind::kDot: return "dot";
    case OpKind::kSum: return "sum";
    case OpKind::kDropout: return "dropout";
    case OpKind::kL2Normalize: return "l2_normalize";
    case OpKind::kStackMean: return "stack_mean";
    case OpKind::kStackMax: return "stack_max";
    case OpKind::kBinaryCrossEntropy: return "binary_cross_entropy";
  }
  return "?";
}

/// Define-by-run record of differentiable operations.
///
/// Ops append a node only when one of their inputs requires a gradient and the
/// tape is recording. backward() replays nodes in reverse order exactly once.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// A tape that never records: forward-only evaluation.
  static Tape inference() { return Tape(false); }

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  void record(OpKind kind, Tensor<T> output, std::function<void()> backward) {
    if (consumed_) throw StaleTapeError("recording onto a tape that was already replayed");
    nodes_.push_back(Node{kind, std::move(output), std::move(backward)});
  }

  /// Scales the output gradient seen by every node of `kind` before its rule
  /// runs. Only meant for testing gradient checkers.
  void inject_fault(OpKind kind, T factor) {
    fault_kind_ = kind;
    fault_factor_ = factor;
    has_fault_ = true;
  }

  void backward(Tensor<T> loss) {
    if (consumed_) throw StaleTapeError("backward() called twice on the same tape; record a new one");
    if (!loss.defined() || loss.size() != 1) {
      throw DimensionError("backward() needs a scalar loss, got shape " +
                           (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (nodes_.empty()) throw ConfigError("backward() on an empty tape");
    consumed_ = true;
    loss.ensure_grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      if (has_fault_ && it->kind == fault_kind_) {
        for (auto& g : it->output.grad()) g *= fault_factor_;
      }
      it->backward();
    }
  }

 private:
  struct Node {
    OpKind kind;
    Tensor<T> output;
    std::function<void()> backward;
  };

  std::vector<Node> nodes_;
  bool recording_ = true;
  bool consumed_ = false;
  bool has_fault_ = false;
  OpKind fault_kind_ = OpKind::kAdd;
  T fault_factor_ = T(1);
};

}  // namespace rcn
