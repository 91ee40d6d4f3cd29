#pragma once

// Pair construction, the pairwise cross-entropy objective, RMSProp and the
// Siamese training loop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rcn/config.hpp"
#include "rcn/data.hpp"
#include "rcn/errors.hpp"
#include "rcn/model.hpp"
#include "rcn/ops.hpp"
#include "rcn/serialize.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

enum class PairLabel { kSimilar, kDissimilar };

/// Scalar form of the objective: -log s (similar) or -log(1 - s) (dissimilar),
/// with s clamped 1e-7 away from 0 and 1.
inline double pair_loss(double s, PairLabel label) {
  Tape<double> tape(false);
  return binary_cross_entropy(tape, Tensor<double>::scalar(s), label == PairLabel::kSimilar).item();
}

struct PairExample {
  std::vector<Frame> a;  // cam_a subsequence
  std::vector<Frame> b;  // cam_b subsequence
  PairLabel label = PairLabel::kSimilar;
  std::string person_a;
  std::string person_b;
  std::size_t start_a = 0;
  std::size_t start_b = 0;
};

using PairBatch = std::vector<PairExample>;

/// Sampling knobs; `augment` toggles the random mirror/crop.
struct PairSampling {
  std::size_t batch = 10;
  std::size_t T = 20;
  std::size_t crop_pad = 4;
  bool augment = true;
};

namespace detail {

inline const SequenceSample& require_sequence(const Dataset& data, const std::string& person, Camera cam) {
  const SequenceSample* s = data.find(person, cam);
  if (!s) throw DataError("person " + person + " has no " + camera_name(cam) + " sequence");
  if (s->frames.empty()) throw DataError("person " + person + " has an empty " + camera_name(cam) + " sequence");
  return *s;
}

template <typename Rng>
std::vector<Frame> draw_window(const SequenceSample& s, const PairSampling& opt, Rng& rng, std::size_t& start) {
  std::uniform_int_distribution<std::size_t> pick(0, max_start(s.frames.size(), opt.T));
  start = pick(rng);
  auto frames = subsequence(s.frames, start, opt.T);
  if (opt.augment) frames = augment(frames, sample_augmentation(rng, opt.crop_pad));
  return frames;
}

}  // namespace detail

/// A balanced batch: batch/2 similar pairs (one person, cam_a vs cam_b) then
/// batch/2 dissimilar pairs (cam_a of one person vs cam_b of another).
template <typename Rng>
PairBatch sample_pairs(const Dataset& data, const std::vector<std::string>& ids, Rng& rng, const PairSampling& opt) {
  if (ids.size() < 2) throw DataError("sample_pairs: need at least 2 identities, have " + std::to_string(ids.size()));
  if (opt.batch % 2 != 0) throw ConfigError("sample_pairs: batch size must be even");
  std::uniform_int_distribution<std::size_t> person(0, ids.size() - 1);
  std::uniform_int_distribution<std::size_t> other(0, ids.size() - 2);
  PairBatch batch;
  batch.reserve(opt.batch);
  for (std::size_t i = 0; i < opt.batch; ++i) {
    const bool similar = i < opt.batch / 2;
    const std::size_t p = person(rng);
    std::size_t q = p;
    if (!similar) {
      q = other(rng);
      if (q >= p) ++q;
    }
    PairExample ex;
    ex.label = similar ? PairLabel::kSimilar : PairLabel::kDissimilar;
    ex.person_a = ids[p];
    ex.person_b = ids[q];
    ex.a = detail::draw_window(detail::require_sequence(data, ids[p], Camera::kA), opt, rng, ex.start_a);
    ex.b = detail::draw_window(detail::require_sequence(data, ids[q], Camera::kB), opt, rng, ex.start_b);
    batch.push_back(std::move(ex));
  }
  return batch;
}

/// Fixed pairs used to track the training loss: every training identity
/// against itself across cameras and against its successor in sorted order,
/// first T frames, no augmentation.
inline PairBatch monitor_pairs(const Dataset& data, const std::vector<std::string>& ids, std::size_t T) {
  PairBatch out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (bool similar : {true, false}) {
      if (!similar && ids.size() < 2) continue;
      const std::string& q = similar ? ids[i] : ids[(i + 1) % ids.size()];
      PairExample ex;
      ex.label = similar ? PairLabel::kSimilar : PairLabel::kDissimilar;
      ex.person_a = ids[i];
      ex.person_b = q;
      ex.a = subsequence(detail::require_sequence(data, ids[i], Camera::kA).frames, 0, T);
      ex.b = subsequence(detail::require_sequence(data, q, Camera::kB).frames, 0, T);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// RMSProp.

template <typename T>
class RmsProp {
 public:
  RmsProp(double lr = 1e-3, double rho = 0.9, double eps = 1e-8) : lr_(lr), rho_(rho), eps_(eps) {}

  double lr() const { return lr_; }

  /// v <- rho v + (1 - rho) g^2 ;  p <- p - lr g / sqrt(v + eps), per scalar.
  void step(const NamedTensors<T>& params) {
    if (mean_square_.empty()) {
      for (const auto& [name, t] : params) mean_square_.emplace_back(t.size(), 0.0);
    }
    if (mean_square_.size() != params.size()) throw ConfigError("RmsProp: parameter set changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& [name, tensor] = params[i];
      Tensor<T> t = tensor;
      if (!t.has_grad()) continue;
      auto g = t.grad();
      if (!all_finite<T>(g)) throw NumericError("non-finite gradient in parameter " + name);
      auto p = t.data();
      auto& v = mean_square_[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double gk = g[k];
        v[k] = rho_ * v[k] + (1.0 - rho_) * gk * gk;
        p[k] = static_cast<T>(p[k] - lr_ * gk / std::sqrt(v[k] + eps_));
      }
    }
  }

  const std::vector<std::vector<double>>& mean_square() const { return mean_square_; }

 private:
  double lr_, rho_, eps_;
  std::vector<std::vector<double>> mean_square_;
};

// ---------------------------------------------------------------------------
// Training loop.

struct TrainHistory {
  std::vector<double> monitor_loss;  // per epoch, mean over the fixed monitor pairs after the epoch's updates
  std::vector<double> batch_loss;    // per epoch, mean over the sampled (augmented, dropout) pairs
  double initial_monitor_loss = 0.0;
  bool stopped_early = false;
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(std::size_t epoch, double monitor_loss)> on_epoch;
};

/// Mean per-pair loss over `pairs` without dropout or gradient tracking.
template <typename T>
double mean_pair_loss(const Network<T>& net, const PairBatch& pairs) {
  if (pairs.empty()) return 0.0;
  Siamese<T> siamese(net);
  double total = 0.0;
  for (const auto& ex : pairs) {
    Tape<T> tape(false);
    const auto s = siamese.forward(tape, ex.a, ex.b);
    total += static_cast<double>(binary_cross_entropy(tape, s, ex.label == PairLabel::kSimilar).item());
  }
  return total / static_cast<double>(pairs.size());
}

/// Accumulates the gradient of the summed batch loss into the parameters and
/// returns that sum.
template <typename T>
double accumulate_batch_gradient(const Network<T>& net, const PairBatch& batch, std::mt19937_64* dropout_rng) {
  Siamese<T> siamese(net);
  double total = 0.0;
  for (const auto& ex : batch) {
    Tape<T> tape;
    const auto s = siamese.forward(tape, ex.a, ex.b, dropout_rng);
    const auto loss = binary_cross_entropy(tape, s, ex.label == PairLabel::kSimilar);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) throw NumericError("non-finite pair loss");
    tape.backward(loss);
    total += value;
  }
  return total;
}

template <typename T>
void save_network(const std::filesystem::path& dir, const Network<T>& net) {
  NamedTensors<float> out;
  for (const auto& [name, t] : net.params.named()) out.emplace_back(name, cast<float>(t));
  save_checkpoint(dir, out);
  std::ofstream cfg(dir / "config.txt", std::ios::binary);
  if (!cfg) throw DataError("cannot write " + (dir / "config.txt").string());
  cfg << net.config.to_text();
}

template <typename T>
Network<T> load_network(const std::filesystem::path& dir) {
  Config cfg = Config::load((dir / "config.txt").string());
  auto named = load_checkpoint<float>(dir);
  return Network<T>{cfg, params_from<T>(cfg, named)};
}

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& losses) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "epoch,mean_loss\n";
  os.precision(9);
  for (std::size_t e = 0; e < losses.size(); ++e) os << (e + 1) << ',' << losses[e] << '\n';
}

/// Runs `config.epochs` epochs of: sample batches -> forward both branches ->
/// loss -> backward -> clip to [-5, 5] -> RMSProp. Stops early once the
/// monitor loss has not improved for `config.patience` epochs (0 disables).
/// On a non-finite loss the last good parameters are restored (and written to
/// the checkpoint directory when one is configured) before NumericError is
/// rethrown.
template <typename T>
TrainHistory train(Network<T>& net, const Dataset& data, const std::vector<std::string>& ids,
                   const TrainOptions& options = {}) {
  const Config& cfg = net.config;
  validate_model_config(cfg);
  if (ids.size() < 2) throw DataError("train: need at least 2 training identities");

  std::seed_seq sampling_seed{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 1u};
  std::seed_seq dropout_seed{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 2u};
  std::mt19937_64 sampling_rng(sampling_seed);
  std::mt19937_64 dropout_rng(dropout_seed);
  RmsProp<T> optimizer(cfg.lr, cfg.rho, cfg.eps);
  const PairSampling sampling{cfg.batch, cfg.T, cfg.crop_pad, true};
  const PairBatch monitor = monitor_pairs(data, ids, cfg.T);

  TrainHistory history;
  history.initial_monitor_loss = mean_pair_loss(net, monitor);
  NamedTensors<T> last_good;
  for (const auto& [name, t] : net.params.named()) last_good.emplace_back(name, t.clone());

  double best = history.initial_monitor_loss;
  std::size_t best_epoch = 0;
  const auto params = net.params.named();
  std::vector<Tensor<T>> tensors = net.params.tensors();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double sampled = 0.0;
    try {
      for (std::size_t b = 0; b < cfg.batches_per_epoch; ++b) {
        const PairBatch batch = sample_pairs(data, ids, sampling_rng, sampling);
        net.params.zero_grad();
        sampled += accumulate_batch_gradient(net, batch, &dropout_rng) / double(batch.size());
        clip_gradients(tensors, T(-5), T(5));
        optimizer.step(params);
      }
      const double monitored = mean_pair_loss(net, monitor);
      if (!std::isfinite(monitored)) throw NumericError("non-finite monitor loss at epoch " + std::to_string(epoch));
      history.monitor_loss.push_back(monitored);
      history.batch_loss.push_back(sampled / double(cfg.batches_per_epoch));
    } catch (const NumericError&) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T> dst = params[i].second;
        std::copy(last_good[i].second.data().begin(), last_good[i].second.data().end(), dst.data().begin());
      }
      if (options.checkpoint_dir) save_network(*options.checkpoint_dir, net);
      throw;
    }

    last_good.clear();
    for (const auto& [name, t] : net.params.named()) last_good.emplace_back(name, t.clone());
    const double monitored = history.monitor_loss.back();
    if (options.on_epoch) options.on_epoch(epoch, monitored);
    if (options.checkpoint_dir && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      save_network(*options.checkpoint_dir, net);
    }
    if (monitored < best - 1e-6 * std::abs(best)) {
      best = monitored;
      best_epoch = epoch;
    } else if (cfg.patience > 0 && epoch - best_epoch >= cfg.patience) {
      history.stopped_early = true;
      break;
    }
  }
  for (auto& t : tensors) t.drop_grad();
  if (options.checkpoint_dir) save_network(*options.checkpoint_dir, net);
  return history;
}

}  // namespace rcn
