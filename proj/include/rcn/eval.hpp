#pragma once

// Probe/gallery evaluation, CMC curves, the multi-trial harness and the
// finite-difference gradient check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rcn/config.hpp"
#include "rcn/data.hpp"
#include "rcn/errors.hpp"
#include "rcn/model.hpp"
#include "rcn/training.hpp"

namespace rcn {

/// match_rate[R-1] is the fraction of probes whose true match ranks <= R.
struct CmcCurve {
  std::vector<double> match_rate;
  std::size_t trials = 1;

  std::size_t gallery_size() const { return match_rate.size(); }
};

struct RankingResult {
  std::vector<std::size_t> order;  // gallery indices, best first
  std::vector<double> scores;      // scores in `order`
  std::size_t true_rank = 0;       // 1-based
};

/// Ranks one probe's gallery scores: descending score, ties kept in gallery order.
inline RankingResult rank_gallery(const std::vector<double>& scores, std::size_t true_index) {
  if (true_index >= scores.size()) throw ConfigError("rank_gallery: true match index outside the gallery");
  RankingResult r;
  r.order.resize(scores.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::size_t i = 0; i < r.order.size(); ++i) {
    r.scores.push_back(scores[r.order[i]]);
    if (r.order[i] == true_index) r.true_rank = i + 1;
  }
  return r;
}

inline CmcCurve cmc_from_ranks(const std::vector<std::size_t>& ranks, std::size_t gallery_size) {
  if (ranks.empty()) throw DataError("CMC needs at least one probe");
  CmcCurve c;
  c.match_rate.assign(gallery_size, 0.0);
  for (auto r : ranks) {
    if (r < 1 || r > gallery_size) throw ConfigError("rank " + std::to_string(r) + " outside [1, gallery size]");
    for (std::size_t k = r - 1; k < gallery_size; ++k) c.match_rate[k] += 1.0;
  }
  for (auto& v : c.match_rate) v /= static_cast<double>(ranks.size());
  return c;
}

/// scores[p][g] for probe p against gallery g; true_match[p] is the gallery
/// index holding probe p's identity.
inline CmcCurve cmc_from_scores(const std::vector<std::vector<double>>& scores,
                                const std::vector<std::size_t>& true_match) {
  if (scores.size() != true_match.size()) throw ConfigError("cmc_from_scores: one true match per probe required");
  if (scores.empty()) throw DataError("cmc_from_scores: no probes");
  std::vector<std::size_t> ranks;
  for (std::size_t p = 0; p < scores.size(); ++p) {
    if (scores[p].size() != scores.front().size()) throw ConfigError("cmc_from_scores: ragged score matrix");
    ranks.push_back(rank_gallery(scores[p], true_match[p]).true_rank);
  }
  return cmc_from_ranks(ranks, scores.front().size());
}

/// 100 * match_rate at rank R (1-based).
inline double rank_at(const CmcCurve& curve, std::size_t R) {
  if (R < 1 || R > curve.match_rate.size()) {
    throw ConfigError("rank_at: R=" + std::to_string(R) + " outside [1, " + std::to_string(curve.match_rate.size()) + "]");
  }
  return 100.0 * curve.match_rate[R - 1];
}

inline CmcCurve mean_curve(const std::vector<CmcCurve>& curves) {
  if (curves.empty()) throw ConfigError("mean_curve: no curves");
  CmcCurve out;
  out.match_rate.assign(curves.front().match_rate.size(), 0.0);
  for (const auto& c : curves) {
    if (c.match_rate.size() != out.match_rate.size()) throw ConfigError("mean_curve: curves differ in gallery size");
    for (std::size_t i = 0; i < c.match_rate.size(); ++i) out.match_rate[i] += c.match_rate[i];
  }
  for (auto& v : out.match_rate) v /= static_cast<double>(curves.size());
  out.trials = curves.size();
  return out;
}

/// Test-time augmentation conditions: identity (centre crop) and, optionally, its mirror.
inline std::vector<Augmentation> test_conditions(const Config& cfg) {
  std::vector<Augmentation> out{Augmentation{}};
  if (cfg.tta_mirror) out.push_back(Augmentation{true, 0, 0});
  return out;
}

/// Similarity of every probe (cam_a) against every gallery sequence (cam_b)
/// for the given identities in sorted order, averaged over test conditions.
/// Each sequence contributes its first T frames.
template <typename T>
std::vector<std::vector<double>> score_matrix(const Network<T>& net, const Dataset& data,
                                              const std::vector<std::string>& ids) {
  const auto conditions = test_conditions(net.config);
  const std::size_t n = ids.size();
  std::vector<std::vector<double>> scores(n, std::vector<double>(n, 0.0));
  for (const auto& cond : conditions) {
    std::vector<Tensor<T>> probe, gallery;
    for (const auto& id : ids) {
      const SequenceSample* a = data.find(id, Camera::kA);
      const SequenceSample* b = data.find(id, Camera::kB);
      if (!a || !b || a->frames.empty() || b->frames.empty()) {
        throw DataError("evaluation protocol: identity " + id + " is missing from a camera");
      }
      Tape<T> tape(false);
      probe.push_back(branch_feature(tape, net, augment(subsequence(a->frames, 0, net.config.T), cond)).h_bar);
      gallery.push_back(branch_feature(tape, net, augment(subsequence(b->frames, 0, net.config.T), cond)).h_bar);
    }
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t g = 0; g < n; ++g) {
        Tape<T> tape(false);
        scores[p][g] += static_cast<double>(similarity(tape, probe[p], gallery[g], net.params.sim).item());
      }
    }
  }
  for (auto& row : scores)
    for (auto& v : row) v /= static_cast<double>(conditions.size());
  return scores;
}

/// CMC of `net` on the given test identities (probe = cam_a, gallery = cam_b).
template <typename T>
CmcCurve evaluate(const Network<T>& net, const Dataset& data, std::vector<std::string> test_ids) {
  if (test_ids.empty()) throw DataError("evaluate: no test identities");
  std::sort(test_ids.begin(), test_ids.end());
  const auto scores = score_matrix(net, data, test_ids);
  std::vector<std::size_t> truth(test_ids.size());
  std::iota(truth.begin(), truth.end(), std::size_t{0});
  return cmc_from_scores(scores, truth);
}

// ---------------------------------------------------------------------------
// Trials.

struct TrialResult {
  std::uint64_t trial_seed = 0;
  IdentitySplit split;
  TrainHistory history;
  CmcCurve curve;
};

struct TrialsResult {
  std::vector<TrialResult> trials;
  CmcCurve mean;
};

inline void write_cmc_csv(const std::filesystem::path& path, const CmcCurve& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "rank,match_rate\n";
  os.precision(17);
  for (std::size_t r = 0; r < c.match_rate.size(); ++r) os << (r + 1) << ',' << c.match_rate[r] << '\n';
}

inline void write_trials_csv(const std::filesystem::path& path, const std::vector<TrialResult>& trials) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "trial,rank,match_rate\n";
  os.precision(17);
  for (std::size_t t = 0; t < trials.size(); ++t)
    for (std::size_t r = 0; r < trials[t].curve.match_rate.size(); ++r)
      os << (t + 1) << ',' << (r + 1) << ',' << trials[t].curve.match_rate[r] << '\n';
}

/// Training seed used for a trial: the trial seed mixed with the base seed.
inline std::uint64_t trial_training_seed(std::uint64_t base_seed, std::uint64_t trial_seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(base_seed), static_cast<std::uint32_t>(base_seed >> 32),
                    static_cast<std::uint32_t>(trial_seed), static_cast<std::uint32_t>(trial_seed >> 32)};
  std::uint64_t out[1];
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out[0] = (std::uint64_t(words[0]) << 32) | words[1];
  return out[0];
}

/// For each trial seed: split identities, train a fresh network on the
/// training half, evaluate on the test half. When `out_dir` is given the
/// per-trial table, loss histories and mean curve are written after every
/// trial, so a failing trial leaves the completed ones on disk.
template <typename T>
TrialsResult run_trials(const Dataset& data, const Config& cfg, const std::vector<std::uint64_t>& trial_seeds,
                        const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                        const std::function<void(const TrialResult&)>& on_trial = {}) {
  if (trial_seeds.empty()) throw ConfigError("run_trials: need at least one trial");
  validate_model_config(cfg);
  if (out_dir) std::filesystem::create_directories(*out_dir);
  TrialsResult result;
  const auto persons = data.persons();
  for (std::size_t k = 0; k < trial_seeds.size(); ++k) {
    TrialResult trial;
    trial.trial_seed = trial_seeds[k];
    trial.split = split_identities(persons, cfg.split_fraction, trial_seeds[k]);
    Config trial_cfg = cfg;
    trial_cfg.seed = trial_training_seed(cfg.seed, trial_seeds[k]);
    Network<T> net{trial_cfg, init_params<T>(trial_cfg, trial_cfg.seed)};
    trial.history = train(net, data, trial.split.train);
    trial.curve = evaluate(net, data, trial.split.test);
    result.trials.push_back(trial);
    if (on_trial) on_trial(result.trials.back());
    if (out_dir) {
      write_trials_csv(*out_dir / "cmc_trials.csv", result.trials);
      write_loss_csv(*out_dir / ("loss_trial" + std::to_string(k + 1) + ".csv"), trial.history.monitor_loss);
      std::vector<CmcCurve> curves;
      for (const auto& t : result.trials) curves.push_back(t.curve);
      write_cmc_csv(*out_dir / "cmc_mean.csv", mean_curve(curves));
    }
  }
  std::vector<CmcCurve> curves;
  for (const auto& t : result.trials) curves.push_back(t.curve);
  result.mean = mean_curve(curves);
  return result;
}

/// Trial seeds base, base+1, ..., base+n-1.
inline std::vector<std::uint64_t> consecutive_seeds(std::uint64_t base, std::size_t n) {
  std::vector<std::uint64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = base + i;
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check.

/// Tiny model used by the gradient check: 16x8 frames, T=3, channels 4/8/8.
inline Config grad_check_config() {
  Config cfg;
  cfg.height = 16;
  cfg.width = 8;
  cfg.encoder_channels = {4, 4, 4, 4};
  cfg.encoder_padding = 1;
  cfg.channels = {4, 8, 8};
  cfg.kernel_input = cfg.kernel_hidden = 3;
  cfg.T = 3;
  cfg.dropout = 0.0;
  return cfg;
}

struct GradGroupResult {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradGroupResult> groups;
  double tolerance = 1e-3;
  bool passed = true;

  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const auto& g : groups)
      if (!g.passed) out.push_back(g.name);
    return out;
  }
};

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-3;
  double abs_floor = 1e-6;  // denominators below this are treated as this
  std::optional<OpKind> corrupt_op;  // scales that op's backward rule by corrupt_factor
  double corrupt_factor = 1.5;
};

/// Central finite differences over every scalar of every parameter tensor,
/// compared to the taped gradient of the pair loss, in 64-bit arithmetic.
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
inline GradCheckReport grad_check(const Config& cfg, std::uint64_t seed, const GradCheckOptions& opt = {}) {
  validate_model_config(cfg);
  Network<double> net{cfg, init_params<double>(cfg, seed)};
  if (net.params.scalar_count() == 0) throw ConfigError("grad_check: model has no parameters");

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<float> pixel(0.0f, 1.0f);
  const auto random_sequence = [&]() {
    std::vector<Frame> frames;
    for (std::size_t t = 0; t < cfg.T; ++t) {
      Frame f(Shape{3, cfg.height, cfg.width});
      for (auto& v : f.data()) v = pixel(rng);
      frames.push_back(f);
    }
    return frames;
  };
  const auto a = random_sequence();
  const auto b = random_sequence();
  const bool similar = true;
  Siamese<double> siamese(net);

  const auto loss_value = [&]() {
    Tape<double> tape(false);
    return binary_cross_entropy(tape, siamese.forward(tape, a, b), similar).item();
  };

  net.params.zero_grad();
  {
    Tape<double> tape;
    if (opt.corrupt_op) tape.inject_fault(*opt.corrupt_op, opt.corrupt_factor);
    const auto loss = binary_cross_entropy(tape, siamese.forward(tape, a, b), similar);
    tape.backward(loss);
  }

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  for (auto& [name, tensor] : net.params.named()) {
    Tensor<double> t = tensor;
    GradGroupResult group{name};
    const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                      : std::vector<double>(t.size(), 0.0);
    auto data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + opt.step;
      const double up = loss_value();
      data[i] = orig - opt.step;
      const double down = loss_value();
      data[i] = orig;
      const double numeric = (up - down) / (2 * opt.step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opt.abs_floor});
      group.max_rel_error = std::max(group.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++group.checked;
    }
    group.passed = group.max_rel_error < opt.tolerance;
    report.passed = report.passed && group.passed;
    report.groups.push_back(group);
  }
  return report;
}

}  // namespace rcn
