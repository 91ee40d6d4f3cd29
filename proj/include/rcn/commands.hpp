#pragma once

// Subcommand bodies shared by the rcn tool and the acceptance runner.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rcn/config.hpp"
#include "rcn/data.hpp"
#include "rcn/errors.hpp"
#include "rcn/eval.hpp"
#include "rcn/model.hpp"
#include "rcn/training.hpp"

namespace rcn::cmd {

namespace fs = std::filesystem;

inline void write_ids(const fs::path& path, const std::vector<std::string>& ids) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& id : ids) os << id << '\n';
}

inline std::vector<std::string> read_ids(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read identity list " + path.string());
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

struct TrainArgs {
  fs::path data;
  fs::path out;
};

/// Trains on the training half of a split drawn from cfg.seed. Writes the
/// checkpoint, loss.csv and the held-out identities (test_ids.txt) to `out`.
inline int train(const Config& cfg, const TrainArgs& args, std::ostream& log) {
  validate_model_config(cfg);
  const Dataset data = load_dataset(args.data, cfg.height, cfg.width);
  const auto split = split_identities(data.persons(), cfg.split_fraction, cfg.seed);
  fs::create_directories(args.out);
  write_ids(args.out / "train_ids.txt", split.train);
  write_ids(args.out / "test_ids.txt", split.test);

  Network<float> net{cfg, init_params<float>(cfg, cfg.seed)};
  TrainOptions options;
  options.checkpoint_dir = args.out;
  options.on_epoch = [&](std::size_t epoch, double loss) {
    log << "epoch " << epoch << " loss " << std::setprecision(6) << loss << '\n';
  };
  const auto history = train(net, data, split.train, options);
  write_loss_csv(args.out / "loss.csv", history.monitor_loss);
  log << "trained " << history.monitor_loss.size() << " epochs" << (history.stopped_early ? " (early stop)" : "")
      << ", checkpoint in " << args.out.string() << '\n';
  return 0;
}

struct EvaluateArgs {
  fs::path model;
  fs::path data;
  std::optional<fs::path> ids;  // defaults to <model>/test_ids.txt
  std::optional<fs::path> out;  // CMC CSV
};

inline int evaluate(const EvaluateArgs& args, std::ostream& log) {
  const Network<float> net = load_network<float>(args.model);
  const Dataset data = load_dataset(args.data, net.config.height, net.config.width);
  const auto ids = read_ids(args.ids ? *args.ids : args.model / "test_ids.txt");
  const CmcCurve curve = evaluate(net, data, ids);
  if (args.out) write_cmc_csv(*args.out, curve);
  log << std::fixed << std::setprecision(1);
  for (std::size_t R : {1, 5, 10, 20})
    if (R <= curve.gallery_size()) log << "rank-" << R << ' ' << rank_at(curve, R) << '\n';
  log.unsetf(std::ios::fixed);
  return 0;
}

struct TrialsArgs {
  fs::path data;
  fs::path out;
};

/// cfg.trials trials with seeds cfg.seed, cfg.seed+1, ...
inline int trials(const Config& cfg, const TrialsArgs& args, std::ostream& log) {
  const Dataset data = load_dataset(args.data, cfg.height, cfg.width);
  const auto result = run_trials<float>(data, cfg, consecutive_seeds(cfg.seed, cfg.trials), args.out,
                                        [&](const TrialResult& t) {
                                          log << "trial seed " << t.trial_seed << " rank-1 " << std::fixed
                                              << std::setprecision(1) << rank_at(t.curve, 1) << '\n';
                                          log.unsetf(std::ios::fixed);
                                        });
  log << "mean rank-1 " << std::fixed << std::setprecision(1) << rank_at(result.mean, 1) << '\n';
  log.unsetf(std::ios::fixed);
  return 0;
}

struct SynthArgs {
  fs::path out;
  std::size_t persons = 8;
  std::size_t frames = 30;
  bool packed = false;
};

inline int synth(const Config& cfg, const SynthArgs& args, std::ostream& log) {
  const Dataset data = synth_generate(args.persons, args.frames, cfg.height, cfg.width, cfg.seed);
  if (args.packed) {
    write_packed(data, args.out);
  } else {
    write_frames(data, args.out);
  }
  log << "wrote " << data.samples.size() << " sequences of " << args.frames << " frames (" << cfg.height << 'x'
      << cfg.width << ") to " << args.out.string() << '\n';
  return 0;
}

/// Exit code 4 with the failing groups named when any group exceeds tolerance.
inline int grad_check(const Config& cfg, std::ostream& log, const GradCheckOptions& opt = {}) {
  const auto report = rcn::grad_check(cfg, cfg.seed, opt);
  log << std::scientific << std::setprecision(3);
  for (const auto& g : report.groups) {
    log << (g.passed ? "ok   " : "FAIL ") << std::left << std::setw(14) << g.name << std::right << " n=" << g.checked
        << " max_rel_err=" << g.max_rel_error << '\n';
  }
  log.unsetf(std::ios::scientific);
  if (report.passed) {
    log << "gradient check passed (" << report.groups.size() << " groups)\n";
    return 0;
  }
  log << "gradient check failed:";
  for (const auto& n : report.failures()) log << ' ' << n;
  log << '\n';
  return NumericError("").exit_code();
}

inline int params(const Config& cfg, std::ostream& log) {
  validate_model_config(cfg);
  const auto stack = stack_config(cfg);
  log << "recurrent " << count_params(stack) << '\n';
  const auto p = make_params<float>(cfg);
  std::size_t enc = 0;
  for (std::size_t s = 0; s < kEncoderStages; ++s) enc += p.encoder.kernels[s].size() + p.encoder.biases[s].size();
  log << "encoder " << enc << '\n';
  log << "total " << p.scalar_count() << '\n';
  return 0;
}

}  // namespace rcn::cmd
