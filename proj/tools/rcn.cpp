// rcn: train, evaluate and inspect recurrent convolutional sequence-similarity models.

#include <cstdint>
#include <exception>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rcn/commands.hpp"
#include "rcn/config.hpp"
#include "rcn/errors.hpp"

namespace {

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> overrides;
};

void add_common(CLI::App* sub, Common& common) {
  sub->add_option("--config", common.config_path, "key = value configuration file")->check(CLI::ExistingFile);
  sub->add_option("--seed", common.seed, "64-bit seed for all randomness")->required();
  for (const auto& key : rcn::Config::keys()) {
    if (key == "seed") continue;
    sub->add_option_function<std::string>(
        "--" + key, [&common, key](const std::string& v) { common.overrides[key] = v; }, "override " + key);
  }
}

rcn::Config resolve(const Common& common, const rcn::Config& base = {}) {
  rcn::Config cfg = common.config_path.empty() ? base : rcn::Config::load(common.config_path);
  for (const auto& [k, v] : common.overrides) cfg.set(k, v);
  cfg.seed = common.seed;
  cfg.validate();
  std::cout << "seed " << cfg.seed << std::endl;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent convolutional sequence similarity"};
  app.require_subcommand(1);

  Common common;
  rcn::cmd::TrainArgs train_args;
  rcn::cmd::EvaluateArgs eval_args;
  rcn::cmd::TrialsArgs trials_args;
  rcn::cmd::SynthArgs synth_args;
  std::string eval_ids, eval_out;

  auto* train = app.add_subcommand("train", "train on the training half of a seeded identity split");
  add_common(train, common);
  train->add_option("--data", train_args.data, "dataset root")->required();
  train->add_option("--out", train_args.out, "checkpoint directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "CMC of a checkpoint on held-out identities");
  add_common(evaluate, common);
  evaluate->add_option("--model", eval_args.model, "checkpoint directory")->required();
  evaluate->add_option("--data", eval_args.data, "dataset root")->required();
  evaluate->add_option("--ids", eval_ids, "identity list (default: <model>/test_ids.txt)");
  evaluate->add_option("--out", eval_out, "CMC CSV output");

  auto* trials = app.add_subcommand("trials", "repeated split/train/evaluate with averaged CMC");
  add_common(trials, common);
  trials->add_option("--data", trials_args.data, "dataset root")->required();
  trials->add_option("--out", trials_args.out, "output directory")->required();

  auto* synth = app.add_subcommand("synth", "write a synthetic two-camera dataset");
  add_common(synth, common);
  synth->add_option("--out", synth_args.out, "dataset root")->required();
  synth->add_option("--persons", synth_args.persons, "number of identities");
  synth->add_option("--frames", synth_args.frames, "frames per sequence");
  synth->add_flag("--packed", synth_args.packed, "write index.tsv plus one PPM strip per sequence");

  auto* grad = app.add_subcommand("grad-check", "finite-difference check of every parameter group");
  add_common(grad, common);

  auto* params = app.add_subcommand("params", "parameter counts");
  add_common(params, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return rcn::cmd::train(resolve(common), train_args, std::cout);
    if (evaluate->parsed()) {
      resolve(common);
      if (!eval_ids.empty()) eval_args.ids = eval_ids;
      if (!eval_out.empty()) eval_args.out = eval_out;
      return rcn::cmd::evaluate(eval_args, std::cout);
    }
    if (trials->parsed()) return rcn::cmd::trials(resolve(common), trials_args, std::cout);
    if (synth->parsed()) return rcn::cmd::synth(resolve(common), synth_args, std::cout);
    if (grad->parsed()) return rcn::cmd::grad_check(resolve(common, rcn::grad_check_config()), std::cout);
    if (params->parsed()) return rcn::cmd::params(resolve(common), std::cout);
  } catch (const rcn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
