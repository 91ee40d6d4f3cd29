#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "rcn/eval.hpp"

using namespace rcn;
namespace fs = std::filesystem;

namespace {

// Brute-force oracle: a probe's true rank is 1 + the number of gallery entries
// that beat it, where an equal score beats it only from a lower gallery index.
std::vector<double> counting_oracle(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& truth) {
  const std::size_t G = scores.front().size();
  std::vector<double> cmc(G, 0.0);
  for (std::size_t p = 0; p < scores.size(); ++p) {
    std::size_t rank = 1;
    for (std::size_t g = 0; g < G; ++g) {
      const double s = scores[p][g], t = scores[p][truth[p]];
      if (s > t || (s == t && g < truth[p])) ++rank;
    }
    for (std::size_t r = rank; r <= G; ++r) cmc[r - 1] += 1.0 / double(scores.size());
  }
  return cmc;
}

Config small_config() {
  Config cfg = grad_check_config();
  cfg.epochs = 1;
  cfg.batch = 2;
  cfg.patience = 0;
  cfg.seed = 3;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Cmc, RanksOneTwoTwo) {
  const auto c = cmc_from_ranks({1, 2, 2}, 3);
  EXPECT_DOUBLE_EQ(c.match_rate[0], 1.0 / 3);
  EXPECT_DOUBLE_EQ(c.match_rate[1], 1.0);
  EXPECT_DOUBLE_EQ(c.match_rate[2], 1.0);
  const std::vector<std::vector<double>> scores{{0.9, 0.1, 0.2}, {0.8, 0.7, 0.1}, {0.3, 0.1, 0.2}};
  const auto s = cmc_from_scores(scores, {0, 1, 2});
  EXPECT_EQ(s.match_rate, c.match_rate);
}

TEST(Cmc, GalleryOfOneAlwaysMatches) {
  const auto c = cmc_from_scores({{0.01}}, {0});
  ASSERT_EQ(c.gallery_size(), 1u);
  EXPECT_EQ(c.match_rate[0], 1.0);
}

TEST(Cmc, DegenerateModelMatchesTieBreakBaseline) {
  const std::size_t n = 5;
  const std::vector<std::vector<double>> scores(n, std::vector<double>(n, 0.5));
  std::vector<std::size_t> truth(n);
  std::iota(truth.begin(), truth.end(), std::size_t{0});
  const auto c = cmc_from_scores(scores, truth);
  const auto oracle = counting_oracle(scores, truth);
  for (std::size_t r = 0; r < n; ++r) EXPECT_NEAR(c.match_rate[r], oracle[r], 1e-12);
  for (std::size_t r = 1; r <= n; ++r) EXPECT_DOUBLE_EQ(c.match_rate[r - 1], double(r) / double(n));
}

TEST(Cmc, MatchesCountingOracleOnRandomMatrices) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> level(0, 3);  // coarse levels force ties
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t P = 1 + trial % 7, G = P + trial % 3;
    std::vector<std::vector<double>> scores(P, std::vector<double>(G));
    std::vector<std::size_t> truth(P);
    for (std::size_t p = 0; p < P; ++p) {
      for (auto& v : scores[p]) v = level(rng) / 4.0;
      truth[p] = std::uniform_int_distribution<std::size_t>(0, G - 1)(rng);
    }
    const auto c = cmc_from_scores(scores, truth);
    const auto oracle = counting_oracle(scores, truth);
    ASSERT_EQ(c.match_rate.size(), oracle.size());
    for (std::size_t r = 0; r < G; ++r) EXPECT_NEAR(c.match_rate[r], oracle[r], 1e-12);
    for (std::size_t r = 1; r < G; ++r) EXPECT_GE(c.match_rate[r], c.match_rate[r - 1]);
    EXPECT_DOUBLE_EQ(c.match_rate.back(), 1.0);
  }
}

TEST(Ranking, OrderIsDescendingAndTiesKeepGalleryOrder) {
  const auto r = rank_gallery({0.2, 0.9, 0.2, 0.5}, 2);
  EXPECT_EQ(r.order, (std::vector<std::size_t>{1, 3, 0, 2}));
  EXPECT_EQ(r.scores, (std::vector<double>{0.9, 0.5, 0.2, 0.2}));
  EXPECT_EQ(r.true_rank, 4u);
  EXPECT_THROW(rank_gallery({0.1}, 1), ConfigError);
}

TEST(Ranking, GalleryPermutationKeepsTrueRankWithDistinctScores) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> scores(9);
    for (auto& v : scores) v = u(rng);
    const std::size_t truth = trial % 9;
    std::vector<std::size_t> perm(9);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> permuted(9);
    std::size_t new_truth = 0;
    for (std::size_t i = 0; i < 9; ++i) {
      permuted[i] = scores[perm[i]];
      if (perm[i] == truth) new_truth = i;
    }
    EXPECT_EQ(rank_gallery(scores, truth).true_rank, rank_gallery(permuted, new_truth).true_rank);
  }
}

TEST(RankAt, ExamplesAndRange) {
  CmcCurve c{{1.0 / 3, 1.0, 1.0}};
  EXPECT_NEAR(rank_at(c, 1), 33.3, 0.05);
  EXPECT_EQ(rank_at(c, 3), 100.0);
  EXPECT_THROW(rank_at(c, 0), ConfigError);
  EXPECT_THROW(rank_at(c, 4), ConfigError);
}

TEST(MeanCurve, SingleAndIdentical) {
  CmcCurve a{{0.25, 0.5, 1.0}};
  EXPECT_EQ(mean_curve({a}).match_rate, a.match_rate);
  EXPECT_EQ(mean_curve({a, a}).match_rate, a.match_rate);
  EXPECT_EQ(mean_curve({a, a}).trials, 2u);
  CmcCurve b{{0.75, 1.0, 1.0}};
  EXPECT_EQ(mean_curve({a, b}).match_rate, (std::vector<double>{0.5, 0.75, 1.0}));
  EXPECT_THROW(mean_curve({}), ConfigError);
  EXPECT_THROW(mean_curve({a, CmcCurve{{1.0}}}), ConfigError);
}

TEST(Evaluate, MissingCameraIsProtocolError) {
  auto data = synth_generate(3, 4, 16, 8, 1);
  data.samples.erase(std::remove_if(data.samples.begin(), data.samples.end(),
                                    [](const SequenceSample& s) { return s.person_id == "p001" && s.camera == Camera::kB; }),
                     data.samples.end());
  const auto cfg = small_config();
  Network<float> net{cfg, init_params<float>(cfg, 1)};
  try {
    evaluate(net, data, {"p000", "p001"});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("p001"), std::string::npos);
  }
}

TEST(Evaluate, ReadOnlyAndDeterministic) {
  const auto data = synth_generate(4, 4, 16, 8, 1);
  const auto cfg = small_config();
  Network<float> net{cfg, init_params<float>(cfg, 1)};
  std::vector<std::vector<float>> before;
  for (const auto& [name, t] : net.params.named()) before.emplace_back(t.data().begin(), t.data().end());
  const auto a = evaluate(net, data, data.persons());
  const auto b = evaluate(net, data, {"p003", "p001", "p002", "p000"});
  EXPECT_EQ(a.match_rate, b.match_rate);
  const auto named = net.params.named();
  for (std::size_t i = 0; i < named.size(); ++i) {
    EXPECT_TRUE(std::equal(before[i].begin(), before[i].end(), named[i].second.data().begin()));
    EXPECT_FALSE(named[i].second.has_grad());
  }
}

TEST(Evaluate, ScoresAverageOverTestConditions) {
  const auto data = synth_generate(3, 4, 16, 8, 1);
  auto cfg = small_config();
  cfg.tta_mirror = false;
  Network<double> plain{cfg, init_params<double>(cfg, 1)};
  const auto identity = score_matrix(plain, data, data.persons());
  cfg.tta_mirror = true;
  Network<double> tta{cfg, plain.params};
  const auto averaged = score_matrix(tta, data, data.persons());
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t g = 0; g < 3; ++g) {
      Tape<double> tape(false);
      const Augmentation flip{true, 0, 0};
      const auto fa = branch_feature(tape, tta, augment(subsequence(data.samples[2 * p].frames, 0, cfg.T), flip));
      const auto fb = branch_feature(tape, tta, augment(subsequence(data.samples[2 * g + 1].frames, 0, cfg.T), flip));
      const double mirrored = similarity(tape, fa.h_bar, fb.h_bar, tta.params.sim).item();
      EXPECT_NEAR(averaged[p][g], 0.5 * (identity[p][g] + mirrored), 1e-12);
    }
}

TEST(Trials, WritesCsvsAndMeanIsRecomputable) {
  const auto data = synth_generate(4, 4, 16, 8, 2);
  const auto cfg = small_config();
  const fs::path dir = fs::temp_directory_path() / "rcn_test_trials";
  fs::remove_all(dir);
  std::size_t seen = 0;
  const auto res = run_trials<float>(data, cfg, {5, 6}, dir, [&](const TrialResult&) { ++seen; });
  EXPECT_EQ(seen, 2u);
  ASSERT_EQ(res.trials.size(), 2u);
  EXPECT_EQ(res.mean.match_rate, mean_curve({res.trials[0].curve, res.trials[1].curve}).match_rate);
  EXPECT_TRUE(fs::exists(dir / "loss_trial1.csv"));
  EXPECT_TRUE(fs::exists(dir / "loss_trial2.csv"));

  std::istringstream rows(slurp(dir / "cmc_trials.csv"));
  std::string line;
  std::getline(rows, line);
  EXPECT_EQ(line, "trial,rank,match_rate");
  std::vector<double> sum(2, 0.0);
  while (std::getline(rows, line)) {
    int trial, rank;
    double rate;
    ASSERT_EQ(std::sscanf(line.c_str(), "%d,%d,%lf", &trial, &rank, &rate), 3);
    sum[rank - 1] += rate / 2;
  }
  std::istringstream mean(slurp(dir / "cmc_mean.csv"));
  std::getline(mean, line);
  EXPECT_EQ(line, "rank,match_rate");
  for (std::size_t r = 0; r < 2; ++r) {
    ASSERT_TRUE(std::getline(mean, line));
    int rank;
    double rate;
    ASSERT_EQ(std::sscanf(line.c_str(), "%d,%lf", &rank, &rate), 2);
    EXPECT_NEAR(rate, sum[r], 1e-12);
  }
  fs::remove_all(dir);
}

TEST(Trials, IdenticalSeedsGiveIdenticalCurves) {
  const auto data = synth_generate(4, 4, 16, 8, 2);
  const auto cfg = small_config();
  const auto res = run_trials<float>(data, cfg, {9, 9});
  EXPECT_EQ(res.trials[0].curve.match_rate, res.trials[1].curve.match_rate);
  EXPECT_EQ(res.mean.match_rate, res.trials[0].curve.match_rate);
  EXPECT_EQ(run_trials<float>(data, cfg, {9}).mean.match_rate, res.trials[0].curve.match_rate);
  EXPECT_THROW(run_trials<float>(data, cfg, {}), ConfigError);
}

TEST(Trials, FailingTrialLeavesCompletedOnDisk) {
  auto data = synth_generate(4, 4, 16, 8, 2);
  const auto cfg = small_config();
  const fs::path dir = fs::temp_directory_path() / "rcn_test_partial";
  fs::remove_all(dir);
  // After the first trial every gallery sequence is emptied, so the second one fails.
  const auto break_data = [&](const TrialResult&) {
    for (auto& s : data.samples)
      if (s.camera == Camera::kB) s.frames.clear();
  };
  EXPECT_THROW(run_trials<float>(data, cfg, {1, 2}, dir, break_data), DataError);
  EXPECT_TRUE(fs::exists(dir / "cmc_trials.csv"));
  EXPECT_TRUE(fs::exists(dir / "loss_trial1.csv"));
  EXPECT_FALSE(fs::exists(dir / "loss_trial2.csv"));
  fs::remove_all(dir);
}

TEST(GradCheck, PassesOnToyConfig) {
  const auto report = grad_check(grad_check_config(), 1);
  EXPECT_TRUE(report.passed);
  EXPECT_TRUE(report.failures().empty());
  std::vector<std::string> names;
  for (const auto& g : report.groups) {
    names.push_back(g.name);
    EXPECT_LT(g.max_rel_error, 1e-3) << g.name;
    EXPECT_GT(g.checked, 0u);
  }
  for (const char* expected : {"enc.conv0.w", "rcn.l1.Wz", "rcn.l1.U", "rcn.l2.Wzx", "rcn.l3.Wrx", "proj.l1", "sim.v", "sim.c"})
    EXPECT_NE(std::find(names.begin(), names.end(), expected), names.end()) << expected;
}

TEST(GradCheck, CorruptedBackwardRuleIsNamed) {
  GradCheckOptions opt;
  opt.corrupt_op = OpKind::kSigmoid;
  const auto report = grad_check(grad_check_config(), 1, opt);
  EXPECT_FALSE(report.passed);
  const auto failed = report.failures();
  ASSERT_FALSE(failed.empty());
  EXPECT_NE(std::find(failed.begin(), failed.end(), "sim.v"), failed.end());
}

TEST(GradCheck, ZeroChannelModelIsConfigError) {
  auto cfg = grad_check_config();
  cfg.channels = {0, 0, 0};
  EXPECT_THROW(grad_check(cfg, 1), ConfigError);
}
