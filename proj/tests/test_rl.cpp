#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "model_fixture.hpp"
#include "test_support.hpp"
#include "urbanpulse/rl.hpp"

using namespace urbanpulse;
using namespace urbanpulse::rl;
using num::Tensor;

namespace {

std::vector<double> random_rows(num::Rng& rng, std::size_t rows, std::size_t width) {
  std::vector<double> v(rows * width);
  for (auto& x : v) x = rng.normal();
  return v;
}

// Full-width head (256) on a tiny graph so the state and grouping contracts hold.
model::FlowModel head_model(std::uint64_t seed) {
  auto enc = test::tiny_encoder();
  enc.poi_embed_dim = 6;
  enc.edge_dim = 256;
  auto dec = test::tiny_decoder();
  dec.model_dim = 256;
  dec.ffn_dim = 8;
  return model::FlowModel::create(enc, dec, seed);
}

struct EnvFixture {
  test::TinySeries series = test::tiny_series(31, 5, 16, 0.5, 3);
  transfer::WindowSet set = transfer::make_window_set(series.snapshots, series.pois, series.weather, series.stats, 4, 1);
  model::FlowModel model = head_model(2);
};

}  // namespace

TEST(State, LengthAndBlocks) {
  EXPECT_EQ(kStateDim, 1560u);
  EXPECT_EQ(kTemporalBlock + kSnapshotBlock + kNodeBlock, 1560u);
  num::Rng rng(1);
  StepEmbeddings e;
  for (std::size_t n : {3u, 0u, 5u, 2u}) e.steps.push_back(random_rows(rng, n, kEdgeDim));
  EXPECT_EQ(raw_state(e, random_rows(rng, 8, kNodeFeatureDim)).size(), kStateDim);
}

TEST(State, IdenticalStepsGiveZeroTemporalBlock) {
  num::Rng rng(2);
  const auto rows = random_rows(rng, 4, kEdgeDim);
  StepEmbeddings e{{rows, rows, rows}};
  const auto s = raw_state(e, random_rows(rng, 6, kNodeFeatureDim));
  for (std::size_t i = 0; i < kTemporalBlock; ++i) ASSERT_EQ(s[i], 0.0) << i;
  EXPECT_NE(s[kTemporalBlock], 0.0);
}

TEST(State, HandComputedStatistics) {
  // One-dimensional signal in column 0: pooled means 1, 4, 0 give differences 3, -4.
  StepEmbeddings e;
  e.steps.resize(3);
  auto row = [](double v) {
    std::vector<double> r(kEdgeDim, 0.0);
    r[0] = v;
    return r;
  };
  for (double v : {0.0, 2.0}) {
    auto r = row(v);
    e.steps[0].insert(e.steps[0].end(), r.begin(), r.end());
  }
  e.steps[1] = row(4.0);
  for (double v : {-1.0, 1.0, 0.0}) {
    auto r = row(v);
    e.steps[2].insert(e.steps[2].end(), r.begin(), r.end());
  }
  const auto s = raw_state(e, std::vector<double>(kNodeFeatureDim, 2.0));
  EXPECT_DOUBLE_EQ(s[0], -0.5);                          // mean of diffs
  EXPECT_DOUBLE_EQ(s[kEdgeDim], 3.5);                    // population std
  EXPECT_DOUBLE_EQ(s[2 * kEdgeDim], 3.0);                // max
  EXPECT_DOUBLE_EQ(s[3 * kEdgeDim], -4.0);               // min
  EXPECT_DOUBLE_EQ(s[kTemporalBlock], 0.0);              // final-step mean
  EXPECT_DOUBLE_EQ(s[kTemporalBlock + kEdgeDim], std::sqrt(2.0 / 3.0));
  EXPECT_DOUBLE_EQ(s[kTemporalBlock + kSnapshotBlock], 2.0);
  EXPECT_DOUBLE_EQ(s[kStateDim - 1], 0.0);
}

TEST(State, EdgeOrderDoesNotMatter) {
  num::Rng rng(3);
  StepEmbeddings a;
  for (std::size_t n : {4u, 3u, 5u}) a.steps.push_back(random_rows(rng, n, kEdgeDim));
  StepEmbeddings b = a;
  for (auto& step : b.steps) {
    const std::size_t n = step.size() / kEdgeDim;
    std::vector<double> flipped;
    for (std::size_t r = n; r-- > 0;) flipped.insert(flipped.end(), step.begin() + r * kEdgeDim, step.begin() + (r + 1) * kEdgeDim);
    step = flipped;
  }
  const auto nodes = random_rows(rng, 10, kNodeFeatureDim);
  const auto sa = raw_state(a, nodes), sb = raw_state(b, nodes);
  for (std::size_t i = 0; i < kStateDim; ++i) EXPECT_NEAR(sa[i], sb[i], 1e-12) << i;
}

TEST(State, RejectsShortWindowsAndBadWidths) {
  num::Rng rng(4);
  EXPECT_THROW(raw_state(StepEmbeddings{{random_rows(rng, 2, kEdgeDim)}}, {}), std::invalid_argument);
  EXPECT_THROW(raw_state(StepEmbeddings{{random_rows(rng, 1, 10), {}}}, {}), std::invalid_argument);
  EXPECT_THROW(raw_state(StepEmbeddings{{{}, {}}}, std::vector<double>(13)), std::invalid_argument);
}

TEST(State, FromEncodedWindow) {
  EnvFixture f;
  auto batch = mobility::make_batch(f.set.series, std::span(&f.set.windows[0], 1), mobility::TargetMode::FinalStep);
  auto enc = model::encode_window(batch, 0, f.model.encoder, f.model.encoder_config, {false, 0});
  EXPECT_EQ(raw_state(enc).size(), kStateDim);
}

TEST(Standardizer, WelfordFreezeAndClip) {
  RunningStandardizer z(2, 10.0);
  z.update({1.0, 5.0});
  z.update({3.0, 5.0});
  EXPECT_DOUBLE_EQ(z.mean()[0], 2.0);
  EXPECT_DOUBLE_EQ(z.variance(0), 1.0);
  auto out = z.apply({4.0, 5.0 + 1.0});
  EXPECT_NEAR(out[0], 2.0, 1e-7);
  EXPECT_DOUBLE_EQ(out[1], 10.0);  // zero variance saturates at the clip
  z.freeze();
  z({100.0, 100.0});
  EXPECT_EQ(z.count(), 2u);
  EXPECT_THROW(z.update({1.0}), std::invalid_argument);
}

TEST(Action, ZeroIsBitExactIdentity) {
  num::Rng rng(5);
  auto w = random_rows(rng, 256, 1);
  const auto before = w;
  double b = -0.37;
  apply_action(w, b, std::vector<double>(33, 0.0), GroupingMatrix{});
  EXPECT_EQ(w, before);
  EXPECT_EQ(b, -0.37);
}

TEST(Action, BlockZeroScalesFirstEightRows) {
  num::Rng rng(6);
  auto w = random_rows(rng, 256, 1);
  const auto before = w;
  double b = 0.8;
  std::vector<double> a(33, 0.0);
  a[0] = 0.5;
  apply_action(w, b, a, GroupingMatrix{});
  for (std::size_t r = 0; r < 8; ++r) EXPECT_DOUBLE_EQ(w[r], 1.5 * before[r]);
  for (std::size_t r = 8; r < 256; ++r) EXPECT_EQ(w[r], before[r]);
  EXPECT_EQ(b, 0.8);
  a[0] = 0.0;
  a[32] = -0.25;
  apply_action(w, b, a, GroupingMatrix{});
  EXPECT_DOUBLE_EQ(b, 0.6);
}

TEST(Action, ClampsToTwo) {
  const auto a = clamp_action({3.0, -3.0, 1.5, -2.0});
  EXPECT_EQ(a, (std::vector<double>{2.0, -2.0, 1.5, -2.0}));
}

TEST(Action, GroupingColumnSupport) {
  GroupingMatrix g;
  EXPECT_EQ(g.action_dim(), 33u);
  std::vector<int> row_cover(256, 0);
  for (std::size_t c = 0; c < 32; ++c) {
    int ones = 0;
    for (std::size_t r = 0; r < 256; ++r) {
      ones += g.at(r, c);
      row_cover[r] += g.at(r, c);
    }
    EXPECT_EQ(ones, 8) << c;
  }
  for (std::size_t r = 0; r < 256; ++r) {
    EXPECT_EQ(row_cover[r], 1) << r;
    EXPECT_EQ(g.at(r, 32), 0);
  }
  EXPECT_EQ(GroupingMatrix(8).action_dim(), 9u);
  EXPECT_EQ(GroupingMatrix(16).block_of(17), 1u);
  EXPECT_THROW(GroupingMatrix(12), std::invalid_argument);
  std::vector<double> w(256, 1.0);
  double b = 0.0;
  EXPECT_THROW(apply_action(w, b, std::vector<double>(17, 0.0), g), std::invalid_argument);
}

TEST(Reward, HandComputedSingleEdge) {
  const auto e = step_error({3.0}, {2.0});
  EXPECT_DOUBLE_EQ(e.wmse, 2.0);
  EXPECT_DOUBLE_EQ(e.mae, 1.0);
  EXPECT_DOUBLE_EQ(compute_reward({e}, {1.0, 1.0}), -3.0);
}

TEST(Reward, PerfectPredictionIsZero) {
  EXPECT_EQ(compute_reward({step_error({1, 4, 0}, {1, 4, 0}), step_error({0}, {0})}, {}), 0.0);
}

TEST(Reward, LinearInDeltaAndMeanOverSteps) {
  const std::vector<StepError> steps{step_error({1.0, 3.0}, {2.0, 2.0}), step_error({0.0}, {0.0}), step_error({5.0}, {1.0})};
  const double r1 = compute_reward(steps, {1.0, 0.5});
  EXPECT_DOUBLE_EQ(compute_reward(steps, {2.0, 0.5}), 2.0 * r1);
  // Step errors: wmse (2*1 + 2*1)/2 = 2, mae 1; zero; wmse 2*16 = 32, mae 4.
  EXPECT_DOUBLE_EQ(r1, -((2.0 + 0.5) + 0.0 + (32.0 + 2.0)) / 3.0);
  EXPECT_THROW(compute_reward({}, {}), std::invalid_argument);
  EXPECT_THROW(step_error({}, {}), std::invalid_argument);
}

TEST(Reward, ZeroTruthUsesUnitWeight) {
  const auto e = step_error({2.0, 1.0}, {0.0, 0.0});
  EXPECT_DOUBLE_EQ(e.wmse, 2.5);
}

TEST(Reward, ShiftingEveryErrorUpLowersReward) {
  num::Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> truth(6), pred(6), shifted(6);
    const double c = rng.uniform(0.01, 3.0);
    for (std::size_t i = 0; i < 6; ++i) {
      truth[i] = static_cast<double>(rng.index(10));
      pred[i] = truth[i] + rng.uniform(0.0, 4.0);
      shifted[i] = pred[i] + c;
    }
    EXPECT_LT(compute_reward({step_error(shifted, truth)}, {}), compute_reward({step_error(pred, truth)}, {}));
  }
}

TEST(Reward, Smoothing) {
  EXPECT_EQ(smooth_rewards({0, 0, 100}, 2), (std::vector<double>{0, 0, 50}));
  const std::vector<double> raw{3, -1, 4, 1, -5};
  EXPECT_EQ(smooth_rewards(raw, 1), raw);
  EXPECT_EQ(smooth_rewards({2, 2, 2, 2}, 3), (std::vector<double>{2, 2, 2, 2}));
  EXPECT_EQ(smooth_rewards({1, 3, 5}, 100), (std::vector<double>{1, 2, 3}));
  EXPECT_THROW(smooth_rewards(raw, 0), std::invalid_argument);
}

TEST(Episode, SparseRewardOfLengthK) {
  EnvFixture f;
  HeadEnvironment env(f.model, f.set, mobility::TargetMode::FinalStep);
  ASSERT_EQ(env.size(), 13u);
  EXPECT_EQ(env.episode_count(4), 9u);
  PpoAgent agent(kStateDim, 33, {}, 3);
  RunningStandardizer z;
  auto traj = run_episode(env, 2, 4, agent.actor(true), z, {});
  ASSERT_EQ(traj.steps.size(), 4u);
  for (std::size_t k = 0; k + 1 < 4; ++k) EXPECT_EQ(traj.steps[k].reward, 0.0);
  EXPECT_EQ(traj.steps.back().reward, traj.reward);
  EXPECT_LT(traj.reward, 0.0);
  EXPECT_EQ(z.count(), 4u);
  EXPECT_THROW(run_episode(env, 9, 4, agent.actor(true), z, {}), std::invalid_argument);
}

TEST(Episode, ZeroPolicyReproducesModelPredictions) {
  EnvFixture f;
  const auto mode = mobility::TargetMode::FinalStep;
  HeadEnvironment env(f.model, f.set, mode);
  RunningStandardizer z;
  const std::size_t start = 1, K = 5;
  auto traj = run_episode(env, start, K, zero_actor(33), z, {});
  num::NoGradGuard no_grad;
  std::vector<StepError> errors;
  for (std::size_t k = 0; k < K; ++k) {
    auto batch = mobility::make_batch(f.set.series, std::span(&f.set.windows[start + k + 1], 1), mode);
    auto enc = model::encode_window(batch, 0, f.model.encoder, f.model.encoder_config, {false, 0});
    auto out = model::forward(f.model, batch, {false, 0});
    std::vector<double> direct, truth;
    for (std::size_t t = 0; t < enc.valid(); ++t) {
      if (!batch.is_target_step(enc.token_step[t])) continue;
      direct.push_back(out.prediction.at(enc.token_step[t], 0, enc.token_edge[t]) * batch.flow_max);
      truth.push_back(batch.counts[batch.slot(0, enc.token_step[t], enc.token_edge[t])]);
    }
    ASSERT_EQ(traj.predictions[k].size(), direct.size());
    for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_NEAR(traj.predictions[k][i], direct[i], 1e-9 * (1 + direct[i]));
    if (!truth.empty()) errors.push_back(step_error(direct, truth));
  }
  EXPECT_NEAR(traj.reward, compute_reward(errors, {}), 1e-9);
}

TEST(Episode, HeadResetsBetweenEpisodes) {
  EnvFixture f;
  HeadEnvironment env(f.model, f.set, mobility::TargetMode::FinalStep);
  RunningStandardizer z;
  Actor push = [](const std::vector<double>&) { return Decision{std::vector<double>(33, 0.3), 0.0, 0.0}; };
  const auto a = run_episode(env, 0, 3, push, z, {});
  const auto b = run_episode(env, 0, 3, push, z, {});
  EXPECT_EQ(a.predictions, b.predictions);
  EXPECT_EQ(a.reward, b.reward);
}

TEST(Ppo, UnitRatioLeavesSurrogateUnclipped) {
  num::Rng rng(8);
  auto pol = GaussianPolicy::create(3, 4, 2, 0.5, rng);
  auto val = ValueFunction::create(3, 4, rng);
  auto s = test::random_tensor(rng, {6, 3}, 1.0, false), a = test::random_tensor(rng, {6, 2}, 1.0, false);
  auto adv = test::random_tensor(rng, {6, 1}, 2.0, false);
  PpoBatch b{s, a, pol.log_prob(s, a).clone(), adv, Tensor::zeros({6, 1})};
  double mean_adv = 0.0;
  for (double v : adv.values()) mean_adv += v / 6.0;
  EXPECT_NEAR(ppo_loss(pol, val, b, {}).surrogate, mean_adv, 1e-12);
}

TEST(Ppo, ClipBindsAtRatioTwo) {
  num::Rng rng(9);
  auto pol = GaussianPolicy::create(3, 4, 2, 0.5, rng);
  auto val = ValueFunction::create(3, 4, rng);
  auto s = test::random_tensor(rng, {4, 3}, 1.0, false), a = test::random_tensor(rng, {4, 2}, 1.0, false);
  auto old = num::add_scalar(pol.log_prob(s, a), -std::log(2.0));
  PpoBatch b{s, a, old.clone(), Tensor::full({4, 1}, 1.0), Tensor::zeros({4, 1})};
  EXPECT_NEAR(ppo_loss(pol, val, b, {}).surrogate, 1.2, 1e-12);
  b.advantages = Tensor::full({4, 1}, -1.0);
  EXPECT_NEAR(ppo_loss(pol, val, b, {}).surrogate, -2.0, 1e-12);  // the pessimistic branch keeps rho * A
}

TEST(Ppo, NonFiniteRatioAborts) {
  num::Rng rng(10);
  auto pol = GaussianPolicy::create(3, 4, 2, 0.5, rng);
  auto val = ValueFunction::create(3, 4, rng);
  auto s = test::random_tensor(rng, {2, 3}, 1.0, false), a = test::random_tensor(rng, {2, 2}, 1.0, false);
  PpoBatch b{s, a, Tensor::full({2, 1}, -1e6), Tensor::full({2, 1}, 1.0), Tensor::zeros({2, 1})};
  EXPECT_THROW(ppo_loss(pol, val, b, {}), std::runtime_error);
}

TEST(Ppo, LogProbMatchesClosedForm) {
  num::Rng rng(11);
  auto pol = GaussianPolicy::create(3, 4, 2, 0.5, rng);
  pol.log_std.mutable_values()[1] = std::log(2.0);
  auto s = test::random_tensor(rng, {1, 3}, 1.0, false), a = test::random_tensor(rng, {1, 2}, 1.0, false);
  auto mu = pol.mean(s);
  double expect = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const double sd = i == 0 ? 0.5 : 2.0, z = (a[i] - mu[i]) / sd;
    expect += -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * M_PI);
  }
  EXPECT_NEAR(pol.log_prob(s, a).item(), expect, 1e-12);
  EXPECT_NEAR(pol.entropy().item(), std::log(0.5) + std::log(2.0) + (1.0 + std::log(2.0 * M_PI)), 1e-12);
}

TEST(Ppo, ActorLossGradCheckOnTwoDimToyPolicy) {
  num::Rng rng(12);
  auto pol = GaussianPolicy::create(3, 5, 2, 0.7, rng);
  auto val = ValueFunction::create(3, 5, rng);
  pol.mean.w2 = test::random_tensor(rng, pol.mean.w2.shape(), 0.5);
  pol.mean.b1 = test::random_tensor(rng, pol.mean.b1.shape(), 0.3);
  pol.mean.b2 = test::random_tensor(rng, pol.mean.b2.shape(), 0.3);
  auto s = test::random_tensor(rng, {8, 3}, 1.0, false), a = test::random_tensor(rng, {8, 2}, 1.0, false);
  // Old log-probs offset so that some ratios sit inside the clip band and some outside, none on a kink.
  auto offsets = Tensor::from({8, 1}, {0.05, -0.4, 0.02, 0.5, -0.1, 0.3, -0.03, -0.6});
  PpoBatch b{s, a, num::add(pol.log_prob(s, a), offsets).clone(), test::random_tensor(rng, {8, 1}, 1.0, false),
             test::random_tensor(rng, {8, 1}, 1.0, false)};
  auto f = [&] { return ppo_loss(pol, val, b, {}).loss; };
  pol.for_each_parameter([&](const std::string& k, Tensor& t) {
    auto r = num::grad_check(f, t, 1e-6, 1e-4);
    EXPECT_TRUE(r.passed) << k << ": " << r.max_rel_error << " at " << r.worst_index;
  });
  val.for_each_parameter([&](const std::string& k, Tensor& t) {
    auto r = num::grad_check(f, t, 1e-6, 1e-4);
    EXPECT_TRUE(r.passed) << k << ": " << r.max_rel_error;
  });
}

TEST(Ppo, GaeHandComputed) {
  const auto a = gae({0.0, 0.0, 1.0}, {0.5, 0.2, 0.1}, 0.9, 0.8);
  EXPECT_NEAR(a.advantages[2], 0.9, 1e-15);
  EXPECT_NEAR(a.advantages[1], -0.11 + 0.72 * 0.9, 1e-15);
  EXPECT_NEAR(a.advantages[0], -0.32 + 0.72 * (-0.11 + 0.72 * 0.9), 1e-15);
  EXPECT_NEAR(a.returns[0], a.advantages[0] + 0.5, 1e-15);
  // gamma = lambda = 1 gives Monte Carlo returns.
  const auto mc = gae({0.0, 0.0, -2.0}, {0.3, -0.7, 1.1}, 1.0, 1.0);
  for (double r : mc.returns) EXPECT_NEAR(r, -2.0, 1e-15);
  EXPECT_NEAR(mc.advantages[1], -1.3, 1e-15);
}

TEST(Ppo, TrainingLoopBookkeeping) {
  EnvFixture f;
  HeadEnvironment env(f.model, f.set, mobility::TargetMode::FinalStep);
  PpoConfig cfg;
  cfg.episode_length = 3;
  cfg.episodes_per_update = 4;
  cfg.hidden = 8;
  PpoAgent agent(kStateDim, 33, cfg, 5);
  const auto before = agent.policy().log_std.vec();
  auto r = train_ppo(env, agent, 10, {}, 1, 4);
  EXPECT_EQ(r.raw_rewards.size(), 10u);
  EXPECT_EQ(r.smoothed_rewards, smooth_rewards(r.raw_rewards, 4));
  EXPECT_TRUE(agent.standardizer().frozen());
  EXPECT_EQ(agent.standardizer().count(), 30u);
  EXPECT_NE(agent.policy().log_std.vec(), before);
  PpoAgent again(kStateDim, 33, cfg, 5);
  EXPECT_EQ(train_ppo(env, again, 10, {}, 1, 4).raw_rewards, r.raw_rewards);
}
