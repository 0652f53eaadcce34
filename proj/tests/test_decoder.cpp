#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "model_fixture.hpp"
#include "test_support.hpp"

using namespace urbanpulse;
using namespace urbanpulse::model;
using num::Tensor;

namespace {

Tensor probe(const Tensor& y, std::uint64_t seed = 21) {
  num::Rng rng(seed);
  Tensor w = test::random_tensor(rng, {y.numel()}, 1.0, false);
  return num::sum(num::mul(num::reshape(y, {y.numel()}), w));
}

void expect_grad(const std::function<Tensor()>& f, Tensor p, const std::string& what) {
  auto r = num::grad_check(f, p, 1e-5, 1e-4);
  EXPECT_TRUE(r.passed) << what << ": max rel error " << r.max_rel_error << " at " << r.worst_index;
}

// Decoder layer with nonzero biases and norms so every path is exercised.
DecoderParams random_decoder(const DecoderConfig& cfg, num::Rng& rng) {
  auto p = init_decoder(cfg, rng);
  for (auto& L : p.layers)
    for (Tensor* t : {&L.bq, &L.bk, &L.bv, &L.bo, &L.b1, &L.b2, &L.ln1_beta, &L.ln2_beta}) *t = test::random_tensor(rng, t->shape(), 0.3);
  return p;
}

}  // namespace

TEST(Attention, SingleTokenTakesItsValuePath) {
  auto cfg = test::tiny_decoder();
  num::Rng rng(1);
  auto p = random_decoder(cfg, rng);
  auto x = test::random_tensor(rng, {1, 4}, 1.0, false);
  auto out = self_attention(x, p.layers[0], cfg.heads, {1});
  auto expect = linear(linear(x, p.layers[0].wv, p.layers[0].bv), p.layers[0].wo, p.layers[0].bo);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out[i], expect[i], 1e-14);
}

TEST(Decoder, PaddingDoesNotLeakIntoValidTokens) {
  auto cfg = test::tiny_decoder();
  cfg.layers = 2;
  num::Rng rng(2);
  auto p = random_decoder(cfg, rng);
  auto x = test::random_tensor(rng, {5, 4}, 1.0, false);
  const std::vector<std::uint8_t> mask{1, 0, 1, 0, 0};
  auto a = decode(x, mask, p, cfg, {});
  auto x2 = x.clone();
  for (std::size_t r : {1u, 3u, 4u})
    for (std::size_t c = 0; c < 4; ++c) x2.mutable_values()[r * 4 + c] = 50.0 * rng.normal();
  auto b = decode(x2, mask, p, cfg, {});
  for (std::size_t r : {0u, 2u})
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(a[r * 4 + c], b[r * 4 + c], 1e-12);
  auto compact = decode(Tensor::from({2, 4}, {x[0], x[1], x[2], x[3], x[8], x[9], x[10], x[11]}), {1, 1}, p, cfg, {});
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(compact[c], a[c], 1e-12);
    EXPECT_NEAR(compact[4 + c], a[8 + c], 1e-12);
  }
}

TEST(Decoder, TokenOrderEquivariance) {
  auto cfg = test::tiny_decoder();
  num::Rng rng(3);
  auto p = random_decoder(cfg, rng);
  auto x = test::random_tensor(rng, {4, 4}, 1.0, false);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<double> xp;
  for (auto r : perm)
    for (std::size_t c = 0; c < 4; ++c) xp.push_back(x[r * 4 + c]);
  auto a = predict_flows(decode(x, {1, 1, 1, 1}, p, cfg, {}), p.head_weight, p.head_bias);
  auto b = predict_flows(decode(Tensor::from({4, 4}, xp), {1, 1, 1, 1}, p, cfg, {}), p.head_weight, p.head_bias);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(b[i], a[perm[i]], 1e-12);
}

TEST(Decoder, GradCheckOneLayerThreeTokens) {
  auto cfg = test::tiny_decoder();
  num::Rng rng(4);
  auto p = random_decoder(cfg, rng);
  auto x = test::random_tensor(rng, {3, 4});
  auto f = [&] { return probe(decode(x, {1, 1, 1}, p, cfg, {})); };
  auto& L = p.layers[0];
  const std::vector<std::pair<const char*, Tensor>> params{
      {"tokens", x}, {"wq", L.wq}, {"bq", L.bq}, {"wk", L.wk}, {"wv", L.wv}, {"bv", L.bv}, {"wo", L.wo}, {"bo", L.bo},
      {"ln1_gamma", L.ln1_gamma}, {"ln1_beta", L.ln1_beta}, {"w1", L.w1}, {"b1", L.b1}, {"w2", L.w2}, {"b2", L.b2},
      {"ln2_gamma", L.ln2_gamma}, {"ln2_beta", L.ln2_beta}};
  for (const auto& [name, t] : params) expect_grad(f, t, name);
}

TEST(Decoder, RejectsWrongTokenWidthOrMask) {
  auto cfg = test::tiny_decoder();
  num::Rng rng(5);
  auto p = init_decoder(cfg, rng);
  EXPECT_THROW(decode(Tensor::zeros({2, 5}), {1, 1}, p, cfg, {}), num::ShapeError);
  EXPECT_THROW(decode(Tensor::zeros({2, 4}), {1}, p, cfg, {}), num::ShapeError);
  DecoderConfig bad;
  bad.heads = 3;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Head, ZeroHeadPredictsLogTwo) {
  num::Rng rng(6);
  auto z = test::random_tensor(rng, {7, 256}, 1.0, false);
  auto y = predict_flows(z, Tensor::zeros({256, 1}), Tensor::zeros({1}));
  for (std::size_t i = 0; i < 7; ++i) EXPECT_DOUBLE_EQ(y[i], std::log(2.0));
}

TEST(Head, NonNegativeForRandomDraws) {
  num::Rng rng(7);
  double lowest = 1.0;
  for (int draw = 0; draw < 2000; ++draw) {
    auto z = test::random_tensor(rng, {8, 16}, 5.0, false);
    auto w = test::random_tensor(rng, {16, 1}, 10.0, false);
    auto b = Tensor::from({1}, {rng.uniform(-200.0, 50.0)});
    const auto y = predict_flows(z, w, b);
    for (double v : y.values()) lowest = std::min(lowest, v);
  }
  EXPECT_GE(lowest, 0.0) << lowest;
}

TEST(Head, DoublingWeightsMovesWithPreActivation) {
  num::Rng rng(8);
  auto z = test::random_tensor(rng, {20, 8}, 1.0, false);
  auto w = test::random_tensor(rng, {8, 1}, 1.0, false);
  auto pre = num::matmul(z, w);
  auto y1 = predict_flows(z, w, Tensor::zeros({1}));
  auto y2 = predict_flows(z, num::scale(w, 2.0), Tensor::zeros({1}));
  for (std::size_t i = 0; i < 20; ++i) {
    if (pre[i] > 0) EXPECT_GT(y2[i], y1[i]);
    if (pre[i] < 0) EXPECT_LT(y2[i], y1[i]);
  }
}

TEST(Head, RequiresSingleOutput) {
  EXPECT_THROW(predict_flows(Tensor::zeros({2, 4}), Tensor::zeros({4, 2}), Tensor::zeros({1})), num::ShapeError);
}

TEST(Loss, MaskedMeanSquaredError) {
  auto p = Tensor::from({3, 1}, {0.2, 0.4, 0.9});
  EXPECT_EQ(masked_mse_loss(p, {0.2, 0.4, 0.9}, {1, 1, 1}).item(), 0.0);
  EXPECT_DOUBLE_EQ(masked_mse_loss(Tensor::from({1, 1}, {0.5}), {0.0}, {1}).item(), 0.25);
  auto five = Tensor::from({5, 1}, {0.3, 7.0, 0.1, -4.0, 9.0});
  auto two = Tensor::from({2, 1}, {0.3, 0.1});
  EXPECT_DOUBLE_EQ(masked_mse_loss(five, {1.0, 0.0, 0.5, 0.0, 0.0}, {1, 0, 1, 0, 0}).item(),
                   masked_mse_loss(two, {1.0, 0.5}, {1, 1}).item());
  EXPECT_THROW(masked_mse_loss(p, {0, 0, 0}, {0, 0, 0}), std::invalid_argument);
}

TEST(Model, ForwardLossCoversTargetStepsOnly) {
  auto s = test::tiny_series(9, 4, 6, 0.6);
  auto final_batch = test::tiny_batch(s, 4, 2);
  auto all_batch = test::tiny_batch(s, 4, 2, mobility::TargetMode::AllSteps);
  auto m = FlowModel::create(test::tiny_encoder(), test::tiny_decoder(), 3);
  auto f = forward(m, final_batch, {});
  auto a = forward(m, all_batch, {});
  EXPECT_EQ(a.target_slots, all_batch.valid_count());
  double sq = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t mm = 0; mm < final_batch.max_edges; ++mm) {
      const auto slot = final_batch.slot(b, 3, mm);
      if (!final_batch.mask[slot]) {
        EXPECT_EQ(f.prediction.at(3, b, mm), 0.0);
        continue;
      }
      const double d = f.prediction.at(3, b, mm) - final_batch.targets[slot];
      sq += d * d;
      ++count;
    }
  EXPECT_EQ(f.target_slots, count);
  EXPECT_NEAR(f.loss.item(), sq / static_cast<double>(count), 1e-14);
}

TEST(Model, GradCheckFullLoss) {
  auto s = test::tiny_series(10, 4, 5, 0.6);
  auto batch = test::tiny_batch(s, 4, 2, mobility::TargetMode::AllSteps);
  ASSERT_EQ(batch.features.size(), 2u * 4 * 7 * 4);
  auto m = FlowModel::create(test::tiny_encoder(), test::tiny_decoder(), 5);
  num::Rng rng(11);
  m.for_each_parameter([&](const std::string& k, Tensor& t) {
    const std::string last = k.substr(k.rfind('.') + 1);
    if (last.starts_with('b') || last.ends_with("beta")) t = test::random_tensor(rng, t.shape(), 0.2);
  });
  auto f = [&] { return forward(m, batch, {}).loss; };
  m.for_each_parameter([&](const std::string& k, Tensor& t) {
    if (!k.ends_with(".bk")) expect_grad(f, t, k);
  });
  // A key bias shifts every score in a query row equally, so softmax cancels it.
  auto bk = m.decoder.layers[0].bk;
  bk.zero_grad();
  num::backward(f());
  for (double g : bk.grad()) EXPECT_LT(std::fabs(g), 1e-12);
}

TEST(Model, ParameterKeysAreUniqueAndStable) {
  auto m = FlowModel::create({}, {}, 1);
  std::set<std::string> keys;
  for (const auto& [k, t] : m.named_parameters()) EXPECT_TRUE(keys.insert(k).second) << k;
  EXPECT_EQ(m.decoder.head_weight.shape(), (num::Shape{256, 1}));
  EXPECT_EQ(m.decoder.head_bias.numel(), 1u);
  auto m2 = FlowModel::create({}, {}, 1);
  EXPECT_EQ(m.decoder.layers[1].w2.vec(), m2.decoder.layers[1].w2.vec());
}
