#include "hmctc/encoder/encoder.hpp"
#include "hmctc/numeric/grad_check.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

namespace hmctc::encoder {
namespace {

using testing::random_tensor;

Encoder make_encoder(int layers, int hidden, int input_dim, double dropout, std::uint64_t seed) {
  EncoderConfig cfg;
  cfg.num_layers = layers;
  cfg.hidden = hidden;
  cfg.input_dim = input_dim;
  cfg.dropout = dropout;
  Encoder enc(cfg);
  std::mt19937_64 rng(seed);
  // Wider than the production init so gradient checks exercise nonlinearity.
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto* p : enc.parameters()) {
    for (auto& x : p->value.values()) x = u(rng);
  }
  return enc;
}

double weighted_sum(const Tensor& t, const Tensor& w) {
  double s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * w[i];
  return s;
}

TEST(PairFrames, EvenOddAndSingle) {
  const Tensor x = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}, {7, 8}});
  EXPECT_EQ(pair_frames(x), Tensor::from_rows({{1, 2, 3, 4}, {5, 6, 7, 8}}));
  const Tensor x5 = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}});
  EXPECT_EQ(pair_frames(x5), Tensor::from_rows({{1, 2, 3, 4}, {5, 6, 7, 8}, {9, 10, 0, 0}}));
  EXPECT_EQ(pair_frames(Tensor::from_rows({{1, 2}})), Tensor::from_rows({{1, 2, 0, 0}}));
  for (std::size_t T = 1; T < 12; ++T) EXPECT_EQ(pair_frames(Tensor::zeros(T, 3)).rows(), (T + 1) / 2);
}

TEST(BiLstmLayer, ZeroParametersGiveZeroOutput) {
  LstmLayerParams p = make_layer(1, 4, 3);
  std::mt19937_64 rng(1);
  const Tensor out = bilstm_layer_forward(random_tensor(5, 4, rng), p);
  ASSERT_EQ(out.rows(), 5u);
  ASSERT_EQ(out.cols(), 6u);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(BiLstmLayer, SingleFrameDirectionSwapPermutesHalves) {
  Encoder enc = make_encoder(1, 3, 2, 0.0, 2);
  LstmLayerParams p = enc.layers()[0];
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(1, 4, rng);
  const Tensor out = bilstm_layer_forward(x, p);
  LstmLayerParams swapped = p;
  std::swap(swapped.fwd, swapped.bwd);
  const Tensor out2 = bilstm_layer_forward(x, swapped);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(out(0, j), out2(0, j + 3));
    EXPECT_EQ(out(0, j + 3), out2(0, j));
  }
}

TEST(BiLstmLayer, InputWidthMismatch) {
  LstmLayerParams p = make_layer(1, 4, 3);
  EXPECT_THROW(bilstm_layer_forward(Tensor::zeros(2, 5), p), ShapeError);
}

TEST(BiLstmLayer, GradientMatchesFiniteDifferences) {
  Encoder enc = make_encoder(1, 3, 2, 0.0, 4);
  auto& layer = enc.layers()[0];
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor(4, 4, rng);
  const Tensor w = random_tensor(4, 6, rng);
  auto loss = [&] {
    LayerTrace tr;
    const Tensor out = bilstm_layer_forward(x, layer, &tr);
    bilstm_layer_backward(w, layer, tr);
    return weighted_sum(out, w);
  };
  EXPECT_LE(grad_check(loss, layer.parameters()).max_rel_error, 1e-5);
}

TEST(BiLstmLayer, InputGradientMatchesFiniteDifferences) {
  Encoder enc = make_encoder(1, 3, 2, 0.0, 6);
  auto& layer = enc.layers()[0];
  std::mt19937_64 rng(7);
  Parameter x("x", random_tensor(5, 4, rng));
  const Tensor w = random_tensor(5, 6, rng);
  auto loss = [&] {
    LayerTrace tr;
    const Tensor out = bilstm_layer_forward(x.value, layer, &tr);
    const Tensor dx = bilstm_layer_backward(w, layer, tr);
    for (std::size_t i = 0; i < dx.size(); ++i) x.grad[i] += dx[i];
    return weighted_sum(out, w);
  };
  EXPECT_LE(grad_check(loss, {&x}).max_rel_error, 1e-6);
}

TEST(Encoder, EvalIsDeterministicAndTapsHaveSharedLength) {
  Encoder enc = make_encoder(3, 4, 3, 0.1, 8);
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor(7, 3, rng);
  const auto a = enc.forward(x, Mode::eval);
  const auto b = enc.forward(x, Mode::eval);
  ASSERT_EQ(a.taps.size(), 3u);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_EQ(a.taps[l], b.taps[l]);
    EXPECT_EQ(a.taps[l].rows(), 4u);
    EXPECT_EQ(a.taps[l].cols(), 8u);
  }
}

TEST(Encoder, TrainWithZeroDropoutEqualsEval) {
  Encoder enc = make_encoder(2, 4, 3, 0.0, 10);
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor(6, 3, rng);
  const auto a = enc.forward(x, Mode::eval);
  const auto b = enc.forward(x, Mode::train, &rng);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(a.taps[l], b.taps[l]);
}

TEST(Encoder, TrainModeRequiresGenerator) {
  Encoder enc = make_encoder(1, 2, 2, 0.5, 1);
  EXPECT_THROW(enc.forward(Tensor::zeros(2, 2), Mode::train), std::invalid_argument);
}

TEST(Encoder, SecondTapIsLayerTwoOfFirstTap) {
  Encoder enc = make_encoder(2, 4, 3, 0.0, 12);
  std::mt19937_64 rng(13);
  const Tensor x = random_tensor(9, 3, rng);
  const auto pass = enc.forward(x, Mode::eval);
  EXPECT_EQ(bilstm_layer_forward(pass.taps[0], enc.layers()[1]), pass.taps[1]);
}

TEST(Encoder, UpstreamAtTopTapReachesAllLayers) {
  Encoder enc = make_encoder(3, 3, 2, 0.0, 14);
  std::mt19937_64 rng(15);
  const Tensor x = random_tensor(6, 2, rng);
  const auto pass = enc.forward(x, Mode::eval);
  zero_grads(enc.parameters());
  std::vector<Tensor> up(3);
  up[2] = random_tensor(3, 6, rng);
  enc.backward(pass, up);
  for (auto* p : enc.parameters()) {
    double n = 0;
    for (double g : p->grad.values()) n += std::abs(g);
    EXPECT_GT(n, 0.0) << p->name;
  }
}

TEST(Encoder, BackwardIsAdditiveAcrossTaps) {
  Encoder enc = make_encoder(3, 3, 2, 0.2, 16);
  std::mt19937_64 rng(17);
  const Tensor x = random_tensor(7, 2, rng);
  const auto pass = enc.forward(x, Mode::train, &rng);
  const Tensor g1 = random_tensor(4, 6, rng);
  const Tensor g3 = random_tensor(4, 6, rng);
  auto run = [&](bool first, bool third) {
    zero_grads(enc.parameters());
    std::vector<Tensor> up(3);
    if (first) up[0] = g1;
    if (third) up[2] = g3;
    enc.backward(pass, up);
    std::vector<Tensor> out;
    for (auto* p : enc.parameters()) out.push_back(p->grad);
    return out;
  };
  const auto both = run(true, true);
  const auto only1 = run(true, false);
  const auto only3 = run(false, true);
  for (std::size_t k = 0; k < both.size(); ++k) {
    for (std::size_t i = 0; i < both[k].size(); ++i) {
      EXPECT_NEAR(both[k][i], only1[k][i] + only3[k][i], 1e-12);
    }
  }
}

TEST(Encoder, WholeStackGradientWithReplayedDropout) {
  Encoder enc = make_encoder(3, 3, 2, 0.3, 18);
  std::mt19937_64 rng(19);
  const Tensor x = random_tensor(5, 2, rng);
  const auto first = enc.forward(x, Mode::train, &rng);
  std::vector<Tensor> masks;
  for (const auto& tr : first.traces) masks.push_back(tr.mask);
  const Tensor w2 = random_tensor(3, 6, rng);
  const Tensor w3 = random_tensor(3, 6, rng);
  auto loss = [&] {
    const auto pass = enc.forward(x, Mode::train, nullptr, 0, &masks);
    std::vector<Tensor> up{Tensor(), w2, w3};
    enc.backward(pass, up);
    return weighted_sum(pass.taps[1], w2) + weighted_sum(pass.taps[2], w3);
  };
  EXPECT_LE(grad_check(loss, enc.parameters()).max_rel_error, 1e-5);
}

TEST(Encoder, InitMatchesDocumentedScheme) {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden = 4;
  cfg.input_dim = 3;
  Encoder enc(cfg);
  std::mt19937_64 rng(1);
  enc.init(rng);
  for (auto& layer : enc.layers()) {
    for (auto* d : {&layer.fwd, &layer.bwd}) {
      for (double v : d->wx.value.values()) EXPECT_LE(std::abs(v), 0.05);
      for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(d->b.value[k], (k >= 4 && k < 8) ? 1.0 : 0.0);
    }
  }
  EXPECT_EQ(enc.layers()[0].input_width(), 6u);
  EXPECT_EQ(enc.layers()[1].input_width(), 8u);
}

}  // namespace
}  // namespace hmctc::encoder
