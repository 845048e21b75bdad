#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "mmtfd/errors.hpp"
#include "mmtfd/gradcheck.hpp"
#include "mmtfd/model.hpp"

using namespace mmtfd;

namespace {

Tensor randn(Shape shape, unsigned seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = g(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

ModelConfig small_config() {
  ModelConfig c;
  c.input_length = 16;
  c.patch = 4;
  c.d_model = 8;
  c.heads = 2;
  c.depth = 1;
  c.d_proj = 4;
  c.n_classes = 3;
  return c;
}

}  // namespace

TEST(Attention, ZeroQueryGivesUniformWeights) {
  AttentionParams p{{Tensor::zeros({2, 2})}, Tensor::matrix({{1, 0}, {0, 1}})};
  const auto out = multi_head_attention(Tensor::matrix({{2, 0}, {0, 2}}), p);
  for (double v : out.out.data()) EXPECT_NEAR(v, 1.0, 1e-12);
  for (double v : out.weights[0].data()) EXPECT_NEAR(v, 0.5, 1e-12);
}

TEST(Attention, IdentityProjectionReturnsTheHead) {
  const auto h = randn({4, 3}, 1);
  const auto q = randn({3, 3}, 2);
  AttentionParams p{{q}, Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}})};
  const auto out = multi_head_attention(h, p);
  // Independent evaluation of softmax((H Q) H^T / sqrt(d)) H.
  const auto scores = scale(matmul(matmul(h, q), transpose(h)), 1.0 / std::sqrt(3.0));
  std::vector<double> expect(12, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    double mx = -1e300, z = 0;
    for (std::size_t j = 0; j < 4; ++j) mx = std::max(mx, scores.at(i, j));
    std::vector<double> w(4);
    for (std::size_t j = 0; j < 4; ++j) z += (w[j] = std::exp(scores.at(i, j) - mx));
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t c = 0; c < 3; ++c) expect[i * 3 + c] += w[j] / z * h.at(j, c);
  }
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(out.out.data()[i], expect[i], 1e-12);
}

TEST(Attention, HeadsAreRowStochastic) {
  const auto h = randn({4, 3}, 3);
  AttentionParams p{{randn({3, 3}, 4), randn({3, 3}, 5)}, randn({3, 6}, 6)};
  const auto out = multi_head_attention(h, p);
  ASSERT_EQ(out.weights.size(), 2u);
  EXPECT_EQ(out.out.shape(), (Shape{4, 3}));
  for (const auto& w : out.weights)
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 4; ++c) s += w.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Attention, ShapeMismatch) {
  AttentionParams p{{Tensor::zeros({3, 3})}, Tensor::zeros({3, 3})};
  EXPECT_THROW(multi_head_attention(Tensor::zeros({4, 2}), p), DimensionError);
}

TEST(Embed, LengthAndZeroSignal) {
  ModelConfig c;
  c.input_length = 2048;
  c.patch = 128;
  EXPECT_EQ(c.seq_len(), 16u);
  auto p = init_params(small_config(), 1);
  const auto cfg = small_config();
  const std::vector<double> zero(16, 0.0);
  const auto h = embed(zero, p, "t", cfg);
  EXPECT_EQ(h.shape(), (Shape{4, 8}));
  const auto& b = p.at("t.embed.b");
  const auto& pos = p.at("t.embed.pos");
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t d = 0; d < 8; ++d) EXPECT_DOUBLE_EQ(h.at(l, d), b.at(d) + pos.at(l, d));
  // Short inputs are zero padded to whole patches.
  EXPECT_EQ(embed(std::vector<double>(13, 1.0), p, "t", cfg).shape(), (Shape{4, 8}));
}

TEST(Embed, GradientCheck) {
  const auto cfg = small_config();
  const auto p = init_params(cfg, 2);
  std::vector<double> x(16);
  for (std::size_t i = 0; i < 16; ++i) x[i] = std::sin(0.7 * i);
  auto f = [&](std::span<const Tensor> in) {
    Params q = p;
    q["t.embed.W"] = in[0];
    q["t.embed.b"] = in[1];
    q["t.embed.pos"] = in[2];
    return sum(mul(embed(x, q, "t", cfg), embed(x, q, "t", cfg)));
  };
  const auto r = check_gradients("embed", f, {p.at("t.embed.W"), p.at("t.embed.b"), p.at("t.embed.pos")});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Transformer, ZeroDepthIsMeanPool) {
  auto cfg = small_config();
  cfg.depth = 0;
  const auto p = init_params(cfg, 3);
  const auto h = randn({5, 8}, 7);
  const auto z = transformer_encode(h, p, "t", cfg);
  EXPECT_EQ(z.numel(), 8u);
  for (std::size_t d = 0; d < 8; ++d) {
    double m = 0;
    for (std::size_t l = 0; l < 5; ++l) m += h.at(l, d) / 5;
    EXPECT_NEAR(z.data()[d], m, 1e-12);
  }
}

TEST(Transformer, OutputIsDForAnyLength) {
  const auto cfg = small_config();
  const auto p = init_params(cfg, 4);
  std::vector<Tensor> weights;
  for (std::size_t L : {1u, 3u, 4u}) {
    weights.clear();
    EXPECT_EQ(transformer_encode(randn({L, 8}, L), p, "t", cfg, &weights).numel(), 8u);
    for (const auto& w : weights)
      for (std::size_t r = 0; r < L; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < L; ++c) s += w.at(r, c);
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
  }
}

TEST(Transformer, OneBlockGradientCheck) {
  const auto cfg = small_config();
  const auto p = init_params(cfg, 5);
  std::vector<std::string> names;
  std::vector<Tensor> inputs;
  for (const auto& [name, t] : p) {
    if (name.rfind("t.block0", 0) == 0) {
      names.push_back(name);
      inputs.push_back(t);
    }
  }
  names.push_back("H");
  inputs.push_back(randn({4, 8}, 9));
  const auto readout = randn({1, 8}, 10);
  auto f = [&](std::span<const Tensor> in) {
    Params q = p;
    for (std::size_t i = 0; i + 1 < names.size(); ++i) q[names[i]] = in[i];
    return sum(mul(transformer_encode(in.back(), q, "t", cfg), readout));
  };
  const auto r = check_gradients("block", f, inputs);
  EXPECT_TRUE(r.passed) << r.max_rel_error << " skipped " << r.skipped;
}

TEST(Forward, ShapesAndDeterminism) {
  const auto cfg = small_config();
  const auto p = init_params(cfg, 6);
  Signal x;
  for (int i = 0; i < 16; ++i) x.samples.push_back(std::cos(0.3 * i));
  const auto a = forward_branches(x, p, cfg);
  const auto b = forward_branches(x, p, cfg);
  EXPECT_EQ(a.z_t.numel(), 4u);
  EXPECT_EQ(a.z_f.numel(), 4u);
  EXPECT_EQ(a.logits_t.numel(), 3u);
  EXPECT_EQ(a.logits_f.numel(), 3u);
  EXPECT_EQ(a.z_t.to_vector(), b.z_t.to_vector());
  EXPECT_EQ(a.z_f.to_vector(), b.z_f.to_vector());
}

TEST(Forward, FrequencyBranchIgnoresCircularShift) {
  const auto cfg = small_config();
  const auto p = init_params(cfg, 7);
  const std::size_t n = 16;
  Signal x, shifted;
  for (std::size_t t = 0; t < n; ++t) {
    auto v = [&](std::size_t s) {
      return std::cos(2 * std::numbers::pi * 3 * s / n) + 0.5 * std::sin(2 * std::numbers::pi * 5 * s / n);
    };
    x.samples.push_back(v(t));
    shifted.samples.push_back(v((t + 5) % n));
  }
  const auto a = forward_branches(x, p, cfg);
  const auto b = forward_branches(shifted, p, cfg);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a.z_f.data()[i], b.z_f.data()[i], 1e-6);
}

TEST(Forward, FrequencyInputHasTheWindowEnergy) {
  Signal x;
  for (int i = 0; i < 100; ++i) x.samples.push_back(std::sin(0.1 * i * i));
  double et = 0, ef = 0;
  for (double v : x.samples) et += v * v;
  for (double v : frequency_input(x)) ef += v * v;
  EXPECT_NEAR(ef, et, 1e-9 * et);
}

TEST(Params, InitIsSeededAndClassifierIsShared) {
  const auto cfg = small_config();
  const auto a = init_params(cfg, 11), b = init_params(cfg, 11), c = init_params(cfg, 12);
  EXPECT_EQ(a.at("t.embed.W").to_vector(), b.at("t.embed.W").to_vector());
  EXPECT_NE(a.at("t.embed.W").to_vector(), c.at("t.embed.W").to_vector());
  EXPECT_TRUE(is_classifier_param("cls.W"));
  EXPECT_FALSE(is_classifier_param("t.embed.W"));
  EXPECT_EQ(a.count("cls.W"), 1u);
}

TEST(Config, ValidationRejectsBadHeadsAndPatch) {
  auto cfg = small_config();
  cfg.heads = 0;
  EXPECT_THROW(cfg.validate(), std::exception);
  cfg = small_config();
  cfg.patch = 0;
  EXPECT_THROW(cfg.validate(), std::exception);
}
