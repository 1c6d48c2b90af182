#include <gtest/gtest.h>

#include <cmath>

#include "ssdrl/grad_check.h"
#include "ssdrl/ops.h"
#include "ssdrl/policy.h"
#include "test_util.h"

namespace ssdrl {
namespace {

using testing::random_tensor;

TEST(ProprioEncoderTest, ZeroInputAndBiasesGiveZeroToken) {
  Rng rng(1);
  ParamStore<double> store;
  ProprioEncoderConfig cfg;
  init_proprio_encoder(store, "p.", cfg, rng);
  Tape<double> t(false);
  Var z = encode_proprio(t, store, "p.", cfg, t.constant(Tensor<double>(Shape{3, 11})));
  EXPECT_EQ(t.value(z).shape(), (Shape{3, 128}));
  EXPECT_EQ(max_abs(t.value(z)), 0.0);
}

TEST(ProprioEncoderTest, DeterministicForFixedSeed) {
  auto token = [] {
    Rng rng(7);
    ParamStore<float> store;
    init_proprio_encoder(store, "p.", ProprioEncoderConfig{}, rng);
    Tape<float> t(false);
    const Tensor<float> s = random_tensor<float>({1, 11}, rng);
    return t.value(encode_proprio(t, store, "p.", ProprioEncoderConfig{}, t.constant(s)));
  };
  EXPECT_EQ(token(), token());
}

TEST(ProprioEncoderTest, WidthMismatchIsConfigError) {
  Rng rng(2);
  ParamStore<double> store;
  init_proprio_encoder(store, "p.", ProprioEncoderConfig{}, rng);
  Tape<double> t(false);
  EXPECT_THROW(encode_proprio(t, store, "p.", ProprioEncoderConfig{},
                              t.constant(Tensor<double>(Shape{1, 12}))),
               ConfigError);
}

TEST(DepthEncoderTest, TokenCounts) {
  for (auto [F, expected] : {std::pair<std::size_t, std::size_t>{32, 64}, {64, 256}}) {
    Rng rng(3);
    DepthEncoderConfig cfg{F, 8, 4, 16};
    ParamStore<float> store;
    init_depth_encoder(store, "v.", cfg, rng);
    Tape<float> t(false);
    Var z = encode_depth_stack(t, store, "v.", cfg, Tensor<float>(Shape{2, 4, F, F}, 0.5f));
    EXPECT_EQ(t.value(z).shape(), (Shape{2, expected, 16}));
  }
}

TEST(DepthEncoderTest, TokenCountFormulaHoldsForValidSizes) {
  for (std::size_t P : {1u, 2u, 4u, 8u}) {
    for (std::size_t side : {1u, 2u, 3u, 5u}) {
      const DepthEncoderConfig cfg{P * side, P, 4, 4};
      ModelConfig m;
      m.frame_size = cfg.frame_size;
      m.patch_size = P;
      EXPECT_EQ(cfg.tokens(), 4 * side * side);
      EXPECT_EQ(m.sequence_length(), 1 + 4 * side * side);
    }
  }
  EXPECT_THROW(validate(DepthEncoderConfig{30, 8, 4, 4}), ConfigError);
}

TEST(DepthEncoderTest, WrongFrameCountIsConfigError) {
  Rng rng(4);
  DepthEncoderConfig cfg{16, 8, 4, 8};
  ParamStore<float> store;
  init_depth_encoder(store, "v.", cfg, rng);
  Tape<float> t(false);
  EXPECT_THROW(encode_depth_stack(t, store, "v.", cfg, Tensor<float>(Shape{1, 3, 16, 16})),
               ConfigError);
  cfg.frames = 5;
  EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(DepthEncoderTest, PatchifyRasterOrder) {
  DepthEncoderConfig cfg{4, 2, 4, 4};
  Tensor<double> frames(Shape{1, 4, 4, 4});
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = double(i);
  const Tensor<double> p = patchify(frames, cfg);
  EXPECT_EQ(p.shape(), (Shape{1, 16, 4}));
  // Frame 0, patch (0, 1): rows 0..1, columns 2..3.
  EXPECT_EQ(p.at({0, 1, 0}), 2.0);
  EXPECT_EQ(p.at({0, 1, 3}), 7.0);
  // Frame 1, patch (1, 0).
  EXPECT_EQ(p.at({0, 6, 0}), 16.0 + 8.0);
}

TEST(DepthEncoderTest, IdenticalFramesDifferByFrameEmbedding) {
  Rng rng(5);
  DepthEncoderConfig cfg{16, 8, 4, 8};
  ParamStore<double> store;
  init_depth_encoder(store, "v.", cfg, rng);
  Tensor<double> frames(Shape{1, 4, 16, 16});
  const Tensor<double> one = random_tensor<double>({16 * 16}, rng, 0, 1);
  for (std::size_t f = 0; f < 4; ++f) {
    for (std::size_t i = 0; i < 256; ++i) frames[f * 256 + i] = one[i];
  }
  Tape<double> t(false);
  const Tensor<double> z = t.value(encode_depth_stack(t, store, "v.", cfg, frames));
  const Tensor<double>& e = store.value("v.frame_embed");
  const std::size_t nf = 4;
  for (std::size_t f = 1; f < 4; ++f) {
    for (std::size_t p = 0; p < nf; ++p) {
      for (std::size_t j = 0; j < 8; ++j) {
        const double delta = z[((f * nf) + p) * 8 + j] - z[p * 8 + j];
        EXPECT_NEAR(delta, e[f * 8 + j] - e[j], 1e-12);
      }
    }
  }
}

TEST(AssembleTest, LengthsAndOrder) {
  Tape<float> t(false);
  Var prop = t.constant(Tensor<float>(Shape{2, 4}, 1.0f));
  EXPECT_EQ(t.value(assemble_sequence(t, prop, Var{})).shape(), (Shape{2, 1, 4}));
  Var vis = t.constant(Tensor<float>(Shape{2, 64, 4}, 2.0f));
  const Tensor<float> seq = t.value(assemble_sequence(t, prop, vis));
  EXPECT_EQ(seq.shape(), (Shape{2, 65, 4}));
  EXPECT_EQ(seq.at({1, 0, 3}), 1.0f);
  EXPECT_EQ(seq.at({1, 1, 0}), 2.0f);
  EXPECT_EQ(t.value(assemble_sequence(t, prop, vis)), seq);
}

struct HeadFixture {
  ParamStore<double> store;
  HeadFixture() {
    Rng rng(6);
    init_heads(store, "head.", "value.", HeadConfig{4, 16, 2, 0.0}, rng);
  }
  HeadOutput run(Tape<double>& t, const Tensor<double>& y) {
    return pool_and_head(t, store, "head.", "value.", t.constant(y));
  }
};

TEST(PoolAndHeadTest, ConstantVisualOutputsPoolToThatValue) {
  HeadFixture h;
  Rng rng(7);
  const Tensor<double> prop = random_tensor<double>({1, 4}, rng);
  const Tensor<double> v = random_tensor<double>({1, 4}, rng);
  Tensor<double> y(Shape{1, 6, 4});
  for (std::size_t j = 0; j < 4; ++j) {
    y[j] = prop[j];
    for (std::size_t k = 1; k < 6; ++k) y[k * 4 + j] = v[j];
  }
  Tensor<double> two(Shape{1, 2, 4});
  for (std::size_t j = 0; j < 4; ++j) {
    two[j] = prop[j];
    two[4 + j] = v[j];
  }
  Tape<double> t(false);
  const Tensor<double> pooled = t.value(h.run(t, y).value);
  EXPECT_LT(max_relative_difference(pooled, t.value(h.run(t, two).value)), 1e-14);
}

TEST(PoolAndHeadTest, ProprioOnlySequenceUsesZeroVisualFeature) {
  HeadFixture h;
  Rng rng(8);
  const Tensor<double> prop = random_tensor<double>({1, 1, 4}, rng);
  Tensor<double> with_zero(Shape{1, 2, 4});
  for (std::size_t j = 0; j < 4; ++j) with_zero[j] = prop[j];
  Tape<double> t(false);
  const HeadOutput a = h.run(t, prop);
  EXPECT_TRUE(t.value(a.mean).all_finite());
  const Tensor<double> value = t.value(a.value);
  EXPECT_EQ(value, t.value(h.run(t, with_zero).value));
}

TEST(PoolAndHeadTest, EveryTokenInfluencesValue) {
  HeadFixture h;
  Rng rng(9);
  const Tensor<double> y = random_tensor<double>({1, 5, 4}, rng);
  Tape<double> t;
  Var yv = t.leaf(y);
  HeadOutput out = pool_and_head(t, h.store, "head.", "value.", yv);
  t.backward(ops::sum(t, out.value));
  const Tensor<double>* g = t.grad(yv);
  ASSERT_NE(g, nullptr);
  for (std::size_t k = 0; k < 5; ++k) {
    double mass = 0;
    for (std::size_t j = 0; j < 4; ++j) mass += std::abs((*g)[k * 4 + j]);
    EXPECT_GT(mass, 0.0) << "token " << k;
  }
}

TEST(PoolAndHeadTest, LogStdIsClamped) {
  HeadFixture h;
  h.store.value("head.log_std") = Tensor<double>::vector({-9.0, 4.0});
  Tape<double> t(false);
  const Tensor<double> ls = t.value(h.run(t, Tensor<double>(Shape{1, 2, 4})).log_std);
  EXPECT_EQ(ls[0], kLogStdMin);
  EXPECT_EQ(ls[1], kLogStdMax);
}

TEST(GaussianTest, ClosedForms) {
  const double mean[2] = {0, 0}, log_std[2] = {0, 0};
  EXPECT_NEAR(gaussian_entropy(log_std, 2), 2.8379, 1e-4);
  EXPECT_NEAR(gaussian_log_prob(mean, mean, log_std, 2), -1.8379, 1e-4);
}

TEST(GaussianTest, EntropyIndependentOfMeanAndLogProbPeaksAtMean) {
  Rng rng(10);
  const double mean[2] = {0.3, -1.2}, log_std[2] = {-0.4, 0.2};
  const double at_mean = gaussian_log_prob(mean, mean, log_std, 2);
  for (int i = 0; i < 1000; ++i) {
    const ActionSample s = sample_action(mean, log_std, 2, rng);
    EXPECT_LE(s.log_prob, at_mean);
    EXPECT_EQ(s.entropy, gaussian_entropy(log_std, 2));
  }
  const double other[2] = {5, 5};
  const ActionSample s = sample_action(other, log_std, 2, rng);
  EXPECT_EQ(s.entropy, gaussian_entropy(log_std, 2));
}

TEST(GaussianTest, MonteCarloMean) {
  Rng rng(11);
  const double mean[2] = {0.5, -0.25}, log_std[2] = {-0.5, 0.3};
  const int n = 100000;
  double sum[2] = {0, 0};
  for (int i = 0; i < n; ++i) {
    const ActionSample s = sample_action(mean, log_std, 2, rng);
    sum[0] += s.action[0];
    sum[1] += s.action[1];
  }
  for (int j = 0; j < 2; ++j) {
    EXPECT_LT(std::abs(sum[j] / n - mean[j]), 3.0 * std::exp(log_std[j]) / std::sqrt(n));
  }
}

TEST(GaussianTest, TapeOpsMatchScalarFormsAndFiniteDifferences) {
  Rng rng(12);
  ParamStore<double> store;
  store.add("mean", random_tensor<double>({3, 2}, rng));
  store.add("log_std", random_tensor<double>({2}, rng, -1, 0.5));
  const Tensor<double> actions = random_tensor<double>({3, 2}, rng, -2, 2);
  {
    Tape<double> t(false);
    const Tensor<double> lp = t.value(gaussian_log_prob(t, t.leaf(store.value("mean")),
                                                        t.leaf(store.value("log_std")), actions));
    for (std::size_t b = 0; b < 3; ++b) {
      EXPECT_NEAR(lp[b],
                  gaussian_log_prob(actions.ptr() + 2 * b, store.value("mean").ptr() + 2 * b,
                                    store.value("log_std").ptr(), 2),
                  1e-12);
    }
  }
  auto f = [&](Tape<double>& t, const ParamStore<double>& s) {
    Var lp = gaussian_log_prob(t, t.param(s, "mean"), t.param(s, "log_std"), actions);
    return ops::add(t, ops::sum(t, ops::mul(t, lp, lp)),
                    gaussian_entropy(t, t.param(s, "log_std")));
  };
  EXPECT_LT(grad_check(f, store).max_rel_error, 1e-6);
}

ModelConfig small_model(BackboneKind kind) {
  ModelConfig m;
  m.backbone = kind;
  m.width = 4;
  m.layers = 2;
  m.proprio_hidden = 6;
  m.head_hidden = 6;
  m.frame_size = 4;
  m.patch_size = 2;
  m.chunk_size = 5;
  m.init_log_std = -0.3;
  return m;
}

TEST(PolicyTest, FullModelGradCheckToValue) {
  for (BackboneKind kind : {BackboneKind::kSsd, BackboneKind::kAttention,
                            BackboneKind::kProprioOnly, BackboneKind::kVisionOnly}) {
    Rng rng(13);
    const ModelConfig m = small_model(kind);
    ParamStore<double> store;
    init_policy(store, m, rng);
    const Tensor<double> proprio = random_tensor<double>({2, 11}, rng);
    const Tensor<double> depth = random_tensor<double>({2, 4, 4, 4}, rng, 0, 1);
    auto f = [&](Tape<double>& t, const ParamStore<double>& s) {
      return ops::mean(t, policy_forward(t, s, m, proprio, depth).value);
    };
    EXPECT_LT(grad_check(f, store).max_rel_error, 1e-4) << to_string(kind);
  }
}

TEST(PolicyTest, AblationsAreConfigurationOnly) {
  Rng rng(14);
  for (BackboneKind kind : {BackboneKind::kSsd, BackboneKind::kAttention,
                            BackboneKind::kProprioOnly, BackboneKind::kVisionOnly}) {
    ModelConfig m = small_model(kind);
    ParamStore<float> store;
    init_policy(store, m, rng);
    EXPECT_EQ(store.contains("proprio.l1.w"), m.uses_proprio());
    EXPECT_EQ(store.contains("vision.conv.w"), m.uses_vision());
    EXPECT_EQ(store.contains("backbone.l0.wq"), kind == BackboneKind::kAttention);
    Tape<float> t(false);
    const HeadOutput out =
        policy_forward(t, store, m, Tensor<float>(Shape{3, 11}, 0.1f),
                       Tensor<float>(Shape{3, 4, 4, 4}, 0.5f));
    EXPECT_EQ(t.value(out.mean).shape(), (Shape{3, 2}));
    EXPECT_EQ(t.value(out.value).shape(), (Shape{3, 1}));
  }
  EXPECT_EQ(parse_backbone_kind("vision_only"), BackboneKind::kVisionOnly);
  EXPECT_THROW(parse_backbone_kind("transformer"), ConfigError);
}

TEST(PolicyTest, RowOutputsIndependentOfBatchComposition) {
  Rng rng(15);
  ModelConfig m = small_model(BackboneKind::kSsd);
  m.width = 16;
  ParamStore<float> store;
  init_policy(store, m, rng);
  const Tensor<float> proprio = random_tensor<float>({5, 11}, rng);
  const Tensor<float> depth = random_tensor<float>({5, 4, 4, 4}, rng, 0, 1);
  Tape<float> t(false);
  const Tensor<float> full = t.value(policy_forward(t, store, m, proprio, depth).mean);
  for (std::size_t b = 0; b < 5; ++b) {
    Tensor<float> p1(Shape{1, 11}), d1(Shape{1, 4, 4, 4});
    std::copy_n(proprio.ptr() + b * 11, 11, p1.ptr());
    std::copy_n(depth.ptr() + b * 64, 64, d1.ptr());
    Tape<float> t1;  // gradient-recording path must agree bit for bit as well
    const Tensor<float> one = t1.value(policy_forward(t1, store, m, p1, d1).mean);
    EXPECT_EQ(one[0], full[b * 2]);
    EXPECT_EQ(one[1], full[b * 2 + 1]);
  }
}

}  // namespace
}  // namespace ssdrl
