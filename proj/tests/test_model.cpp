#include <gtest/gtest.h>

#include "dista/model.hpp"
#include "test_support.hpp"

using namespace dista;
using testing_support::random_steps;
using testing_support::random_tensor;
using testing_support::spatial_config;

namespace {

struct RunResult {
  Tensor<float> logits;
  std::vector<std::pair<std::string, std::vector<Tensor<float>>>> layers;
};

RunResult run(Model<float>& m, const std::vector<Tensor<float>>& steps, std::size_t batch,
              BnMode bn = BnMode::train) {
  Tape<float> tape(false);
  ForwardContext<float> ctx{&tape, bn};
  ModelTrace<float> trace;
  RunResult r;
  r.logits = model_forward(ctx, m, steps, batch, &trace).value();
  for (const auto& [name, vars] : trace.layers) {
    std::vector<Tensor<float>> vals;
    for (const auto& v : vars) vals.push_back(v.value());
    r.layers.emplace_back(name, std::move(vals));
  }
  return r;
}

ModelConfig small_config() {
  ModelConfig c;
  c.blocks = 2;
  c.dim = 16;
  c.tokens = 4;
  c.in_features = 6;
  c.timesteps = 5;
  c.num_classes = 3;
  c.attention.heads = 2;
  c.attention.taw_size = 3;
  c.attention.denoise_threshold = 1;
  c.adn_blocks = 2;
  return c;
}

}  // namespace

TEST(Patchify, CifarSizedImageGivesSixtyFourTokens) {
  const auto cfg = ModelConfig::for_images(32, 3, 4);
  EXPECT_EQ(cfg.tokens, 64u);
  EXPECT_EQ(cfg.in_features, 48u);
  const auto p = patchify(Tensor<float>({2, 3, 32, 32}), 4);
  EXPECT_EQ(p.shape(), (Shape{128, 48}));
}

TEST(Patchify, RowMajorGridAndChannelMajorFeatures) {
  Tensor<float> img({1, 2, 4, 4});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = float(i);
  const auto p = patchify(img, 2);
  // token 1 is the top-right patch; feature 4 starts channel 1
  EXPECT_EQ(p(1, 0), 2.0f);
  EXPECT_EQ(p(1, 3), 7.0f);
  EXPECT_EQ(p(1, 4), 18.0f);
  EXPECT_EQ(p(2, 0), 8.0f);
}

TEST(Patchify, IndivisibleImageIsAConfigError) {
  EXPECT_THROW(patchify(Tensor<float>({1, 3, 30, 30}), 4), ConfigError);
  EXPECT_THROW(ModelConfig::for_images(30, 3, 4), ConfigError);
}

TEST(PatchEmbed, BinaryOutputAndZeroImageGivesNoSpikes) {
  auto cfg = ModelConfig::for_images(8, 3, 4);
  cfg.dim = 8;
  cfg.timesteps = 3;
  cfg.attention.taw_size = 2;
  Model<float> m(cfg, 1);
  Tape<float> tape(false);
  ForwardContext<float> ctx{&tape};
  std::mt19937_64 rng(2);
  const auto spikes = patch_embed(ctx, m, random_tensor<float>({2, 3, 8, 8}, rng, -2, 2));
  ASSERT_EQ(spikes.size(), 3u);
  bool any = false;
  for (const auto& s : spikes) {
    EXPECT_EQ(s.shape(), (Shape{8, 8}));
    EXPECT_TRUE(is_binary(s.value()));
    for (float v : s.value().values()) any = any || v != 0;
  }
  EXPECT_TRUE(any);
  for (const auto& s : patch_embed(ctx, m, Tensor<float>({2, 3, 8, 8})))
    for (float v : s.value().values()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(patch_embed(ctx, m, Tensor<float>({2, 3, 16, 16})), DimensionError);
}

TEST(Mlp, BinaryOutputHiddenWidthAndZeroPropagation) {
  Model<float> m(small_config(), 3);
  auto& blk = m.blocks()[0];
  EXPECT_EQ(m.params()[blk.mlp.fc1.w].value.shape(), (Shape{16, 64}));
  Tape<float> tape(false);
  ForwardContext<float> ctx{&tape};
  std::mt19937_64 rng(4);
  std::vector<Var<float>> x, zeros;
  for (int t = 0; t < 4; ++t) {
    x.push_back(tape.constant(testing_support::random_binary<float>({8, 16}, rng)));
    zeros.push_back(tape.constant(Tensor<float>({8, 16})));
  }
  for (const auto& s : mlp_forward(ctx, m.params(), blk.mlp, m.config().neuron, std::span<const Var<float>>(x))) {
    EXPECT_EQ(s.shape(), (Shape{8, 16}));
    EXPECT_TRUE(is_binary(s.value()));
  }
  for (const auto& s : mlp_forward(ctx, m.params(), blk.mlp, m.config().neuron, std::span<const Var<float>>(zeros)))
    for (float v : s.value().values()) EXPECT_EQ(v, 0.0f);
}

TEST(EncoderBlock, ResidualJunctionsHoldSmallIntegers) {
  Model<float> m(small_config(), 5);
  std::mt19937_64 rng(6);
  const auto r = run(m, random_steps<float>(5, 8, 6, rng), 2);
  // bound = 1 + number of residual additions on the path so far
  std::size_t adds = 0;
  bool saw_two = false;
  for (const auto& [name, steps] : r.layers) {
    const bool junction = name.find("residual") != std::string::npos;
    if (junction) ++adds;
    for (const auto& s : steps)
      for (float v : s.values()) {
        EXPECT_EQ(v, std::floor(v)) << name;
        EXPECT_GE(v, 0.0f) << name;
        EXPECT_LE(v, float(1 + adds)) << name;
        if (name == "block0.residual1" && v == 2.0f) saw_two = true;
      }
    if (!junction) {
      for (const auto& s : steps) EXPECT_TRUE(is_binary(s)) << name;
    }
  }
  EXPECT_TRUE(saw_two);
}

TEST(EncoderBlock, ZeroWeightsMakeAPureResidual) {
  auto cfg = small_config();
  cfg.blocks = 1;
  cfg.adn_blocks = 1;
  Model<float> m(cfg, 7);
  for (auto& p : m.params()) {
    if (p.name.rfind("block0.", 0) == 0 && p.kind != ParamKind::tau && p.kind != ParamKind::bn_gamma) p.value.fill(0);
  }
  Tape<float> tape(false);
  ForwardContext<float> ctx{&tape};
  std::mt19937_64 rng(8);
  std::vector<Var<float>> x;
  for (int t = 0; t < 5; ++t) x.push_back(tape.constant(testing_support::random_binary<float>({8, 16}, rng)));
  const auto z = encoder_block_forward(ctx, m, 0, std::span<const Var<float>>(x), 2);
  for (std::size_t t = 0; t < x.size(); ++t) EXPECT_EQ(z[t].value(), x[t].value());
}

TEST(ClassifierHead, ZeroFeaturesGiveBiasAndHeadIsLinear) {
  Model<float> m(small_config(), 9);
  const auto& bias = m.params()[m.head().b].value;
  Tape<float> tape(false);
  ForwardContext<float> ctx{&tape};
  std::vector<Var<float>> zeros(3, tape.constant(Tensor<float>({8, 16})));
  const auto z = classifier_head(ctx, m, std::span<const Var<float>>(zeros), 2).value();
  EXPECT_EQ(z.shape(), (Shape{2, 3}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(z(i, c), bias[c]);

  std::mt19937_64 rng(10);
  std::vector<Var<float>> f, f2;
  for (int t = 0; t < 3; ++t) {
    auto s = random_tensor<float>({8, 16}, rng, 0, 3);
    Tensor<float> d = s;
    for (auto& v : d.values()) v *= 2;
    f.push_back(tape.constant(s));
    f2.push_back(tape.constant(d));
  }
  const auto a = classifier_head(ctx, m, std::span<const Var<float>>(f), 2).value();
  const auto b = classifier_head(ctx, m, std::span<const Var<float>>(f2), 2).value();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(b(i, c) - bias[c], 2 * (a(i, c) - bias[c]), 1e-5);
}

TEST(ModelForward, Spikformer4x384ShapeAndParameterCount) {
  auto cfg = ModelConfig::for_images(32, 3, 4);
  cfg.blocks = 4;
  cfg.dim = 384;
  cfg.timesteps = 4;
  cfg.num_classes = 10;
  cfg.attention.heads = 12;
  cfg.attention.taw_size = 4;
  cfg.adn_blocks = 4;
  Model<float> m(cfg, 11);
  // Hand count, D = 384, hidden 1536, N = 64, F = 48, window 4:
  //   stem   48·384 + 384 + 2·384 + 64·384                                   =     44,160
  //   attn   3·4·384² + 3·64·384 + 384² + 384 + 2·384 + 64·384               =  2,016,384
  //   mlp    384·1536 + 1536 + 2·1536 + 64·1536 + 1536·384 + 384 + 2·384 + 64·384 = 1,308,288
  //   head   384·10 + 10                                                     =      3,850
  //   total  44,160 + 4·(2,016,384 + 1,308,288) + 3,850                      = 13,346,698
  const std::size_t hand = 13'346'698;
  const std::size_t actual = m.params().scalar_count();
  EXPECT_LE(std::abs(double(actual) - double(hand)), 0.1 * hand);
  EXPECT_EQ(actual, hand);
  EXPECT_EQ(expected_parameter_count(cfg), hand);

  std::mt19937_64 rng(12);
  Tape<float> tape(false);
  ForwardContext<float> ctx{&tape};
  const auto images = random_tensor<float>({2, 3, 32, 32}, rng);
  const auto steps = std::vector<Tensor<float>>(4, patchify(images, 4));
  const auto logits = model_forward(ctx, m, steps, 2).value();
  EXPECT_EQ(logits.shape(), (Shape{2, 10}));
  EXPECT_TRUE(all_finite(logits));
}

TEST(ModelForward, SameSeedSameInputIsBitIdentical) {
  std::mt19937_64 rng(13);
  const auto steps = random_steps<float>(5, 8, 6, rng);
  Model<float> a(small_config(), 14), b(small_config(), 14);
  const auto ra = run(a, steps, 2), rb = run(b, steps, 2);
  EXPECT_TRUE(bit_identical(ra.logits, rb.logits));
  // the second call sees updated running statistics but train-mode output does not depend on them
  EXPECT_TRUE(bit_identical(run(a, steps, 2).logits, ra.logits));
}

TEST(ModelForward, MismatchedStepShapeIsADimensionError) {
  Model<float> m(small_config(), 15);
  Tape<float> tape(false);
  ForwardContext<float> ctx{&tape};
  EXPECT_THROW(model_forward(ctx, m, {Tensor<float>({8, 5})}, 2), DimensionError);
  EXPECT_THROW(model_forward(ctx, m, {}, 2), DimensionError);
}

TEST(ModelForward, SpatialOnlySettingMatchesReferenceModel) {
  for (std::size_t heads : {1u, 2u}) {
    const auto cfg = spatial_config(2, 16, heads, 6, 6, 4);
    Model<float> m(cfg, 16 + heads);
    auto reference = testing_support::reference_from(m);
    std::mt19937_64 rng(20);
    const auto steps = random_steps<float>(4, 18, 6, rng, -1, 3);
    const auto got = run(m, steps, 3);
    std::vector<ref::Mat> in;
    for (const auto& s : steps) in.push_back(ref::from_tensor(s));
    const auto expected = reference.forward(in, 3, 6);
    ASSERT_EQ(got.layers.size(), reference.trace.size());
    for (std::size_t i = 0; i < got.layers.size(); ++i) {
      ASSERT_EQ(got.layers[i].first, reference.trace[i].first);
      for (std::size_t t = 0; t < steps.size(); ++t)
        EXPECT_TRUE(bit_identical(got.layers[i].second[t], ref::to_tensor(reference.trace[i].second[t])))
            << got.layers[i].first << " t = " << t;
    }
    EXPECT_TRUE(bit_identical(got.logits, ref::to_tensor(expected)));
    // the comparison is only meaningful if attention and MLP actually fire
    for (const char* layer : {"block0.attn", "block1.mlp"}) {
      float spikes = 0;
      for (const auto& [name, st] : got.layers)
        if (name == layer)
          for (const auto& s : st)
            for (float v : s.values()) spikes += v;
      EXPECT_GT(spikes, 0.0f) << layer;
    }
  }
}

TEST(ModelForward, LaterInputsNeverChangeEarlierLayerOutputs) {
  std::mt19937_64 rng(21);
  const auto steps = random_steps<float>(5, 8, 6, rng);
  Model<float> base(small_config(), 22);
  const auto full = run(base, steps, 2);
  for (std::size_t t = 0; t < 4; ++t) {
    auto perturbed = steps;
    for (std::size_t s = t + 1; s < 5; ++s) perturbed[s] = random_tensor<float>({8, 6}, rng, -1, 2);
    Model<float> m(small_config(), 22);
    const auto p = run(m, perturbed, 2);
    Model<float> m2(small_config(), 22);
    const auto truncated = run(m2, std::vector<Tensor<float>>(steps.begin(), steps.begin() + t + 1), 2);
    for (std::size_t i = 0; i < full.layers.size(); ++i)
      for (std::size_t s = 0; s <= t; ++s) {
        EXPECT_TRUE(bit_identical(full.layers[i].second[s], p.layers[i].second[s])) << full.layers[i].first;
        EXPECT_TRUE(bit_identical(full.layers[i].second[s], truncated.layers[i].second[s])) << full.layers[i].first;
      }
  }
}
