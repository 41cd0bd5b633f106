#include "support/doctest_torch.hpp"

#include "scinet/errors.hpp"
#include "scinet/generator.hpp"
#include "scinet/verify.hpp"
#include "support/synthetic.hpp"

using namespace scinet;

namespace {

ModelConfig small_model() {
  ModelConfig m;
  m.width_divisor = 8;
  m.heads = 4;
  return m;
}

Generator make_generator(const ModelConfig& m, uint64_t seed = 11) {
  ScopedSeed guard(seed);
  return Generator(m, VggEncoder(m.width_divisor));
}

// Replaces the zero-initialized last layers of every affine head so the
// style pyramid actually influences the decoder.
void randomize_heads(Generator& g) {
  torch::NoGradGuard no_grad;
  for (auto& item : g->realigner->heads->named_parameters()) {
    if (item.key().find(".2.") != std::string::npos) item.value().normal_(0.0, 0.1);
  }
}

torch::Tensor pair_batch(int64_t n, int64_t size, bool style) {
  std::vector<torch::Tensor> imgs;
  for (int64_t i = 0; i < n; ++i) {
    imgs.push_back(style ? testing::style_image(static_cast<int>(i), size)
                         : testing::content_image(static_cast<int>(i), size));
  }
  return torch::cat(imgs);
}

}  // namespace

TEST_SUITE("generator") {

TEST_CASE("cross attention over a constant style is uniform") {
  CrossAttentionFusion fusion(8);
  auto content = torch::randn({2, 8, 3, 3});
  auto style = torch::full({2, 8, 4, 5}, 0.7f);
  auto out = fusion->forward(content, style);
  CHECK(out.fused.sizes() == content.sizes());
  CHECK(out.attention.sizes() == torch::IntArrayRef({2, 9, 20}));
  CHECK((out.attention - 1.0f / 20.0f).abs().max().item<float>() < 1e-6f);
  // Every content position receives the same attended value.
  auto shift = (out.fused - content).flatten(2);
  CHECK((shift - shift.select(2, 0).unsqueeze(2)).abs().max().item<float>() < 1e-5f);

  CHECK_THROWS_AS(fusion->forward(content, torch::randn({2, 4, 3, 3})), DimensionError);
  CHECK_THROWS_AS(fusion->forward(content, torch::randn({1, 8, 3, 3})), DimensionError);
}

TEST_CASE("cross attention oracle and row sums") {
  auto r = check_cross_attention_oracle({});
  CHECK_MESSAGE(r.passed, r.detail << " measured " << r.measured);
  CrossAttentionFusion fusion(4);
  auto out = fusion->forward(torch::randn({3, 4, 5, 2}), torch::randn({3, 4, 2, 6}));
  CHECK((out.attention.sum(-1) - 1).abs().max().item<float>() < 1e-6f);
}

TEST_CASE("model config validation") {
  ModelConfig m;
  CHECK(m.feature_channels() == 512);
  CHECK((m.decoder_channels() == std::array<int64_t, 4>{512, 256, 128, 64}));
  m.width_divisor = 3;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m.width_divisor = 8;
  m.heads = 5;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m.heads = 4;
  m.epsilon = 0.0;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  CHECK(parse_style_encoder("pe") == StyleEncoderKind::perception);
  CHECK(to_string(StyleEncoderKind::learnable_vgg) == "learnable_vgg");
  CHECK_THROWS_AS(parse_style_encoder("resnet"), ConfigError);
}

TEST_CASE("decoder maps 8x8 fused features to a 64x64 image") {
  auto g = make_generator(small_model());
  auto fused = torch::randn({2, 64, 8, 8});
  auto out = g->decode(fused, build_pyramid(torch::rand({2, 3, 64, 64})));
  CHECK(out.sizes() == torch::IntArrayRef({2, 3, 64, 64}));
  CHECK(out.min().item<float>() >= 0.0f);
  CHECK(out.max().item<float>() <= 1.0f);
}

TEST_CASE("every pyramid level reaches the output") {
  auto g = make_generator(small_model());
  auto fused = torch::randn({1, 64, 8, 8});
  auto style = torch::rand({1, 3, 64, 64});

  // At initialization the heads emit gamma = 1, beta = 0 whatever the style.
  auto a = g->decode(fused, build_pyramid(style));
  auto b = g->decode(fused, build_pyramid(torch::rand({1, 3, 64, 64})));
  CHECK(torch::equal(a, b));

  randomize_heads(g);
  auto pyramid = build_pyramid(style);
  for (auto& level : pyramid.levels) level = level.detach().requires_grad_(true);
  g->decode(fused, pyramid).sum().backward();
  for (int i = 0; i < kPyramidLevels; ++i) {
    const auto& grad = pyramid.levels[static_cast<size_t>(i)].grad();
    REQUIRE(grad.defined());
    CHECK_MESSAGE(grad.abs().sum().item<double>() > 0.0, "level " << i + 1);
  }
}

TEST_CASE("stylize shapes, range and determinism") {
  auto g = make_generator(small_model());
  auto c = pair_batch(2, 64, false);
  auto s = pair_batch(2, 64, true);
  torch::NoGradGuard no_grad;
  auto out = g->forward(c, s);
  CHECK(out.sizes() == torch::IntArrayRef({2, 3, 64, 64}));
  CHECK(out.min().item<float>() >= 0.0f);
  CHECK(out.max().item<float>() <= 1.0f);
  CHECK(torch::equal(out, g->forward(c, s)));

  auto twin = make_generator(small_model());
  CHECK(torch::equal(out, twin->forward(c, s)));

  // Content and style may differ in size.
  CHECK(g->forward(torch::rand({1, 3, 48, 32}), torch::rand({1, 3, 64, 64})).sizes() ==
        torch::IntArrayRef({1, 3, 48, 32}));
}

TEST_CASE("stylize input errors") {
  auto g = make_generator(small_model());
  torch::NoGradGuard no_grad;
  CHECK_THROWS_AS(g->forward(torch::rand({1, 3, 60, 64}), torch::rand({1, 3, 64, 64})),
                  DimensionError);
  CHECK_THROWS_AS(g->forward(torch::rand({1, 1, 64, 64}), torch::rand({1, 3, 64, 64})),
                  DimensionError);
  CHECK_THROWS_AS(g->forward(torch::rand({2, 3, 64, 64}), torch::rand({1, 3, 64, 64})),
                  DimensionError);
  CHECK_THROWS_AS(g->forward(torch::rand({3, 64, 64}), torch::rand({1, 3, 64, 64})),
                  DimensionError);
}

TEST_CASE("style encoder variants keep the pipeline shapes") {
  auto c = torch::rand({1, 3, 64, 64});
  auto s = torch::rand({1, 3, 64, 64});
  for (auto kind : {StyleEncoderKind::perception, StyleEncoderKind::fixed_vgg,
                    StyleEncoderKind::learnable_vgg}) {
    auto m = small_model();
    m.style_encoder = kind;
    auto g = make_generator(m);
    CAPTURE(to_string(kind));
    CHECK(g->style_features(s).sizes() == torch::IntArrayRef({1, 64, 8, 8}));
    torch::NoGradGuard no_grad;
    CHECK(g->forward(c, s).sizes() == c.sizes());
    const bool owns_style_params = kind != StyleEncoderKind::fixed_vgg;
    CHECK(static_cast<bool>(g->pe) == (kind == StyleEncoderKind::perception));
    CHECK(static_cast<bool>(g->style_vgg) == (kind == StyleEncoderKind::learnable_vgg));
    CHECK((g->pe || g->style_vgg) == owns_style_params);
  }
}

TEST_CASE("optional paths") {
  SUBCASE("without SCIN the pyramid is ignored") {
    auto m = small_model();
    m.use_scin = false;
    auto g = make_generator(m);
    CHECK_FALSE(g->realigner);
    torch::NoGradGuard no_grad;
    CHECK(g->forward(torch::rand({1, 3, 64, 64}), torch::rand({1, 3, 64, 64})).sizes() ==
          torch::IntArrayRef({1, 3, 64, 64}));
  }
  SUBCASE("relu5_1 fusion needs 16-aligned inputs") {
    auto m = small_model();
    m.fuse_relu5 = true;
    auto g = make_generator(m);
    REQUIRE(g->fusion5);
    torch::NoGradGuard no_grad;
    CHECK(g->forward(torch::rand({1, 3, 64, 64}), torch::rand({1, 3, 64, 64})).sizes() ==
          torch::IntArrayRef({1, 3, 64, 64}));
    CHECK_THROWS_AS(g->forward(torch::rand({1, 3, 56, 64}), torch::rand({1, 3, 64, 64})),
                    DimensionError);
  }
  SUBCASE("mismatched perceptual width") {
    ModelConfig m = small_model();
    CHECK_THROWS_AS(Generator(m, VggEncoder(4)), ConfigError);
  }
}

TEST_CASE("gradients reach every trainable generator module") {
  auto g = make_generator(small_model());
  randomize_heads(g);
  auto out = g->forward(pair_batch(1, 64, false), pair_batch(1, 64, true));
  (out - 0.5).pow(2).mean().backward();
  for (const auto& child : g->named_children()) {
    double total = 0.0;
    for (const auto& p : child.value()->parameters()) {
      if (p.grad().defined()) total += p.grad().abs().sum().item<double>();
    }
    CHECK_MESSAGE(total > 0.0, child.key());
  }
  // The shared VGG is frozen and not owned by the generator.
  for (const auto& p : g->perceptual()->parameters()) CHECK_FALSE(p.requires_grad());
  for (const auto& item : g->named_parameters()) {
    CHECK_MESSAGE(item.key().rfind("perceptual", 0) != 0, item.key());
  }
}

}
