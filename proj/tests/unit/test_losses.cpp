#include "support/doctest_torch.hpp"

#include <cmath>
#include <limits>

#include "scinet/errors.hpp"
#include "scinet/losses.hpp"
#include "scinet/verify.hpp"
#include "support/synthetic.hpp"

using namespace scinet;

namespace {

VggEncoder small_vgg() { return VggEncoder(8); }

torch::Tensor one(double v) { return torch::full({}, v, torch::kFloat64); }

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("perceptual losses vanish at identity and are symmetric") {
  auto vgg = small_vgg();
  auto a = testing::content_image(0, 64);
  auto b = testing::style_image(1, 64);
  CHECK(content_loss(a, a, vgg).item<double>() == 0.0);
  CHECK(style_loss(a, a, vgg).item<double>() == 0.0);
  CHECK(content_loss(a, b, vgg).item<double>() > 0.0);
  CHECK(style_loss(a, b, vgg).item<double>() > 0.0);
  CHECK(content_loss(a, b, vgg).item<double>() ==
        doctest::Approx(content_loss(b, a, vgg).item<double>()).epsilon(1e-6));
  CHECK(style_loss(a, b, vgg).item<double>() ==
        doctest::Approx(style_loss(b, a, vgg).item<double>()).epsilon(1e-6));
  CHECK(check_loss_zero_at_identity({}).passed);
}

TEST_CASE("style loss ignores spatial arrangement") {
  auto vgg = small_vgg();
  auto style = testing::style_image(2, 64);
  // Swapping image halves moves content but keeps most texture statistics.
  auto swapped = torch::cat({style.narrow(3, 32, 32), style.narrow(3, 0, 32)}, 3);
  auto other = testing::content_image(3, 64);
  CHECK(style_loss(swapped, style, vgg).item<double>() < style_loss(other, style, vgg).item<double>());
  CHECK(content_loss(swapped, style, vgg).item<double>() > 0.0);
}

TEST_CASE("style loss sums per-layer moment distances") {
  auto vgg = small_vgg();
  auto x = torch::rand({2, 3, 32, 32});
  auto s = torch::rand({1, 3, 32, 32});
  auto fx = vgg->extract(x, kAllVggLayers);
  auto fs = vgg->extract(s, kAllVggLayers);
  double expected = 0.0;
  for (VggLayer l : kAllVggLayers) {
    auto a = instance_stats(fx.at(l));
    auto b = instance_stats(fs.at(l).expand_as(fx.at(l)));
    expected += torch::mse_loss(a.mu, b.mu).item<double>() + torch::mse_loss(a.sigma, b.sigma).item<double>();
  }
  CHECK(style_loss(x, s, vgg).item<double>() == doctest::Approx(expected).epsilon(1e-5));
  CHECK(style_loss(fx, fs).item<double>() == doctest::Approx(expected).epsilon(1e-5));
  CHECK(check_gradient_style_loss({}).passed);
}

TEST_CASE("content loss uses only the deep layers") {
  auto vgg = small_vgg();
  auto x = torch::rand({1, 3, 32, 32});
  auto y = torch::rand({1, 3, 32, 32});
  auto fx = vgg->extract(x, kContentLayers);
  auto fy = vgg->extract(y, kContentLayers);
  const double expected = torch::mse_loss(fx.at(VggLayer::relu4_1), fy.at(VggLayer::relu4_1)).item<double>() +
                          torch::mse_loss(fx.at(VggLayer::relu5_1), fy.at(VggLayer::relu5_1)).item<double>();
  CHECK(content_loss(x, y, vgg).item<double>() == doctest::Approx(expected).epsilon(1e-6));
  CHECK_THROWS_AS(content_loss(x, torch::rand({1, 3, 64, 64}), vgg), DimensionError);
}

TEST_CASE("adversarial losses from fixed scores") {
  auto half = torch::full({2, 1, 4, 4}, 0.5);
  CHECK(discriminator_loss(half, half).item<double>() == doctest::Approx(2.0 * std::log(2.0)));
  CHECK(generator_adversarial_loss(half).item<double>() == doctest::Approx(std::log(2.0)));

  auto ones = torch::ones({1, 1, 2, 2}, torch::kFloat64);
  auto zeros = torch::zeros({1, 1, 2, 2}, torch::kFloat64);
  const double perfect = discriminator_loss(ones, zeros).item<double>();
  CHECK(perfect >= 0.0);
  CHECK(perfect < 1e-6);
  // Clamping keeps a fooled discriminator finite.
  const double fooled = discriminator_loss(zeros, ones).item<double>();
  CHECK(std::isfinite(fooled));
  CHECK(fooled == doctest::Approx(-2.0 * std::log(kScoreClamp)).epsilon(1e-6));
}

TEST_CASE("discriminator produces a patch grid") {
  Discriminator d(8);
  auto scores = d->forward(torch::rand({3, 3, 64, 64}));
  CHECK(scores.sizes() == torch::IntArrayRef({3, 1, 4, 4}));
  CHECK(scores.min().item<float>() > 0.0f);
  CHECK(scores.max().item<float>() < 1.0f);
  CHECK_THROWS_AS(d->forward(torch::rand({1, 3, 16, 16})), DimensionError);
  CHECK_THROWS_AS(Discriminator(5), ConfigError);
}

TEST_CASE("discriminator term does not reach the generator") {
  Discriminator d(8);
  auto source = torch::rand({2, 3, 64, 64}).requires_grad_(true);
  auto fake = source * 0.9;
  auto losses = adversarial_losses(fake, torch::rand({2, 3, 64, 64}), d);
  losses.discriminator.backward({}, /*retain_graph=*/true);
  CHECK_FALSE(source.grad().defined());
  double d_grad = 0.0;
  for (const auto& p : d->parameters()) d_grad += p.grad().abs().sum().item<double>();
  CHECK(d_grad > 0.0);
  losses.generator.backward();
  REQUIRE(source.grad().defined());
  CHECK(source.grad().abs().sum().item<double>() > 0.0);
}

TEST_CASE("identity loss") {
  auto vgg = small_vgg();
  auto c = torch::rand({1, 3, 32, 32});
  auto s = torch::rand({1, 3, 32, 32});
  Stylizer perfect = [](const torch::Tensor& content, const torch::Tensor&) { return content; };
  CHECK(identity_loss(perfect, c, s, vgg).item<double>() == 0.0);

  Stylizer dim = [](const torch::Tensor& content, const torch::Tensor&) { return content * 0.5; };
  const double pixel = torch::mse_loss(c * 0.5, c).item<double>() + torch::mse_loss(s * 0.5, s).item<double>();
  const double both = identity_loss(dim, c, s, vgg, 1.0, 1.0).item<double>();
  const double pixel_only = identity_loss(dim, c, s, vgg, 1.0, 0.0).item<double>();
  const double feature_only = identity_loss(dim, c, s, vgg, 0.0, 1.0).item<double>();
  CHECK(pixel_only == doctest::Approx(pixel).epsilon(1e-6));
  CHECK(both == doctest::Approx(pixel_only + feature_only).epsilon(1e-6));
  CHECK(identity_loss(dim, c, s, vgg).item<double>() ==
        doctest::Approx(50.0 * pixel_only + feature_only).epsilon(1e-6));
  CHECK(check_identity_weights({}).passed);

  CHECK(identity_loss_literal(c, c, c, vgg).item<double>() == 0.0);
  CHECK(identity_loss_literal(c, c, s, vgg).item<double>() > 0.0);
}

TEST_CASE("total loss weighting") {
  LossComponents unit{one(1), one(1), one(1), one(1), one(1), one(1)};
  auto obj = total_loss(unit, LossWeights{});
  CHECK(obj.bundle.total == doctest::Approx(8.3).epsilon(1e-12));
  CHECK(obj.total.item<double>() == doctest::Approx(8.3).epsilon(1e-12));
  CHECK(check_total_loss_weights({}).passed);

  LossWeights w;
  CHECK(w.style == 1.0);
  CHECK(w.content == 1.0);
  CHECK(w.identity == 5.0);
  CHECK(w.adversarial == 1.0);
  CHECK(w.contrastive == 0.3);
  CHECK(w.identity_pixel == 50.0);
  CHECK(w.identity_feature == 1.0);

  // The discriminator's own loss is reported but never weighted in.
  LossComponents d_only;
  d_only.adversarial_d = one(3.0);
  auto d_obj = total_loss(d_only, w);
  CHECK(d_obj.bundle.adversarial_d == 3.0);
  CHECK(d_obj.bundle.total == 0.0);
  CHECK(d_obj.total.item<double>() == 0.0);
}

TEST_CASE("zero and missing components") {
  auto x = torch::tensor(2.0, torch::dtype(torch::kFloat64).requires_grad(true));
  LossWeights w;
  w.contrastive = 0.0;
  LossComponents c;
  c.style = x * 1.0;
  c.contrastive = x * 100.0;
  auto obj = total_loss(c, w);
  CHECK(obj.bundle.total == 2.0);
  CHECK(obj.bundle.contrastive == 200.0);
  obj.total.backward();
  CHECK(x.grad().item<double>() == 1.0);

  w.style = -1.0;
  CHECK_THROWS_AS(total_loss(c, w), ConfigError);
  w.style = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(total_loss(c, w), ConfigError);
}

TEST_CASE("non-finite components are rejected by name") {
  LossComponents c{one(1), one(std::nan("")), one(1), one(1), one(1), one(1)};
  try {
    total_loss(c, LossWeights{});
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.component() == "content");
  }
  c.content = one(1);
  c.contrastive = one(std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(total_loss(c, LossWeights{}), TrainingError);
  c.contrastive = torch::ones({2});
  CHECK_THROWS_AS(total_loss(c, LossWeights{}), DimensionError);
}

}
