#include "support/doctest_torch.hpp"

#include <algorithm>
#include <cmath>

#include "scinet/contrastive.hpp"
#include "scinet/errors.hpp"
#include "scinet/verify.hpp"

using namespace scinet;

namespace {

Generator tiny_generator() {
  ModelConfig m;
  m.width_divisor = 8;
  m.heads = 4;
  ScopedSeed guard(5);
  return Generator(m, VggEncoder(m.width_divisor));
}

// Style code of entry (i, j) is e_i, content code is e_j.
std::pair<torch::Tensor, torch::Tensor> one_hot_codes(int64_t n) {
  auto s = torch::zeros({n * n, n}, torch::kFloat64);
  auto c = torch::zeros({n * n, n}, torch::kFloat64);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      s[StylizationGrid::index(n, i, j)][i] = 1.0;
      c[StylizationGrid::index(n, i, j)][j] = 1.0;
    }
  }
  return {s, c};
}

}  // namespace

TEST_SUITE("contrastive") {

TEST_CASE("stand-in embedder") {
  ConvInstanceEmbedder embedder(32);
  auto imgs = torch::rand({3, 3, 32, 32});
  auto e = embedder.embed(imgs);
  CHECK(e.sizes() == torch::IntArrayRef({3, 32}));
  CHECK(embedder.dim() == 32);
  CHECK(torch::equal(e, embedder.embed(imgs)));

  ConvInstanceEmbedder twin(32);
  CHECK(twin.checksum() == embedder.checksum());
  CHECK(torch::equal(twin.embed(imgs), e));
  CHECK(ConvInstanceEmbedder(32, 99).checksum() != embedder.checksum());

  auto unit = torch::nn::functional::normalize(e, torch::nn::functional::NormalizeFuncOptions().dim(1));
  CHECK((unit[0] * unit[1]).sum().item<double>() < 1.0 - 1e-7);

  CHECK_THROWS_AS(embedder.embed(torch::rand({1, 3, 8, 8})), DimensionError);
  CHECK_THROWS_AS(embedder.embed(torch::rand({1, 1, 32, 32})), DimensionError);
  CHECK_THROWS_AS(ConvInstanceEmbedder(0), ConfigError);
}

TEST_CASE("embedder is frozen but passes gradients to its input") {
  ConvInstanceEmbedder embedder(16);
  const auto before = embedder.checksum();
  for (const auto& p : embedder.module()->parameters()) CHECK_FALSE(p.requires_grad());
  auto imgs = torch::rand({2, 3, 32, 32}).requires_grad_(true);
  embedder.embed(imgs).pow(2).sum().backward();
  REQUIRE(imgs.grad().defined());
  CHECK(imgs.grad().abs().sum().item<double>() > 0.0);
  CHECK(embedder.checksum() == before);
}

TEST_CASE("missing TorchScript embedder") {
  CHECK_THROWS_AS(TorchScriptEmbedder("/nonexistent/encoder.pt", 512), IoError);
}

TEST_CASE("projection heads emit unit vectors") {
  ProjectionHeads heads(32, 16, 8);
  auto e = torch::randn({5, 32});
  auto s = heads->style(e);
  auto c = heads->content(e);
  CHECK(s.sizes() == torch::IntArrayRef({5, 8}));
  CHECK((s.norm(2, 1) - 1).abs().max().item<float>() < 1e-5f);
  CHECK((c.norm(2, 1) - 1).abs().max().item<float>() < 1e-5f);
  CHECK_FALSE(torch::allclose(s, c));
}

TEST_CASE("contrastive sets") {
  const int64_t n = 3;
  auto s = style_view_sets(n, 1, 2);
  auto c = content_view_sets(n, 1, 2);
  const int64_t anchor = StylizationGrid::index(n, 1, 2);
  const std::vector<int64_t> style_pos{StylizationGrid::index(n, 1, 0), StylizationGrid::index(n, 1, 1)};
  const std::vector<int64_t> content_pos{StylizationGrid::index(n, 0, 2), StylizationGrid::index(n, 2, 2)};
  CHECK(s.positives == style_pos);
  CHECK(c.positives == content_pos);
  CHECK(s.negatives == c.negatives);
  CHECK(s.negatives.size() == 4);
  for (auto idx : s.negatives) {
    CHECK(idx / n != 1);
    CHECK(idx % n != 2);
  }
  for (const auto* sets : {&s, &c}) {
    CHECK(std::count(sets->positives.begin(), sets->positives.end(), anchor) == 0);
    CHECK(std::count(sets->negatives.begin(), sets->negatives.end(), anchor) == 0);
  }
}

TEST_CASE("build_grid") {
  auto g = tiny_generator();
  auto contents = torch::rand({2, 3, 64, 64});
  auto styles = torch::rand({2, 3, 64, 64});
  auto [c_in, s_in] = grid_inputs(contents, styles);
  CHECK(c_in.size(0) == 4);
  CHECK(torch::equal(c_in[StylizationGrid::index(2, 1, 0)], contents[0]));
  CHECK(torch::equal(s_in[StylizationGrid::index(2, 1, 0)], styles[1]));

  torch::NoGradGuard no_grad;
  auto grid = build_grid(contents, styles, g);
  CHECK(grid.n == 2);
  CHECK(grid.images.sizes() == torch::IntArrayRef({4, 3, 64, 64}));
  auto single = g->forward(contents.narrow(0, 0, 1), styles.narrow(0, 1, 1));
  CHECK((grid.at(1, 0) - single[0]).abs().max().item<float>() < 1e-5f);
  CHECK_THROWS_AS(grid.at(2, 0), DimensionError);

  CHECK_THROWS_AS(build_grid(contents.narrow(0, 0, 1), styles.narrow(0, 0, 1), g), ConfigError);
  CHECK_THROWS_AS(build_grid(contents, torch::rand({3, 3, 64, 64}), g), DimensionError);
}

TEST_CASE("identical embeddings give the closed-form value") {
  for (int64_t n : {2, 3, 4}) {
    auto codes = torch::ones({n * n, 6}, torch::kFloat64);
    const double expected = 2.0 * std::log(1.0 + static_cast<double>((n - 1) * (n - 1)));
    CHECK(icl_loss(codes, codes, n).item<double>() == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("perfectly separated codes") {
  const int64_t n = 3;
  auto [s, c] = one_hot_codes(n);
  const double tau = kDefaultTau;
  const double expected = 2.0 * std::log(1.0 + (n - 1) * (n - 1) * std::exp(-1.0 / tau));
  CHECK(icl_loss(s, c, n).item<double>() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(icl_loss(s, c, n).item<double>() == doctest::Approx(oracle::brute_force_icl(s, c, n, tau)).epsilon(1e-12));
  // Swapping the views' roles is the worst arrangement.
  CHECK(icl_loss(c, s, n).item<double>() > icl_loss(s, c, n).item<double>());
}

TEST_CASE("oracle, permutation and default temperature") {
  CHECK(check_icl_oracle({}).passed);
  CHECK(check_icl_permutation({}).passed);
  CHECK(check_icl_default_tau({}).passed);
  CHECK(kDefaultTau == 0.3);
}

TEST_CASE("temperature changes the loss") {
  torch::manual_seed(21);
  auto s = torch::randn({9, 4}, torch::kFloat64);
  auto c = torch::randn({9, 4}, torch::kFloat64);
  const double a = icl_loss(s, c, 3, 0.3).item<double>();
  const double b = icl_loss(s, c, 3, 0.1).item<double>();
  CHECK(a != b);
  CHECK(a == doctest::Approx(oracle::brute_force_icl(s, c, 3, 0.3)).epsilon(1e-10));
  CHECK(b == doctest::Approx(oracle::brute_force_icl(s, c, 3, 0.1)).epsilon(1e-10));
}

TEST_CASE("a gradient step lowers the loss") {
  torch::manual_seed(22);
  auto s = torch::randn({4, 8}, torch::kFloat64).requires_grad_(true);
  auto c = torch::randn({4, 8}, torch::kFloat64).requires_grad_(true);
  auto loss = icl_loss(s, c, 2);
  loss.backward();
  torch::NoGradGuard no_grad;
  auto after = icl_loss(s - 0.05 * s.grad(), c - 0.05 * c.grad(), 2);
  CHECK(after.item<double>() < loss.item<double>());
}

TEST_CASE("gradients stay finite when saturated") {
  auto [s, c] = one_hot_codes(2);
  s = (s * 50.0).requires_grad_(true);
  c = (c * 50.0).requires_grad_(true);
  icl_loss(s, c, 2, 0.01).backward();
  CHECK(torch::isfinite(s.grad()).all().item<bool>());
  CHECK(torch::isfinite(c.grad()).all().item<bool>());
  auto r = icl_gradient_check(torch::randn({9, 3}, torch::kFloat64), torch::randn({9, 3}, torch::kFloat64), 3);
  CHECK(r.passed);
}

TEST_CASE("literal form ignores the codes") {
  torch::manual_seed(23);
  const double expected = 2.0 * std::log(1.0 + 4.0);
  for (int trial = 0; trial < 3; ++trial) {
    auto s = torch::randn({9, 5}, torch::kFloat64);
    auto c = torch::randn({9, 5}, torch::kFloat64);
    CHECK(icl_loss(s, c, 3, kDefaultTau, IclForm::literal).item<double>() ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("icl_loss errors") {
  auto codes = torch::randn({4, 3});
  CHECK_THROWS_AS(icl_loss(codes, codes, 1), ConfigError);
  CHECK_THROWS_AS(icl_loss(codes, codes, 2, 0.0), ConfigError);
  CHECK_THROWS_AS(icl_loss(codes, codes, 2, -0.3), ConfigError);
  CHECK_THROWS_AS(icl_loss(codes, torch::randn({5, 3}), 2), DimensionError);
  CHECK_THROWS_AS(icl_loss(torch::randn({4}), codes, 2), DimensionError);
}

TEST_CASE("grid-level loss through embedder and heads") {
  auto g = tiny_generator();
  ConvInstanceEmbedder embedder(32);
  ProjectionHeads heads(32, 16, 8);
  auto grid = build_grid(torch::rand({2, 3, 64, 64}), torch::rand({2, 3, 64, 64}), g);
  auto loss = icl_loss(grid, embedder, heads);
  CHECK(std::isfinite(loss.item<double>()));
  loss.backward();
  double head_grad = 0.0;
  for (const auto& p : heads->parameters()) head_grad += p.grad().abs().sum().item<double>();
  CHECK(head_grad > 0.0);
  double fusion_grad = 0.0;
  for (const auto& p : g->fusion->parameters()) {
    if (p.grad().defined()) fusion_grad += p.grad().abs().sum().item<double>();
  }
  CHECK(fusion_grad > 0.0);
}

}
