#include "support/doctest_torch.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>

#include "scinet/errors.hpp"
#include "scinet/training.hpp"
#include "support/synthetic.hpp"

using namespace scinet;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.model.width_divisor = 8;
  c.model.heads = 4;
  c.model.embed_dim = 32;
  c.model.proj_hidden = 16;
  c.model.proj_dim = 8;
  c.image_size = 32;
  c.crop_size = 32;
  c.grid_size = 2;
  c.steps = 3;
  c.seed = 17;
  return c;
}

Dataset dataset(bool style, int count, int64_t size = 32) {
  std::vector<torch::Tensor> imgs;
  for (int i = 0; i < count; ++i) {
    imgs.push_back((style ? testing::style_image(i, size) : testing::content_image(i, size)));
  }
  return Dataset::from_tensors(std::move(imgs));
}

Batch batch_for(const TrainConfig& c, int64_t step) {
  static const Dataset contents = dataset(false, 3);
  static const Dataset styles = dataset(true, 3);
  return sample_batch(contents, styles, c.grid_size, c.crop_size, c.seed, step);
}

bool same_bundle(const LossBundle& a, const LossBundle& b, double tol) {
  auto near = [&](double x, double y) { return std::abs(x - y) <= tol; };
  return near(a.content, b.content) && near(a.style, b.style) && near(a.identity, b.identity) &&
         near(a.adversarial_g, b.adversarial_g) && near(a.adversarial_d, b.adversarial_d) &&
         near(a.contrastive, b.contrastive) && near(a.total, b.total);
}

bool same_parameters(torch::nn::Module& a, torch::nn::Module& b) {
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (const auto& item : pa) {
    const auto* other = pb.find(item.key());
    if (!other || !torch::equal(item.value(), *other)) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("sample_batch is a pure function of seed and step") {
  auto contents = dataset(false, 3, 40);
  auto styles = dataset(true, 1, 40);
  auto a = sample_batch(contents, styles, 2, 32, 5, 9);
  auto b = sample_batch(contents, styles, 2, 32, 5, 9);
  CHECK(a.contents.sizes() == torch::IntArrayRef({2, 3, 32, 32}));
  CHECK(a.styles.sizes() == torch::IntArrayRef({2, 3, 32, 32}));
  CHECK(torch::equal(a.contents, b.contents));
  CHECK(torch::equal(a.styles, b.styles));
  auto c = sample_batch(contents, styles, 2, 32, 5, 10);
  auto d = sample_batch(contents, styles, 2, 32, 6, 9);
  CHECK_FALSE((torch::equal(c.contents, a.contents) && torch::equal(d.contents, a.contents)));
  CHECK_THROWS_AS(sample_batch(contents, styles, 0, 32, 5, 9), ConfigError);
}

TEST_CASE("datasets") {
  testing::TempDir dir("dataset");
  CHECK_THROWS_AS(Dataset::load(dir / "missing", 32), ConfigError);
  std::filesystem::create_directories(dir / "empty");
  try {
    Dataset::load(dir / "empty", 32);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find((dir / "empty").string()) != std::string::npos);
  }
  testing::write_contents(dir / "c", 2, 48);
  auto ds = Dataset::load(dir / "c", 32);
  CHECK(ds.size() == 2);
  CHECK(ds.image(1).sizes() == torch::IntArrayRef({1, 3, 32, 32}));
  CHECK(ds.paths()[0].filename() == "content_0.png");
  CHECK_THROWS_AS(Dataset::from_tensors({}), ConfigError);
}

TEST_CASE("a step changes trainable modules and leaves frozen ones alone") {
  Trainer t(tiny_config());
  const auto vgg_sum = parameter_checksum(*t.perceptual());
  const auto embed_sum = t.embedder().checksum();
  const auto g_sum = parameter_checksum(*t.generator());
  const auto d_sum = parameter_checksum(*t.discriminator());
  const auto h_sum = parameter_checksum(*t.projection_heads());
  auto bundle = t.step(batch_for(t.config(), 0));
  CHECK(t.steps_done() == 1);
  CHECK(std::isfinite(bundle.total));
  CHECK(bundle.total == doctest::Approx(weighted_total(bundle, t.config().weights)));
  CHECK(parameter_checksum(*t.perceptual()) == vgg_sum);
  CHECK(t.embedder().checksum() == embed_sum);
  CHECK(parameter_checksum(*t.generator()) != g_sum);
  CHECK(parameter_checksum(*t.discriminator()) != d_sum);
  CHECK(parameter_checksum(*t.projection_heads()) != h_sum);
}

TEST_CASE("no_adv freezes the discriminator") {
  auto c = tiny_config();
  c.no_adv = true;
  Trainer t(c);
  const auto d_sum = parameter_checksum(*t.discriminator());
  for (int s = 0; s < 2; ++s) {
    auto b = t.step(batch_for(c, s));
    CHECK(b.adversarial_g == 0.0);
    CHECK(b.adversarial_d == 0.0);
  }
  CHECK(parameter_checksum(*t.discriminator()) == d_sum);
}

TEST_CASE("no_icl zeroes the contrastive entry") {
  auto c = tiny_config();
  c.no_icl = true;
  Trainer t(c);
  const auto h_sum = parameter_checksum(*t.projection_heads());
  auto b = t.step(batch_for(c, 0));
  CHECK(b.contrastive == 0.0);
  CHECK(parameter_checksum(*t.projection_heads()) == h_sum);
  CHECK(t.step(batch_for(c, 1)).contrastive == 0.0);
}

TEST_CASE("style encoder swap keeps the pipeline shapes") {
  for (auto kind : {StyleEncoderKind::perception, StyleEncoderKind::fixed_vgg,
                    StyleEncoderKind::learnable_vgg}) {
    CAPTURE(to_string(kind));
    auto c = tiny_config();
    c.model.style_encoder = kind;
    Trainer t(c);
    auto batch = batch_for(c, 0);
    CHECK(t.generator()->style_features(batch.styles).sizes() == torch::IntArrayRef({2, 64, 4, 4}));
    CHECK(t.stylize(batch.contents, batch.styles).sizes() == batch.contents.sizes());
    CHECK(std::isfinite(t.step(batch).total));
  }
}

TEST_CASE("identical seeds give identical trajectories") {
  Trainer a(tiny_config());
  Trainer b(tiny_config());
  for (int s = 0; s < 3; ++s) {
    auto batch = batch_for(a.config(), s);
    CHECK(same_bundle(a.step(batch), b.step(batch), 0.0));
  }
  auto other = tiny_config();
  other.seed = 18;
  Trainer c(other);
  CHECK_FALSE(same_parameters(*a.generator(), *c.generator()));
}

TEST_CASE("save, load and resume") {
  testing::TempDir dir("resume");
  const auto path = dir / "t.ckpt";
  Trainer a(tiny_config());
  a.step(batch_for(a.config(), 0));
  a.save(path);

  Trainer b(tiny_config());
  b.load(path);
  CHECK(b.steps_done() == 1);
  CHECK(same_parameters(*a.generator(), *b.generator()));
  CHECK(same_parameters(*a.discriminator(), *b.discriminator()));
  CHECK(same_parameters(*a.projection_heads(), *b.projection_heads()));
  CHECK(same_bundle(a.step(batch_for(a.config(), 1)), b.step(batch_for(b.config(), 1)), 1e-6));

  auto restored = Trainer::from_checkpoint(path);
  CHECK(restored->steps_done() == 1);
  CHECK(restored->config().seed == 17);
  CHECK(to_text(restored->config()) == to_text(tiny_config()));

  auto mismatched = tiny_config();
  mismatched.no_adv = true;
  Trainer wrong(mismatched);
  CHECK_THROWS_AS(wrong.load(path), ConfigError);
}

TEST_CASE("stylize is deterministic inference") {
  Trainer t(tiny_config());
  auto batch = batch_for(t.config(), 0);
  auto x = t.stylize(batch.contents, batch.styles);
  CHECK_FALSE(x.requires_grad());
  CHECK(torch::equal(x, t.stylize(batch.contents, batch.styles)));
  CHECK(t.steps_done() == 0);
}

TEST_CASE("metrics records") {
  LossBundle b{1.5, 2.0, 0.25, 0.5, 1.0, 4.0, 9.0};
  auto j = nlohmann::json::parse(metrics_record(7, b));
  CHECK(j["step"] == 7);
  CHECK(j["content"] == 1.5);
  CHECK(j["contrastive"] == 4.0);
  CHECK(j["total"] == 9.0);
  CHECK(metrics_record(7, b).find('\n') == std::string::npos);
  CHECK(metrics_record(7, b).rfind("{\"step\":7,\"content\"", 0) == 0);
}

TEST_CASE("run_training writes metrics and checkpoints") {
  testing::TempDir dir("run");
  testing::write_contents(dir / "content", 2, 32);
  testing::write_styles(dir / "style", 2, 32);
  auto c = tiny_config();
  c.content_dir = (dir / "content").string();
  c.style_dir = (dir / "style").string();
  c.out_dir = (dir / "out").string();
  c.steps = 4;
  c.checkpoint_every = 2;
  int calls = 0;
  auto summary = run_training(c, [&](int64_t, const LossBundle&) { ++calls; });
  CHECK(calls == 4);
  CHECK(summary.steps == 4);
  CHECK(std::filesystem::exists(dir / "out" / "checkpoint_2.ckpt"));
  CHECK(std::filesystem::exists(dir / "out" / "checkpoint_4.ckpt"));
  CHECK(summary.checkpoint == dir / "out" / "final.ckpt");
  CHECK(std::filesystem::exists(summary.checkpoint));

  auto read_lines = [&] {
    std::ifstream in(summary.metrics);
    std::vector<nlohmann::json> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(nlohmann::json::parse(line));
    return lines;
  };
  auto lines = read_lines();
  REQUIRE(lines.size() == 4);
  for (size_t i = 0; i < lines.size(); ++i) CHECK(lines[i]["step"] == static_cast<int64_t>(i + 1));
  CHECK(lines[3]["total"].get<double>() == doctest::Approx(summary.last.total));

  SUBCASE("resume appends") {
    auto more = c;
    more.steps = 6;
    more.resume = summary.checkpoint.string();
    auto resumed = run_training(more);
    CHECK(resumed.steps == 6);
    auto all = read_lines();
    REQUIRE(all.size() == 6);
    CHECK(all[4]["step"] == 5);
  }
  SUBCASE("zero steps writes only the initial checkpoint") {
    auto none = c;
    none.steps = 0;
    none.out_dir = (dir / "none").string();
    auto s = run_training(none);
    CHECK(s.steps == 0);
    CHECK(std::filesystem::exists(s.checkpoint));
  }
  SUBCASE("missing dataset directory") {
    auto bad = c;
    bad.content_dir = (dir / "nowhere").string();
    try {
      run_training(bad);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find((dir / "nowhere").string()) != std::string::npos);
    }
  }
}

}
