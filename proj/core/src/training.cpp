#include "scinet/training.hpp"

#include <algorithm>
#include <fstream>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "scinet/errors.hpp"
#include "scinet/imaging.hpp"

namespace scinet {

namespace {

// Sub-seed streams for module construction.
enum SeedStream : uint64_t { kGeneratorStream = 1, kDiscriminatorStream, kHeadsStream, kBatchStream };

void require_dir(const std::string& dir, const char* field) {
  if (dir.empty()) throw ConfigError(std::string(field) + " is not set");
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw ConfigError(std::string(field) + ": dataset directory does not exist: " + dir);
  }
}

}  // namespace

Dataset Dataset::load(const std::filesystem::path& dir, int64_t image_size) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw ConfigError("dataset directory does not exist: " + dir.string());
  }
  Dataset d;
  d.paths_ = list_images(dir);
  if (d.paths_.empty()) throw ConfigError("dataset directory has no PNG/JPEG images: " + dir.string());
  d.images_.reserve(d.paths_.size());
  for (const auto& p : d.paths_) d.images_.push_back(load_image(p, {image_size, image_size}));
  return d;
}

Dataset Dataset::from_tensors(std::vector<torch::Tensor> images) {
  if (images.empty()) throw ConfigError("dataset is empty");
  Dataset d;
  for (auto& img : images) {
    check_image(img, "dataset image");
    if (img.size(0) != 1) throw DimensionError("dataset images must have batch size 1");
    d.paths_.emplace_back();
    d.images_.push_back(std::move(img));
  }
  return d;
}

Batch sample_batch(const Dataset& contents, const Dataset& styles, int64_t n, int64_t crop_size,
                   uint64_t seed, int64_t step) {
  if (n < 1) throw ConfigError("batch size must be >= 1");
  std::mt19937_64 rng(mix_seed(mix_seed(seed, kBatchStream), static_cast<uint64_t>(step)));
  auto pick = [&](const Dataset& data) {
    std::vector<int64_t> order(static_cast<size_t>(data.size()));
    std::iota(order.begin(), order.end(), int64_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<torch::Tensor> out;
    for (int64_t i = 0; i < n; ++i) {
      const auto& img = data.image(order[static_cast<size_t>(i % data.size())]);
      out.push_back(random_crop(img, {crop_size, crop_size}, rng()));
    }
    return torch::cat(out, 0);
  };
  Batch b;
  b.contents = pick(contents);
  b.styles = pick(styles);
  return b;
}

Trainer::Trainer(const TrainConfig& config) : config_(config) {
  config_.validate();
  at::globalContext().setDeterministicAlgorithms(true, false);
  const auto& m = config_.model;

  vgg_ = VggEncoder(m.width_divisor);
  if (!m.vgg_weights.empty()) vgg_->load_weights(m.vgg_weights);
  vgg_->set_trainable(false);
  vgg_->eval();
  {
    ScopedSeed seed(mix_seed(config_.seed, kGeneratorStream));
    generator_ = Generator(m, vgg_);
  }
  {
    ScopedSeed seed(mix_seed(config_.seed, kDiscriminatorStream));
    discriminator_ = Discriminator(m.width_divisor);
  }
  {
    ScopedSeed seed(mix_seed(config_.seed, kHeadsStream));
    heads_ = ProjectionHeads(m.embed_dim, m.proj_hidden, m.proj_dim);
  }
  if (m.embedder_script.empty()) {
    embedder_ = std::make_unique<ConvInstanceEmbedder>(m.embed_dim);
  } else {
    embedder_ = std::make_unique<TorchScriptEmbedder>(m.embedder_script, m.embed_dim);
  }

  std::vector<torch::Tensor> g_params;
  for (auto& p : generator_->parameters()) {
    if (p.requires_grad()) g_params.push_back(p);
  }
  for (auto& p : heads_->parameters()) g_params.push_back(p);
  opt_g_ = std::make_unique<torch::optim::Adam>(
      g_params, torch::optim::AdamOptions(config_.lr_generator));
  opt_d_ = std::make_unique<torch::optim::Adam>(
      discriminator_->parameters(), torch::optim::AdamOptions(config_.lr_discriminator));
}

namespace {

struct Forward {
  LossComponents comps;
  torch::Tensor fake;
};

Forward forward_losses(const TrainConfig& cfg, const Batch& batch, VggEncoder& vgg,
                       Generator& generator, Discriminator& discriminator,
                       InstanceEmbedder& embedder, ProjectionHeads& heads) {
  check_image(batch.contents, "batch contents");
  check_image(batch.styles, "batch styles");
  const int64_t n = batch.contents.size(0);
  Forward out;
  auto [content_batch, style_batch] = grid_inputs(batch.contents, batch.styles);
  out.fake = generator->forward(content_batch, style_batch);

  // Target features are computed once per distinct image and expanded to
  // grid order (entry i*n + j pairs style i with content j).
  auto fake_features = vgg->extract(out.fake, kAllVggLayers);
  PerceptualFeatures content_features, style_features;
  {
    torch::NoGradGuard no_grad;
    auto cf = vgg->extract(batch.contents, kContentLayers);
    for (VggLayer l : kContentLayers) content_features.layers[l] = cf.at(l).repeat({n, 1, 1, 1});
    auto sf = vgg->extract(batch.styles, kAllVggLayers);
    for (VggLayer l : kAllVggLayers) style_features.layers[l] = sf.at(l).repeat_interleave(n, 0);
  }
  for (VggLayer l : kContentLayers) {
    auto term = torch::mse_loss(fake_features.at(l), content_features.at(l));
    out.comps.content = out.comps.content.defined() ? out.comps.content + term : term;
  }
  out.comps.style = style_loss(fake_features, style_features, cfg.model.epsilon);

  if (cfg.identity_form == IdentityForm::self_stylization) {
    Stylizer stylize = [&](const torch::Tensor& c, const torch::Tensor& s) {
      return generator->forward(c, s);
    };
    out.comps.identity = identity_loss(stylize, batch.contents, batch.styles, vgg,
                                       cfg.weights.identity_pixel, cfg.weights.identity_feature);
  } else {
    out.comps.identity = identity_loss_literal(out.fake, content_batch, style_batch, vgg,
                                               cfg.weights.identity_pixel,
                                               cfg.weights.identity_feature);
  }

  if (!cfg.no_adv) {
    out.comps.adversarial_d = discriminator_loss(discriminator->forward(batch.styles),
                                                 discriminator->forward(out.fake.detach()));
  }
  if (!cfg.no_icl) {
    StylizationGrid grid{n, out.fake};
    out.comps.contrastive = icl_loss(grid, embedder, heads, cfg.tau, cfg.icl_form);
  }
  return out;
}

}  // namespace

LossComponents Trainer::components(const Batch& batch, bool with_grad) {
  std::optional<torch::NoGradGuard> guard;
  if (!with_grad) guard.emplace();
  auto f = forward_losses(config_, batch, vgg_, generator_, discriminator_, *embedder_, heads_);
  if (!config_.no_adv) {
    f.comps.adversarial_g = generator_adversarial_loss(discriminator_->forward(f.fake));
  }
  return f.comps;
}

LossBundle Trainer::step(const Batch& batch) {
  generator_->train();
  discriminator_->train();
  auto f = forward_losses(config_, batch, vgg_, generator_, discriminator_, *embedder_, heads_);

  if (!config_.no_adv) {
    const double d_value = f.comps.adversarial_d.item<double>();
    if (!std::isfinite(d_value)) {
      throw TrainingError("adversarial_d", "loss component 'adversarial_d' is not finite");
    }
    opt_d_->zero_grad();
    f.comps.adversarial_d.backward();
    opt_d_->step();
    f.comps.adversarial_d = f.comps.adversarial_d.detach();
    // The generator is scored by the freshly updated discriminator.
    f.comps.adversarial_g = generator_adversarial_loss(discriminator_->forward(f.fake));
  }

  auto objective = total_loss(f.comps, config_.weights);
  opt_g_->zero_grad();
  if (objective.total.requires_grad()) {
    objective.total.backward();
    opt_g_->step();
  }
  // Discard the gradients the generator objective left on D.
  if (!config_.no_adv) discriminator_->zero_grad();
  ++step_;
  return objective.bundle;
}

torch::Tensor Trainer::stylize(const torch::Tensor& content, const torch::Tensor& style) {
  torch::NoGradGuard no_grad;
  const bool was_training = generator_->is_training();
  generator_->eval();
  auto out = generator_->forward(content, style);
  generator_->train(was_training);
  return out;
}

std::string Trainer::serialize() const {
  torch::serialize::OutputArchive archive;
  archive.write("config", c10::IValue(to_text(config_)));
  archive.write("step", c10::IValue(step_));
  auto sub = [&](const char* key, auto&& save) {
    torch::serialize::OutputArchive child;
    save(child);
    archive.write(key, child);
  };
  sub("generator", [&](auto& a) { generator_->save(a); });
  sub("discriminator", [&](auto& a) { discriminator_->save(a); });
  sub("projection_heads", [&](auto& a) { heads_->save(a); });
  sub("perceptual", [&](auto& a) { vgg_->save(a); });
  if (auto* conv = dynamic_cast<ConvInstanceEmbedder*>(embedder_.get())) {
    sub("embedder", [&](auto& a) { conv->module()->save(a); });
  }
  sub("opt_g", [&](auto& a) { opt_g_->save(a); });
  sub("opt_d", [&](auto& a) { opt_d_->save(a); });
  std::ostringstream os;
  archive.save_to(os);
  return os.str();
}

void Trainer::deserialize(const std::string& payload) {
  try {
    torch::serialize::InputArchive archive;
    std::istringstream is(payload);
    archive.load_from(is);
    c10::IValue step;
    archive.read("step", step);
    auto sub = [&](const char* key, auto&& load) {
      torch::serialize::InputArchive child;
      archive.read(key, child);
      load(child);
    };
    sub("generator", [&](auto& a) { generator_->load(a); });
    sub("discriminator", [&](auto& a) { discriminator_->load(a); });
    sub("projection_heads", [&](auto& a) { heads_->load(a); });
    sub("perceptual", [&](auto& a) { vgg_->load(a); });
    if (auto* conv = dynamic_cast<ConvInstanceEmbedder*>(embedder_.get())) {
      sub("embedder", [&](auto& a) { conv->module()->load(a); });
    }
    sub("opt_g", [&](auto& a) { opt_g_->load(a); });
    sub("opt_d", [&](auto& a) { opt_d_->load(a); });
    step_ = step.toInt();
  } catch (const c10::Error& e) {
    throw IntegrityError(std::string("checkpoint payload is unreadable: ") + e.what_without_backtrace());
  }
  vgg_->set_trainable(false);
}

void Trainer::save(const std::filesystem::path& path) const {
  CheckpointFile file;
  file.header.config_hash = config_hash(config_);
  file.header.step = static_cast<uint64_t>(step_);
  file.payload = serialize();
  write_checkpoint(path, file);
}

void Trainer::load(const std::filesystem::path& path) {
  auto file = read_checkpoint(path);
  require_config_hash(file.header, config_hash(config_), path);
  deserialize(file.payload);
}

std::unique_ptr<Trainer> Trainer::from_checkpoint(const std::filesystem::path& path) {
  auto file = read_checkpoint(path);
  std::string text;
  try {
    torch::serialize::InputArchive archive;
    std::istringstream is(file.payload);
    archive.load_from(is);
    c10::IValue value;
    archive.read("config", value);
    text = value.toStringRef();
  } catch (const c10::Error& e) {
    throw IntegrityError("checkpoint " + path.string() + " has no readable configuration: " +
                         e.what_without_backtrace());
  }
  auto config = parse_config(text, path.string() + "[config]");
  auto trainer = std::make_unique<Trainer>(config);
  require_config_hash(file.header, config_hash(config), path);
  trainer->deserialize(file.payload);
  return trainer;
}

std::string metrics_record(int64_t step, const LossBundle& b) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["content"] = b.content;
  j["style"] = b.style;
  j["identity"] = b.identity;
  j["adversarial_g"] = b.adversarial_g;
  j["adversarial_d"] = b.adversarial_d;
  j["contrastive"] = b.contrastive;
  j["total"] = b.total;
  return j.dump();
}

TrainingSummary run_training(const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  require_dir(config.content_dir, "data.content_dir");
  require_dir(config.style_dir, "data.style_dir");
  const auto contents = Dataset::load(config.content_dir, config.image_size);
  const auto styles = Dataset::load(config.style_dir, config.image_size);

  Trainer trainer(config);
  if (!config.resume.empty()) trainer.load(config.resume);

  TrainingSummary summary;
  const std::filesystem::path out_dir(config.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  summary.metrics = out_dir / "metrics.jsonl";
  std::ofstream metrics(summary.metrics, config.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw IoError("cannot open metrics log " + summary.metrics.string());

  while (trainer.steps_done() < config.steps) {
    auto batch = sample_batch(contents, styles, config.grid_size, config.crop_size, config.seed,
                              trainer.steps_done());
    summary.last = trainer.step(batch);
    const int64_t done = trainer.steps_done();
    metrics << metrics_record(done, summary.last) << '\n';
    metrics.flush();
    if (on_step) on_step(done, summary.last);
    if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0) {
      trainer.save(out_dir / ("checkpoint_" + std::to_string(done) + ".ckpt"));
    }
  }
  summary.steps = trainer.steps_done();
  summary.checkpoint = out_dir / "final.ckpt";
  trainer.save(summary.checkpoint);
  return summary;
}

}  // namespace scinet
