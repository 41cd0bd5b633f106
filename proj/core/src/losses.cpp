#include "scinet/losses.hpp"

#include <cmath>

#include "scinet/errors.hpp"
#include "scinet/imaging.hpp"

namespace scinet {

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {
      {"style", style},         {"content", content},
      {"identity", identity},   {"adversarial", adversarial},
      {"contrastive", contrastive}, {"identity_pixel", identity_pixel},
      {"identity_feature", identity_feature}};
  for (const auto& [name, v] : all) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ConfigError(std::string("loss weight ") + name + " must be finite and >= 0");
    }
  }
}

namespace {

void require_same_size(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  check_nchw(a, what);
  check_nchw(b, what);
  if (a.sizes() != b.sizes()) {
    throw DimensionError(std::string(what) + ": image shapes differ");
  }
}

torch::Tensor match_batch(const torch::Tensor& t, int64_t n) {
  if (t.size(0) == n) return t;
  if (t.size(0) == 1) return t.expand({n, t.size(1), t.size(2), t.size(3)});
  throw DimensionError("loss: batch sizes differ and cannot be broadcast");
}

}  // namespace

torch::Tensor content_loss(const torch::Tensor& stylized, const torch::Tensor& content,
                           VggEncoder& vgg) {
  require_same_size(stylized, content, "content_loss");
  auto a = vgg->extract(stylized, kContentLayers);
  auto b = vgg->extract(content, kContentLayers);
  torch::Tensor total;
  for (VggLayer l : kContentLayers) {
    auto term = torch::mse_loss(a.at(l), b.at(l));
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor style_loss(const PerceptualFeatures& stylized, const PerceptualFeatures& style,
                         double epsilon) {
  torch::Tensor total;
  for (VggLayer l : kAllVggLayers) {
    const auto& fs = stylized.at(l);
    auto cs = instance_stats(fs, epsilon);
    auto ss = instance_stats(style.at(l), epsilon);
    const int64_t n = fs.size(0);
    auto term = torch::mse_loss(cs.mu, match_batch(ss.mu, n)) +
                torch::mse_loss(cs.sigma, match_batch(ss.sigma, n));
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor style_loss(const torch::Tensor& stylized, const torch::Tensor& style,
                         VggEncoder& vgg, double epsilon) {
  check_nchw(stylized, "style_loss");
  check_nchw(style, "style_loss");
  return style_loss(vgg->extract(stylized, kAllVggLayers), vgg->extract(style, kAllVggLayers),
                    epsilon);
}

DiscriminatorImpl::DiscriminatorImpl(int64_t width_divisor) {
  if (width_divisor < 1 || 64 % width_divisor != 0) {
    throw ConfigError("discriminator width divisor must divide 64");
  }
  body = register_module("body", torch::nn::Sequential());
  int64_t in = 3;
  for (int64_t c : {64, 128, 256, 512}) {
    const int64_t out = c / width_divisor;
    body->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
    body->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    in = out;
  }
  score = register_module("score", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, 3).padding(1)));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& images) {
  check_nchw(images, "discriminator");
  if (images.size(2) < 32 || images.size(3) < 32) {
    throw DimensionError("discriminator: images must be at least 32x32 for a patch grid");
  }
  return torch::sigmoid(score->forward(body->forward(images)));
}

torch::Tensor discriminator_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  auto real = real_scores.clamp(kScoreClamp, 1.0 - kScoreClamp);
  auto fake = fake_scores.clamp(kScoreClamp, 1.0 - kScoreClamp);
  return -torch::log(real).mean() - torch::log(1.0 - fake).mean();
}

torch::Tensor generator_adversarial_loss(const torch::Tensor& fake_scores) {
  return -torch::log(fake_scores.clamp(kScoreClamp, 1.0 - kScoreClamp)).mean();
}

AdversarialLosses adversarial_losses(const torch::Tensor& fake, const torch::Tensor& real,
                                     Discriminator& discriminator) {
  if (fake.size(0) < 1 || real.size(0) < 1) throw DimensionError("adversarial_losses: empty batch");
  AdversarialLosses out;
  out.discriminator =
      discriminator_loss(discriminator->forward(real), discriminator->forward(fake.detach()));
  out.generator = generator_adversarial_loss(discriminator->forward(fake));
  return out;
}

namespace {

torch::Tensor feature_distance(const PerceptualFeatures& a, const PerceptualFeatures& b) {
  torch::Tensor total;
  for (VggLayer l : kAllVggLayers) {
    auto term = torch::mse_loss(a.at(l), b.at(l));
    total = total.defined() ? total + term : term;
  }
  return total;
}

}  // namespace

torch::Tensor identity_loss(const Stylizer& stylize, const torch::Tensor& content,
                            const torch::Tensor& style, VggEncoder& vgg, double lambda_pixel,
                            double lambda_feature) {
  auto cc = stylize(content, content);
  auto ss = stylize(style, style);
  require_same_size(cc, content, "identity_loss");
  require_same_size(ss, style, "identity_loss");
  auto pixel = torch::mse_loss(cc, content) + torch::mse_loss(ss, style);
  auto features = feature_distance(vgg->extract(cc, kAllVggLayers), vgg->extract(content, kAllVggLayers)) +
                  feature_distance(vgg->extract(ss, kAllVggLayers), vgg->extract(style, kAllVggLayers));
  return lambda_pixel * pixel + lambda_feature * features;
}

torch::Tensor identity_loss_literal(const torch::Tensor& stylized, const torch::Tensor& content,
                                    const torch::Tensor& style, VggEncoder& vgg,
                                    double lambda_pixel, double lambda_feature) {
  require_same_size(stylized, content, "identity_loss");
  require_same_size(stylized, style, "identity_loss");
  auto fcs = vgg->extract(stylized, kAllVggLayers);
  auto pixel = torch::mse_loss(stylized, content) + torch::mse_loss(stylized, style);
  auto features = feature_distance(fcs, vgg->extract(content, kAllVggLayers)) +
                  feature_distance(fcs, vgg->extract(style, kAllVggLayers));
  return lambda_pixel * pixel + lambda_feature * features;
}

double weighted_total(const LossBundle& b, const LossWeights& w) {
  double total = w.style * b.style;
  total += w.content * b.content;
  total += w.identity * b.identity;
  total += w.adversarial * b.adversarial_g;
  total += w.contrastive * b.contrastive;
  return total;
}

Objective total_loss(const LossComponents& c, const LossWeights& w) {
  w.validate();
  Objective out;
  auto take = [&](const torch::Tensor& t, const char* name, double& slot) {
    if (!t.defined()) {
      slot = 0.0;
      return;
    }
    if (t.numel() != 1) throw DimensionError(std::string("loss component ") + name + " is not a scalar");
    slot = t.detach().item<double>();
    if (!std::isfinite(slot)) {
      throw TrainingError(name, std::string("loss component '") + name + "' is not finite");
    }
  };
  take(c.style, "style", out.bundle.style);
  take(c.content, "content", out.bundle.content);
  take(c.identity, "identity", out.bundle.identity);
  take(c.adversarial_g, "adversarial_g", out.bundle.adversarial_g);
  take(c.adversarial_d, "adversarial_d", out.bundle.adversarial_d);
  take(c.contrastive, "contrastive", out.bundle.contrastive);
  out.bundle.total = weighted_total(out.bundle, w);

  const std::pair<const torch::Tensor*, double> terms[] = {
      {&c.style, w.style},
      {&c.content, w.content},
      {&c.identity, w.identity},
      {&c.adversarial_g, w.adversarial},
      {&c.contrastive, w.contrastive}};
  for (const auto& [t, weight] : terms) {
    if (!t->defined() || weight == 0.0) continue;
    auto term = weight * *t;
    out.total = out.total.defined() ? out.total + term : term;
  }
  if (!out.total.defined()) out.total = torch::zeros({});
  return out;
}

}  // namespace scinet
