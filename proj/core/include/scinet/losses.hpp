#pragma once

// Perceptual content/style losses, the patch discriminator and adversarial
// losses, the identity loss, and the weighted objective.
//
// Distances are mean-squared errors, so every term is independent of image
// resolution and smooth at zero.

#include <torch/torch.h>

#include <functional>
#include <string>

#include "scinet/extractors.hpp"
#include "scinet/scin.hpp"

namespace scinet {

struct LossWeights {
  double style = 1.0;
  double content = 1.0;
  double identity = 5.0;
  double adversarial = 1.0;
  double contrastive = 0.3;
  double identity_pixel = 50.0;
  double identity_feature = 1.0;

  // Throws ConfigError if any weight is negative or non-finite.
  void validate() const;
};

// Sum over relu4_1 and relu5_1 of MSE between feature maps.
torch::Tensor content_loss(const torch::Tensor& stylized, const torch::Tensor& content,
                           VggEncoder& vgg);

// Sum over relu1_1..relu5_1 of MSE(mu_cs, mu_s) + MSE(sigma_cs, sigma_s).
torch::Tensor style_loss(const torch::Tensor& stylized, const torch::Tensor& style,
                         VggEncoder& vgg, double epsilon = kDefaultEpsilon);
// Same quantity from precomputed features; `style_features` may be detached.
torch::Tensor style_loss(const PerceptualFeatures& stylized, const PerceptualFeatures& style,
                         double epsilon = kDefaultEpsilon);

// Four stride-2 4x4 convs (64 -> 512 channels, divided by width_divisor) with
// LeakyReLU, then a 3x3 conv to one channel and a sigmoid: a grid of
// per-patch realness probabilities.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(int64_t width_divisor = 1);

  torch::Tensor forward(const torch::Tensor& images);

  torch::nn::Sequential body{nullptr};
  torch::nn::Conv2d score{nullptr};
};
TORCH_MODULE(Discriminator);

inline constexpr double kScoreClamp = 1e-7;

struct AdversarialLosses {
  torch::Tensor generator;      // -E[log D(fake)]
  torch::Tensor discriminator;  // -E[log D(real)] - E[log(1 - D(fake))], fakes detached
};

// Losses from probability grids; scores are clamped to (1e-7, 1 - 1e-7).
torch::Tensor discriminator_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);
torch::Tensor generator_adversarial_loss(const torch::Tensor& fake_scores);

// Runs D on both batches. The discriminator term sees fake.detach(), so its
// gradient never reaches generator parameters.
AdversarialLosses adversarial_losses(const torch::Tensor& fake, const torch::Tensor& real,
                                     Discriminator& discriminator);

using Stylizer = std::function<torch::Tensor(const torch::Tensor& content, const torch::Tensor& style)>;

// lambda_pixel * (MSE(I_cc, I_c) + MSE(I_ss, I_s))
//   + lambda_feature * sum over the five relu layers of
//     (MSE(E(I_cc), E(I_c)) + MSE(E(I_ss), E(I_s)))
// with I_cc = stylize(I_c, I_c) and I_ss = stylize(I_s, I_s).
torch::Tensor identity_loss(const Stylizer& stylize, const torch::Tensor& content,
                            const torch::Tensor& style, VggEncoder& vgg, double lambda_pixel = 50.0,
                            double lambda_feature = 1.0);

// Literal variant: distances of the *cross* stylization I_cs
// to both I_c and I_s. Kept for comparison runs; it fights the style loss.
torch::Tensor identity_loss_literal(const torch::Tensor& stylized, const torch::Tensor& content,
                                    const torch::Tensor& style, VggEncoder& vgg,
                                    double lambda_pixel = 50.0, double lambda_feature = 1.0);

// Undefined tensors count as disabled (zero) components.
struct LossComponents {
  torch::Tensor style;
  torch::Tensor content;
  torch::Tensor identity;
  torch::Tensor adversarial_g;
  torch::Tensor adversarial_d;
  torch::Tensor contrastive;
};

struct LossBundle {
  double content = 0.0;
  double style = 0.0;
  double identity = 0.0;
  double adversarial_g = 0.0;
  double adversarial_d = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

// Fixed evaluation order shared by total_loss and any recomputation.
double weighted_total(const LossBundle& b, const LossWeights& w);

struct Objective {
  torch::Tensor total;  // differentiable, for the generator-side update
  LossBundle bundle;
};

// Raises TrainingError naming the first non-finite component.
Objective total_loss(const LossComponents& components, const LossWeights& weights);

}  // namespace scinet
