#pragma once

// Stylization forward pass: VGG relu4_1 content features and style features
// are fused by cross-attention, then decoded through four upsampling blocks
// with SCIN realignment in front of each block.

#include <torch/torch.h>

#include "scinet/extractors.hpp"
#include "scinet/imaging.hpp"
#include "scinet/model_config.hpp"
#include "scinet/scin.hpp"

namespace scinet {

struct FusionOutput {
  torch::Tensor fused;      // (N, C, Hc, Wc), same grid as the content feature
  torch::Tensor attention;  // (N, Hc*Wc, Hs*Ws), row-stochastic
};

// SANet-style attention: query from IN(F_c), key from IN(F_s), value from F_s,
// each through a 1x1 conv; the attended values pass through a 1x1 conv and
// are added back onto F_c.
class CrossAttentionFusionImpl : public torch::nn::Module {
 public:
  explicit CrossAttentionFusionImpl(int64_t channels, double epsilon = kDefaultEpsilon);

  FusionOutput forward(const torch::Tensor& content, const torch::Tensor& style);

  torch::nn::Conv2d query{nullptr}, key{nullptr}, value{nullptr}, out{nullptr};

 private:
  double epsilon_;
};
TORCH_MODULE(CrossAttentionFusion);

class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(std::array<int64_t, 4> channels);

  // Block i (1-based): nearest x2 upsample + 3x3 conv + ReLU for i < 4,
  // 3x3 conv to RGB + sigmoid for i == 4.
  torch::Tensor block(const torch::Tensor& x, int index);

  std::array<torch::nn::Conv2d, 4> convs{nullptr, nullptr, nullptr, nullptr};
};
TORCH_MODULE(Decoder);

class GeneratorImpl : public torch::nn::Module {
 public:
  // `perceptual` is the shared frozen VGG; it is not registered as a child so
  // it never appears among the generator's parameters.
  GeneratorImpl(const ModelConfig& config, VggEncoder perceptual);

  torch::Tensor content_features(const torch::Tensor& content);
  torch::Tensor style_features(const torch::Tensor& style);
  FusionOutput fuse(const torch::Tensor& content_feature, const torch::Tensor& style_feature);
  // Pyramid level 5-i feeds decoder block i, so level 4 (smallest) meets the
  // deepest block.
  torch::Tensor decode(const torch::Tensor& fused, const StylePyramid& pyramid);
  torch::Tensor forward(const torch::Tensor& content, const torch::Tensor& style);

  const ModelConfig& config() const { return config_; }
  VggEncoder perceptual() const { return perceptual_; }

  PerceptionEncoder pe{nullptr};
  VggEncoder style_vgg{nullptr};
  CrossAttentionFusion fusion{nullptr};
  CrossAttentionFusion fusion5{nullptr};
  StyleRealigner realigner{nullptr};
  Decoder decoder{nullptr};

 private:
  ModelConfig config_;
  VggEncoder perceptual_;
};
TORCH_MODULE(Generator);

}  // namespace scinet
