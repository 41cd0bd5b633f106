#pragma once

// Feature extractors: the VGG-19 layout perceptual encoder (frozen content
// features and perceptual losses) and the Perception Encoder for style.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "scinet/attention.hpp"

namespace scinet {

enum class VggLayer { relu1_1 = 1, relu2_1 = 2, relu3_1 = 3, relu4_1 = 4, relu5_1 = 5 };

inline constexpr std::array<VggLayer, 5> kAllVggLayers = {
    VggLayer::relu1_1, VggLayer::relu2_1, VggLayer::relu3_1, VggLayer::relu4_1, VggLayer::relu5_1};
inline constexpr std::array<VggLayer, 2> kContentLayers = {VggLayer::relu4_1, VggLayer::relu5_1};

std::string_view layer_name(VggLayer layer);
// Throws ConfigError for names outside relu1_1 .. relu5_1.
VggLayer parse_layer(std::string_view name);

struct PerceptualFeatures {
  std::map<VggLayer, torch::Tensor> layers;

  const torch::Tensor& at(VggLayer layer) const;
};

// Seed used for the documented random initialization when no pretrained
// weights are supplied.
inline constexpr uint64_t kVggInitSeed = 0x5c1a7e11ull;

// VGG-19 convolutional trunk up to relu5_1. Block k has 64 * 2^(k-1) channels
// (capped at 512) divided by `width_divisor`, and relu{k}_1 sits at stride
// 2^(k-1). Inputs are [0,1] RGB; ImageNet normalization happens inside.
class VggEncoderImpl : public torch::nn::Module {
 public:
  explicit VggEncoderImpl(int64_t width_divisor = 1, uint64_t init_seed = kVggInitSeed);

  PerceptualFeatures extract(const torch::Tensor& img, std::span<const VggLayer> layers);
  PerceptualFeatures extract(const torch::Tensor& img,
                             std::initializer_list<VggLayer> layers) {
    return extract(img, std::span<const VggLayer>(layers.begin(), layers.size()));
  }
  // By-name variant; unknown names raise ConfigError.
  PerceptualFeatures extract(const torch::Tensor& img,
                             const std::vector<std::string>& layer_names);

  torch::Tensor forward(const torch::Tensor& img) {
    return extract(img, {VggLayer::relu4_1}).at(VggLayer::relu4_1);
  }

  int64_t channels(VggLayer layer) const;
  int64_t width_divisor() const { return width_divisor_; }

  // Pretrained import: a torch archive holding this module's parameters by name
  // (conv1_1.weight, conv1_1.bias, ...).
  void load_weights(const std::filesystem::path& path);
  void set_trainable(bool trainable);

 private:
  struct ConvSlot {
    std::string name;
    torch::nn::Conv2d conv{nullptr};
  };
  // blocks_[k] holds the convs of VGG block k+1; the first conv of each block
  // produces relu{k+1}_1.
  std::vector<std::vector<ConvSlot>> blocks_;
  int64_t width_divisor_;
  torch::Tensor mean_;
  torch::Tensor std_;
};
TORCH_MODULE(VggEncoder);

// stage1: (N, C, H/4, W/4), stage2: (N, C, H/8, W/8).
struct StyleFeature {
  torch::Tensor stage1;
  torch::Tensor stage2;
};

// Y_h1 = FC(MaxPool3x3(F_h1)), Y_h2 = DwConv3x3(FC(F_h2)); FC is a per-pixel
// channel mix (1x1 conv). Both preserve spatial size.
class HighFreqMixerImpl : public torch::nn::Module {
 public:
  explicit HighFreqMixerImpl(int64_t channels);

  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& f_h1,
                                                  const torch::Tensor& f_h2);

  torch::nn::Conv2d fc_pool{nullptr}, fc_dw{nullptr}, dwconv{nullptr};
};
TORCH_MODULE(HighFreqMixer);

// Y_l = Upsample(MSA(AvgPool(F_l))) with pool factor 2 and nearest upsampling.
class LowFreqMixerImpl : public torch::nn::Module {
 public:
  LowFreqMixerImpl(int64_t channels, int64_t heads);

  torch::Tensor forward(const torch::Tensor& f_l);

  static constexpr int64_t kPoolFactor = 2;
  MultiHeadAttention attention{nullptr};
};
TORCH_MODULE(LowFreqMixer);

// Splits F along channels as [F_h1 | F_h2 | F_l] (C/4, C/4, C/2) and returns
// Concat(Y_l, Y_h1, Y_h2), so output channels [0, C/2) come from F_l only.
class PerceptionStageImpl : public torch::nn::Module {
 public:
  PerceptionStageImpl(int64_t channels, int64_t heads);

  torch::Tensor forward(const torch::Tensor& features);

  int64_t channels() const { return channels_; }

  HighFreqMixer high{nullptr};
  LowFreqMixer low{nullptr};

 private:
  int64_t channels_;
};
TORCH_MODULE(PerceptionStage);

class PerceptionEncoderImpl : public torch::nn::Module {
 public:
  PerceptionEncoderImpl(int64_t channels, int64_t heads);

  StyleFeature forward(const torch::Tensor& style);

  static constexpr int64_t kPatchSize = 4;
  torch::nn::Conv2d patch_embed{nullptr}, downsample{nullptr};
  PerceptionStage stage1{nullptr}, stage2{nullptr};
};
TORCH_MODULE(PerceptionEncoder);

// FNV-1a over parameter/buffer names and raw bytes; used to prove a module was
// left untouched by a training step.
uint64_t parameter_checksum(const torch::nn::Module& module);

}  // namespace scinet
