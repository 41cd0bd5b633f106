#include "scinet/extractors.hpp"

#include <algorithm>
#include <cstring>

#include "scinet/errors.hpp"
#include "scinet/imaging.hpp"

namespace scinet {

namespace {

// VGG-19 conv counts per block, truncated after conv5_1.
constexpr std::array<int, 5> kConvsPerBlock = {2, 2, 4, 4, 1};
constexpr std::array<int64_t, 5> kBlockChannels = {64, 128, 256, 512, 512};

void zero_bias(torch::nn::Conv2d& conv) {
  if (conv->options.bias()) {
    torch::NoGradGuard no_grad;
    conv->bias.zero_();
  }
}

}  // namespace

std::string_view layer_name(VggLayer layer) {
  switch (layer) {
    case VggLayer::relu1_1: return "relu1_1";
    case VggLayer::relu2_1: return "relu2_1";
    case VggLayer::relu3_1: return "relu3_1";
    case VggLayer::relu4_1: return "relu4_1";
    case VggLayer::relu5_1: return "relu5_1";
  }
  return "unknown";
}

VggLayer parse_layer(std::string_view name) {
  for (VggLayer l : kAllVggLayers) {
    if (layer_name(l) == name) return l;
  }
  throw ConfigError("unknown VGG layer '" + std::string(name) +
                    "' (expected relu1_1, relu2_1, relu3_1, relu4_1 or relu5_1)");
}

const torch::Tensor& PerceptualFeatures::at(VggLayer layer) const {
  auto it = layers.find(layer);
  if (it == layers.end()) {
    throw ConfigError("layer " + std::string(layer_name(layer)) + " was not extracted");
  }
  return it->second;
}

VggEncoderImpl::VggEncoderImpl(int64_t width_divisor, uint64_t init_seed)
    : width_divisor_(width_divisor) {
  if (width_divisor < 1 || 64 % width_divisor != 0) {
    throw ConfigError("VGG width divisor must divide 64, got " + std::to_string(width_divisor));
  }
  ScopedSeed seed(init_seed);
  int64_t in_ch = 3;
  for (size_t b = 0; b < kConvsPerBlock.size(); ++b) {
    const int64_t out_ch = kBlockChannels[b] / width_divisor;
    std::vector<ConvSlot> block;
    for (int c = 0; c < kConvsPerBlock[b]; ++c) {
      ConvSlot slot;
      slot.name = "conv" + std::to_string(b + 1) + "_" + std::to_string(c + 1);
      slot.conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 3).padding(1));
      torch::nn::init::kaiming_normal_(slot.conv->weight, 0.0, torch::kFanIn, torch::kReLU);
      zero_bias(slot.conv);
      register_module(slot.name, slot.conv);
      block.push_back(std::move(slot));
      in_ch = out_ch;
    }
    blocks_.push_back(std::move(block));
  }
  mean_ = register_buffer("mean", torch::tensor({0.485, 0.456, 0.406}).view({1, 3, 1, 1}));
  std_ = register_buffer("std", torch::tensor({0.229, 0.224, 0.225}).view({1, 3, 1, 1}));
  set_trainable(false);
}

int64_t VggEncoderImpl::channels(VggLayer layer) const {
  return kBlockChannels[static_cast<size_t>(layer) - 1] / width_divisor_;
}

PerceptualFeatures VggEncoderImpl::extract(const torch::Tensor& img,
                                           std::span<const VggLayer> layers) {
  check_nchw(img, "extract_perceptual");
  if (img.size(1) != 3) throw DimensionError("extract_perceptual: expected a 3-channel image");
  PerceptualFeatures out;
  if (layers.empty()) return out;
  const int deepest = static_cast<int>(*std::max_element(layers.begin(), layers.end()));
  auto wanted = [&](int k) {
    return std::find(layers.begin(), layers.end(), static_cast<VggLayer>(k)) != layers.end();
  };

  auto x = (img - mean_) / std_;
  for (int k = 1; k <= deepest; ++k) {
    if (k > 1) x = torch::max_pool2d(x, {2, 2}, {2, 2});
    auto& block = blocks_[static_cast<size_t>(k - 1)];
    for (size_t c = 0; c < block.size(); ++c) {
      x = torch::relu(block[c].conv->forward(x));
      if (c == 0 && wanted(k)) out.layers.emplace(static_cast<VggLayer>(k), x);
      if (k == deepest && c == 0) break;
    }
  }
  return out;
}

PerceptualFeatures VggEncoderImpl::extract(const torch::Tensor& img,
                                           const std::vector<std::string>& layer_names) {
  std::vector<VggLayer> layers;
  layers.reserve(layer_names.size());
  for (const auto& n : layer_names) layers.push_back(parse_layer(n));
  return extract(img, std::span<const VggLayer>(layers));
}

namespace {

// torch::save(module) nests submodules as archives; "conv1_1.weight" then
// lives at conv1_1 -> weight.
bool read_nested(torch::serialize::InputArchive& archive, const std::string& key, torch::Tensor& out) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) return false;
  torch::serialize::InputArchive child;
  if (!archive.try_read(key.substr(0, dot), child)) return false;
  const auto rest = key.substr(dot + 1);
  return child.try_read(rest, out) || read_nested(child, rest, out);
}

}  // namespace

void VggEncoderImpl::load_weights(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw IoError("VGG weight file does not exist: " + path.string());
  }
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw DecodeError("cannot read VGG weights from " + path.string() + ": " + e.what_without_backtrace());
  }
  torch::NoGradGuard no_grad;
  for (auto& p : named_parameters(/*recurse=*/true)) {
    torch::Tensor src;
    if (!archive.try_read(p.key(), src) && !read_nested(archive, p.key(), src)) {
      throw ConfigError("VGG weight file " + path.string() + " lacks parameter " + p.key());
    }
    if (src.sizes() != p.value().sizes()) {
      throw DimensionError("VGG weight " + p.key() + " has the wrong shape for width divisor " +
                           std::to_string(width_divisor_));
    }
    p.value().copy_(src);
  }
}

void VggEncoderImpl::set_trainable(bool trainable) {
  for (auto& p : parameters()) p.set_requires_grad(trainable);
}

HighFreqMixerImpl::HighFreqMixerImpl(int64_t channels) {
  fc_pool = register_module("fc_pool", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
  fc_dw = register_module("fc_dw", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
  dwconv = register_module(
      "dwconv", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1).groups(channels)));
  zero_bias(fc_pool);
  zero_bias(fc_dw);
  zero_bias(dwconv);
}

std::pair<torch::Tensor, torch::Tensor> HighFreqMixerImpl::forward(const torch::Tensor& f_h1,
                                                                   const torch::Tensor& f_h2) {
  check_nchw(f_h1, "high_freq_mixers");
  check_nchw(f_h2, "high_freq_mixers");
  if (f_h1.sizes() != f_h2.sizes()) {
    throw DimensionError("high_freq_mixers: F_h1 and F_h2 must have equal shapes");
  }
  auto y1 = fc_pool->forward(torch::max_pool2d(f_h1, {3, 3}, {1, 1}, {1, 1}));
  auto y2 = dwconv->forward(fc_dw->forward(f_h2));
  return {y1, y2};
}

LowFreqMixerImpl::LowFreqMixerImpl(int64_t channels, int64_t heads) {
  attention = register_module("attention", MultiHeadAttention(channels, heads));
}

torch::Tensor LowFreqMixerImpl::forward(const torch::Tensor& f_l) {
  check_nchw(f_l, "low_freq_mixer");
  const int64_t h = f_l.size(2);
  const int64_t w = f_l.size(3);
  if (h % kPoolFactor != 0 || w % kPoolFactor != 0) {
    throw DimensionError("low_freq_mixer: spatial size " + std::to_string(h) + "x" +
                         std::to_string(w) + " is not divisible by the pool factor 2");
  }
  auto pooled = torch::avg_pool2d(f_l, {kPoolFactor, kPoolFactor}, {kPoolFactor, kPoolFactor});
  const int64_t ph = pooled.size(2);
  const int64_t pw = pooled.size(3);
  auto mixed = from_tokens(attention->forward(to_tokens(pooled)).output, ph, pw);
  namespace F = torch::nn::functional;
  return F::interpolate(mixed, F::InterpolateFuncOptions()
                                   .scale_factor(std::vector<double>{kPoolFactor, kPoolFactor})
                                   .mode(torch::kNearest));
}

PerceptionStageImpl::PerceptionStageImpl(int64_t channels, int64_t heads) : channels_(channels) {
  if (channels % 4 != 0) {
    throw ConfigError("perception stage channels must be divisible by 4, got " +
                      std::to_string(channels));
  }
  high = register_module("high", HighFreqMixer(channels / 4));
  low = register_module("low", LowFreqMixer(channels / 2, heads));
}

torch::Tensor PerceptionStageImpl::forward(const torch::Tensor& features) {
  check_nchw(features, "pe_stage");
  const int64_t c = features.size(1);
  if (c % 2 != 0) throw DimensionError("pe_stage: channel count must be even, got " + std::to_string(c));
  if (c % 4 != 0) {
    throw DimensionError("pe_stage: channel count must split into quarters, got " + std::to_string(c));
  }
  if (c != channels_) {
    throw DimensionError("pe_stage: expected " + std::to_string(channels_) + " channels, got " +
                         std::to_string(c));
  }
  auto f_h1 = features.narrow(1, 0, c / 4);
  auto f_h2 = features.narrow(1, c / 4, c / 4);
  auto f_l = features.narrow(1, c / 2, c / 2);
  auto [y_h1, y_h2] = high->forward(f_h1, f_h2);
  auto y_l = low->forward(f_l);
  return torch::cat({y_l, y_h1, y_h2}, 1);
}

PerceptionEncoderImpl::PerceptionEncoderImpl(int64_t channels, int64_t heads) {
  patch_embed = register_module(
      "patch_embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, channels, kPatchSize).stride(kPatchSize)));
  downsample = register_module(
      "downsample", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).stride(2).padding(1)));
  zero_bias(patch_embed);
  zero_bias(downsample);
  stage1 = register_module("stage1", PerceptionStage(channels, heads));
  stage2 = register_module("stage2", PerceptionStage(channels, heads));
}

StyleFeature PerceptionEncoderImpl::forward(const torch::Tensor& style) {
  check_nchw(style, "pe_forward");
  if (style.size(1) != 3) throw DimensionError("pe_forward: expected a 3-channel style image");
  if (style.size(2) % 8 != 0 || style.size(3) % 8 != 0) {
    throw DimensionError("pe_forward: style height and width must be divisible by 8");
  }
  StyleFeature out;
  out.stage1 = stage1->forward(patch_embed->forward(style));
  out.stage2 = stage2->forward(downsample->forward(out.stage1));
  return out;
}

uint64_t parameter_checksum(const torch::nn::Module& module) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&](const void* data, size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  auto feed_tensor = [&](const std::string& name, const torch::Tensor& t) {
    feed(name.data(), name.size());
    auto c = t.detach().contiguous().cpu();
    feed(c.data_ptr(), static_cast<size_t>(c.numel()) * c.element_size());
  };
  for (const auto& p : module.named_parameters(true)) feed_tensor(p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) feed_tensor(b.key(), b.value());
  return h;
}

}  // namespace scinet
