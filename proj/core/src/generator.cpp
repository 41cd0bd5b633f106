#include "scinet/generator.hpp"

#include <cmath>

#include "scinet/errors.hpp"

namespace scinet {

namespace F = torch::nn::functional;

std::string_view to_string(StyleEncoderKind kind) {
  switch (kind) {
    case StyleEncoderKind::perception: return "pe";
    case StyleEncoderKind::fixed_vgg: return "fixed_vgg";
    case StyleEncoderKind::learnable_vgg: return "learnable_vgg";
  }
  return "pe";
}

StyleEncoderKind parse_style_encoder(std::string_view text) {
  if (text == "pe" || text == "perception") return StyleEncoderKind::perception;
  if (text == "fixed_vgg") return StyleEncoderKind::fixed_vgg;
  if (text == "learnable_vgg") return StyleEncoderKind::learnable_vgg;
  throw ConfigError("unknown style encoder '" + std::string(text) +
                    "' (expected pe, fixed_vgg or learnable_vgg)");
}

std::array<int64_t, 4> ModelConfig::decoder_channels() const {
  const int64_t c = feature_channels();
  return {c, c / 2, c / 4, c / 8};
}

void ModelConfig::validate() const {
  if (width_divisor < 1 || 64 % width_divisor != 0) {
    throw ConfigError("model.width_divisor must divide 64, got " + std::to_string(width_divisor));
  }
  if (heads < 1 || (feature_channels() / 2) % heads != 0) {
    throw ConfigError("model.heads=" + std::to_string(heads) + " must divide half the feature width (" +
                      std::to_string(feature_channels() / 2) + ")");
  }
  if (!std::isfinite(epsilon) || epsilon <= 0.0) {
    throw ConfigError("model.epsilon must be positive");
  }
  if (embed_dim < 1 || proj_hidden < 1 || proj_dim < 1) {
    throw ConfigError("model.embed_dim, proj_hidden and proj_dim must be positive");
  }
}

CrossAttentionFusionImpl::CrossAttentionFusionImpl(int64_t channels, double epsilon)
    : epsilon_(epsilon) {
  auto conv = [&](const char* name) {
    return register_module(name, torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
  };
  query = conv("query");
  key = conv("key");
  value = conv("value");
  out = conv("out");
}

FusionOutput CrossAttentionFusionImpl::forward(const torch::Tensor& content,
                                               const torch::Tensor& style) {
  check_nchw(content, "cross_attention_fuse");
  check_nchw(style, "cross_attention_fuse");
  if (content.size(0) != style.size(0) || content.size(1) != style.size(1) ||
      content.size(1) != query->options.in_channels()) {
    throw DimensionError("cross_attention_fuse: content and style features must share batch and " +
                         std::to_string(query->options.in_channels()) + " channels");
  }
  const int64_t n = content.size(0);
  const int64_t c = content.size(1);
  const int64_t hc = content.size(2);
  const int64_t wc = content.size(3);

  auto q = query->forward(instance_norm(content, epsilon_)).flatten(2).transpose(1, 2);  // (N, Lc, C)
  auto k = key->forward(instance_norm(style, epsilon_)).flatten(2);                     // (N, C, Ls)
  auto v = value->forward(style).flatten(2);                                            // (N, C, Ls)
  auto scores = torch::bmm(q, k) / std::sqrt(static_cast<double>(c));
  FusionOutput result;
  result.attention = torch::softmax(scores, -1);
  auto attended = torch::bmm(v, result.attention.transpose(1, 2)).view({n, c, hc, wc});
  result.fused = content + out->forward(attended);
  return result;
}

DecoderImpl::DecoderImpl(std::array<int64_t, 4> channels) {
  for (size_t i = 0; i < convs.size(); ++i) {
    const int64_t out_ch = i + 1 < channels.size() ? channels[i + 1] : 3;
    convs[i] = register_module(
        "block" + std::to_string(i + 1),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(channels[i], out_ch, 3)
                              .padding(1)
                              .padding_mode(torch::kReflect)));
  }
}

torch::Tensor DecoderImpl::block(const torch::Tensor& x, int index) {
  if (index < 1 || index > 4) throw ConfigError("decoder block index must be in 1..4");
  auto& conv = convs[static_cast<size_t>(index - 1)];
  if (index == 4) return torch::sigmoid(conv->forward(x));
  auto up = F::interpolate(
      x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
  return torch::relu(conv->forward(up));
}

GeneratorImpl::GeneratorImpl(const ModelConfig& config, VggEncoder perceptual)
    : config_(config), perceptual_(std::move(perceptual)) {
  config_.validate();
  if (!perceptual_) throw ConfigError("generator requires a perceptual encoder");
  if (perceptual_->width_divisor() != config_.width_divisor) {
    throw ConfigError("perceptual encoder width does not match model.width_divisor");
  }
  const int64_t c = config_.feature_channels();
  switch (config_.style_encoder) {
    case StyleEncoderKind::perception:
      pe = register_module("pe", PerceptionEncoder(c, config_.heads));
      break;
    case StyleEncoderKind::learnable_vgg:
      style_vgg = register_module("style_vgg", VggEncoder(config_.width_divisor));
      style_vgg->set_trainable(true);
      break;
    case StyleEncoderKind::fixed_vgg:
      break;
  }
  fusion = register_module("fusion", CrossAttentionFusion(c, config_.epsilon));
  if (config_.fuse_relu5) fusion5 = register_module("fusion5", CrossAttentionFusion(c, config_.epsilon));
  if (config_.use_scin) {
    realigner = register_module(
        "realigner", StyleRealigner(c, config_.heads, config_.decoder_channels(), config_.residual,
                                    config_.epsilon));
  }
  decoder = register_module("decoder", Decoder(config_.decoder_channels()));
}

torch::Tensor GeneratorImpl::content_features(const torch::Tensor& content) {
  return perceptual_->forward(content);
}

torch::Tensor GeneratorImpl::style_features(const torch::Tensor& style) {
  switch (config_.style_encoder) {
    case StyleEncoderKind::perception: return pe->forward(style).stage2;
    case StyleEncoderKind::fixed_vgg: return perceptual_->forward(style);
    case StyleEncoderKind::learnable_vgg: return style_vgg->forward(style);
  }
  throw ConfigError("unsupported style encoder");
}

FusionOutput GeneratorImpl::fuse(const torch::Tensor& content_feature,
                                 const torch::Tensor& style_feature) {
  return fusion->forward(content_feature, style_feature);
}

torch::Tensor GeneratorImpl::decode(const torch::Tensor& fused, const StylePyramid& pyramid) {
  check_nchw(fused, "decode");
  auto x = fused;
  for (int i = 1; i <= 4; ++i) {
    if (realigner) {
      const auto& level = pyramid.level(5 - i);
      auto style_level = level;
      if (level.size(0) != x.size(0)) {
        throw DimensionError("decode: pyramid batch does not match fused feature batch");
      }
      x = realigner->forward(x, style_level, i);
    }
    x = decoder->block(x, i);
  }
  return x;
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& content, const torch::Tensor& style) {
  check_nchw(content, "stylize content");
  check_nchw(style, "stylize style");
  if (content.size(1) != 3 || style.size(1) != 3) {
    throw DimensionError("stylize: content and style must be 3-channel images");
  }
  const int64_t align = config_.fuse_relu5 ? 16 : 8;
  for (const auto* t : {&content, &style}) {
    if (t->size(2) % align != 0 || t->size(3) % align != 0) {
      throw DimensionError("stylize: image height and width must be divisible by " +
                           std::to_string(align) + ", got " + std::to_string(t->size(2)) + "x" +
                           std::to_string(t->size(3)));
    }
  }
  if (content.size(0) != style.size(0)) {
    throw DimensionError("stylize: content and style batches must have equal size");
  }

  auto style_feature = style_features(style);
  torch::Tensor fused;
  if (fusion5) {
    auto content_maps = perceptual_->extract(content, {VggLayer::relu4_1, VggLayer::relu5_1});
    fused = fuse(content_maps.at(VggLayer::relu4_1), style_feature).fused;
    auto deep = fusion5->forward(content_maps.at(VggLayer::relu5_1),
                                 torch::avg_pool2d(style_feature, {2, 2}, {2, 2}))
                    .fused;
    fused = fused + F::interpolate(deep, F::InterpolateFuncOptions()
                                             .scale_factor(std::vector<double>{2.0, 2.0})
                                             .mode(torch::kNearest));
  } else {
    fused = fuse(content_features(content), style_feature).fused;
  }
  return decode(fused, build_pyramid(style));
}

}  // namespace scinet
