#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "scinet/scin.hpp"

namespace scinet {

enum class StyleEncoderKind {
  perception,     // Perception Encoder stage2 features
  fixed_vgg,      // frozen VGG relu4_1
  learnable_vgg,  // trainable VGG copy, relu4_1
};

std::string_view to_string(StyleEncoderKind kind);
StyleEncoderKind parse_style_encoder(std::string_view text);

// Architecture knobs shared by every module that owns parameters.
struct ModelConfig {
  // 1 gives the standard 64..512 channel layout; larger values shrink every
  // width by that factor for desk-scale runs. Must divide 64.
  int64_t width_divisor = 1;
  int64_t heads = 8;
  StyleEncoderKind style_encoder = StyleEncoderKind::perception;
  bool use_scin = true;
  bool fuse_relu5 = false;
  EncoderResidual residual = EncoderResidual::query;
  double epsilon = kDefaultEpsilon;
  int64_t embed_dim = 512;
  int64_t proj_hidden = 256;
  int64_t proj_dim = 128;
  std::string vgg_weights;       // optional pretrained VGG archive
  std::string embedder_script;   // optional TorchScript image encoder

  // Width of relu4_1, the PE stages and the fused feature.
  int64_t feature_channels() const { return 512 / width_divisor; }
  // Channels entering decoder blocks 1..4.
  std::array<int64_t, 4> decoder_channels() const;

  // Throws ConfigError describing the first violated constraint.
  void validate() const;
};

}  // namespace scinet
