#include "scinet/scin.hpp"

#include <cmath>

#include "scinet/errors.hpp"
#include "scinet/imaging.hpp"

namespace scinet {

namespace F = torch::nn::functional;

InstanceStats instance_stats(const torch::Tensor& x, double epsilon) {
  check_nchw(x, "instance_stats");
  if (!std::isfinite(epsilon) || epsilon < 0.0) {
    throw ConfigError("instance_stats: epsilon must be a finite non-negative number");
  }
  InstanceStats s;
  s.epsilon = epsilon;
  s.mu = x.mean({2, 3}, /*keepdim=*/true);
  auto var = (x - s.mu).pow(2).mean({2, 3}, /*keepdim=*/true);
  s.sigma = torch::sqrt(var + epsilon);
  return s;
}

torch::Tensor instance_norm(const torch::Tensor& x, double epsilon) {
  auto s = instance_stats(x, epsilon);
  return (x - s.mu) / s.sigma;
}

torch::Tensor adain(const torch::Tensor& content, const torch::Tensor& style, double epsilon) {
  check_nchw(content, "adain");
  check_nchw(style, "adain");
  if (content.size(0) != style.size(0) || content.size(1) != style.size(1)) {
    throw DimensionError("adain: content and style must agree in batch and channel count");
  }
  auto c = instance_stats(content, epsilon);
  auto s = instance_stats(style, epsilon);
  return s.sigma * ((content - c.mu) / c.sigma) + s.mu;
}

torch::Tensor scin_apply(const torch::Tensor& content, const AffineParams& affine, double epsilon) {
  check_nchw(content, "scin_apply");
  const int64_t n = content.size(0);
  const int64_t c = content.size(1);
  auto expect = [&](const torch::Tensor& p, const char* name) {
    if (!p.defined() || p.dim() != 4 || p.size(0) != n || p.size(1) != c || p.size(2) != 1 ||
        p.size(3) != 1) {
      throw DimensionError(std::string("scin_apply: ") + name + " must have shape (" +
                           std::to_string(n) + ", " + std::to_string(c) + ", 1, 1)");
    }
  };
  expect(affine.gamma, "gamma");
  expect(affine.beta, "beta");
  return affine.gamma * instance_norm(content, epsilon) + affine.beta;
}

StyleTokenizerImpl::StyleTokenizerImpl(int64_t channels) {
  embed = register_module(
      "embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, channels, kPatchSize).stride(kPatchSize)));
  positions = register_parameter(
      "positions", torch::randn({1, channels, kPositionGrid, kPositionGrid}) * 0.02);
}

StyleSequence StyleTokenizerImpl::forward(const torch::Tensor& image) {
  check_nchw(image, "style tokenizer");
  if (image.size(1) != 3) throw DimensionError("style tokenizer: expected a 3-channel image");
  const int64_t h = image.size(2);
  const int64_t w = image.size(3);
  const int64_t pad_h = (kPatchSize - h % kPatchSize) % kPatchSize;
  const int64_t pad_w = (kPatchSize - w % kPatchSize) % kPatchSize;
  auto x = image;
  if (pad_h != 0 || pad_w != 0) {
    x = F::pad(x, F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(torch::kReplicate));
  }
  auto grid = embed->forward(x);
  const int64_t gh = grid.size(2);
  const int64_t gw = grid.size(3);
  auto pos = positions.to(grid.dtype());
  if (gh != kPositionGrid || gw != kPositionGrid) {
    pos = F::interpolate(pos, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{gh, gw})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
  }
  return {to_tokens(grid + pos)};
}

StyleEncoderImpl::StyleEncoderImpl(int64_t channels, int64_t heads, EncoderResidual residual)
    : residual_(residual) {
  attention = register_module("attention", MultiHeadAttention(channels, heads));
  ffn_in = register_module("ffn_in", torch::nn::Linear(channels, 2 * channels));
  ffn_out = register_module("ffn_out", torch::nn::Linear(2 * channels, channels));
  norm_attended = register_module(
      "norm_attended", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
  norm_out =
      register_module("norm_out", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
}

EncodedStyle StyleEncoderImpl::forward(const StyleSequence& sequence) {
  const auto& z = sequence.tokens;
  if (!z.defined() || z.dim() != 3 || z.size(1) < 1) {
    throw DimensionError("style_encode: expected (N, L, C) tokens with L >= 1");
  }
  if (z.size(2) != attention->dim()) {
    throw DimensionError("style_encode: token dim " + std::to_string(z.size(2)) +
                         " does not match encoder dim " + std::to_string(attention->dim()));
  }
  auto qkv = attention->project(z, z, z);
  auto attn = attention->attend(qkv);

  EncodedStyle out;
  out.attention = attn.weights;
  out.attended = attn.output + (residual_ == EncoderResidual::query ? qkv.q : z);
  auto y_prime = norm_attended->forward(out.attended);
  auto ffn = ffn_out->forward(torch::relu(ffn_in->forward(y_prime)));
  out.sequence.tokens = norm_out->forward(ffn + y_prime);
  return out;
}

AffineHeadsImpl::AffineHeadsImpl(int64_t token_dim,
                                 std::array<int64_t, kDecoderScales> scale_channels)
    : scale_channels_(scale_channels) {
  auto make_head = [&](int64_t out, double bias) {
    torch::nn::Sequential head(torch::nn::Linear(token_dim, token_dim), torch::nn::ReLU(),
                               torch::nn::Linear(token_dim, out));
    auto last = head->ptr<torch::nn::LinearImpl>(2);
    torch::NoGradGuard no_grad;
    last->weight.zero_();
    last->bias.fill_(bias);
    return head;
  };
  for (int i = 0; i < kDecoderScales; ++i) {
    const auto idx = static_cast<size_t>(i);
    gamma_heads_[idx] = register_module("gamma" + std::to_string(i + 1),
                                        make_head(scale_channels[idx], 1.0));
    beta_heads_[idx] = register_module("beta" + std::to_string(i + 1),
                                       make_head(scale_channels[idx], 0.0));
  }
}

int64_t AffineHeadsImpl::scale_channels(int layer_index) const {
  if (layer_index < 1 || layer_index > kDecoderScales) {
    throw ConfigError("affine_heads: layer index must be in 1..4, got " +
                      std::to_string(layer_index));
  }
  return scale_channels_[static_cast<size_t>(layer_index - 1)];
}

AffineParams AffineHeadsImpl::forward(const StyleSequence& encoded, int layer_index) {
  const int64_t c = scale_channels(layer_index);
  const auto idx = static_cast<size_t>(layer_index - 1);
  auto pooled = encoded.tokens.mean(1);
  AffineParams p;
  p.gamma = gamma_heads_[idx]->forward(pooled).view({pooled.size(0), c, 1, 1});
  p.beta = beta_heads_[idx]->forward(pooled).view({pooled.size(0), c, 1, 1});
  return p;
}

StyleRealignerImpl::StyleRealignerImpl(int64_t token_dim, int64_t heads,
                                       std::array<int64_t, kDecoderScales> scale_channels,
                                       EncoderResidual residual, double epsilon)
    : epsilon_(epsilon) {
  tokenizer = register_module("tokenizer", StyleTokenizer(token_dim));
  encoder = register_module("encoder", StyleEncoder(token_dim, heads, residual));
  this->heads = register_module("heads", AffineHeads(token_dim, scale_channels));
}

EncodedStyle StyleRealignerImpl::encode(const torch::Tensor& style_level) {
  return encoder->forward(tokenizer->forward(style_level));
}

AffineParams StyleRealignerImpl::affine(const torch::Tensor& style_level, int layer_index) {
  return heads->forward(encode(style_level).sequence, layer_index);
}

torch::Tensor StyleRealignerImpl::forward(const torch::Tensor& features,
                                          const torch::Tensor& style_level, int layer_index) {
  check_nchw(features, "realign");
  if (features.size(1) != heads->scale_channels(layer_index)) {
    throw DimensionError("realign: feature channels do not match decoder scale " +
                         std::to_string(layer_index));
  }
  return scin_apply(features, affine(style_level, layer_index), epsilon_);
}

}  // namespace scinet
