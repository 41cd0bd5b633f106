#pragma once

// Instance statistics, AdaIN, the transformer style encoder and the SCIN
// layer: gamma * IN(F_c) + beta with (gamma, beta) regressed from a
// transformer encoding of the style image.

#include <torch/torch.h>

#include <array>
#include <cstdint>

#include "scinet/attention.hpp"

namespace scinet {

inline constexpr double kDefaultEpsilon = 1e-5;

struct InstanceStats {
  torch::Tensor mu;     // (N, C, 1, 1)
  torch::Tensor sigma;  // (N, C, 1, 1), sqrt(biased variance + epsilon)
  double epsilon = kDefaultEpsilon;
};

// Negative or non-finite epsilon raises ConfigError. Zero is accepted so the
// verification suite can demonstrate what it breaks.
InstanceStats instance_stats(const torch::Tensor& x, double epsilon = kDefaultEpsilon);
torch::Tensor instance_norm(const torch::Tensor& x, double epsilon = kDefaultEpsilon);
// sigma(F_s) * IN(F_c) + mu(F_s); spatial sizes may differ, N and C must match.
torch::Tensor adain(const torch::Tensor& content, const torch::Tensor& style,
                    double epsilon = kDefaultEpsilon);

struct AffineParams {
  torch::Tensor gamma;  // (N, C, 1, 1)
  torch::Tensor beta;   // (N, C, 1, 1)
};

torch::Tensor scin_apply(const torch::Tensor& content, const AffineParams& affine,
                         double epsilon = kDefaultEpsilon);

struct StyleSequence {
  torch::Tensor tokens;  // (N, L, C)
};

// 8x8 patch embedding to C channels plus a learned positional table that is
// bilinearly resampled to the token grid. Inputs are replicate-padded up to a
// multiple of the patch size, so any pyramid level tokenizes to L >= 1.
class StyleTokenizerImpl : public torch::nn::Module {
 public:
  explicit StyleTokenizerImpl(int64_t channels);

  StyleSequence forward(const torch::Tensor& image);

  static constexpr int64_t kPatchSize = 8;
  static constexpr int64_t kPositionGrid = 8;
  torch::nn::Conv2d embed{nullptr};
  torch::Tensor positions;
};
TORCH_MODULE(StyleTokenizer);

enum class EncoderResidual {
  query,  // Y' = MSA(Q, K, V) + Q
  input,  // Y' = MSA(Q, K, V) + Z_s
};

struct EncodedStyle {
  StyleSequence sequence;    // Y_s
  torch::Tensor attended;    // Y'_s before its layer norm
  torch::Tensor attention;   // (N, heads, L, L)
};

// One post-norm transformer encoder block:
//   Y' = LN(MSA(Q, K, V) + Q),  Y = LN(FFN(Y') + Y'),  FFN(x) = max(0, x W1 + b1) W2 + b2
class StyleEncoderImpl : public torch::nn::Module {
 public:
  StyleEncoderImpl(int64_t channels, int64_t heads,
                   EncoderResidual residual = EncoderResidual::query);

  EncodedStyle forward(const StyleSequence& sequence);

  MultiHeadAttention attention{nullptr};
  torch::nn::Linear ffn_in{nullptr}, ffn_out{nullptr};
  torch::nn::LayerNorm norm_attended{nullptr}, norm_out{nullptr};

 private:
  EncoderResidual residual_;
};
TORCH_MODULE(StyleEncoder);

inline constexpr int kDecoderScales = 4;

// Per-decoder-scale (gamma, beta) FFN pairs over mean-pooled style tokens.
// The gamma heads start out emitting exactly 1 and the beta heads exactly 0.
class AffineHeadsImpl : public torch::nn::Module {
 public:
  AffineHeadsImpl(int64_t token_dim, std::array<int64_t, kDecoderScales> scale_channels);

  // layer_index is 1-based; anything outside 1..4 raises ConfigError.
  AffineParams forward(const StyleSequence& encoded, int layer_index);

  int64_t scale_channels(int layer_index) const;

 private:
  std::array<int64_t, kDecoderScales> scale_channels_;
  std::array<torch::nn::Sequential, kDecoderScales> gamma_heads_;
  std::array<torch::nn::Sequential, kDecoderScales> beta_heads_;
};
TORCH_MODULE(AffineHeads);

// realign(F_cs, I_s^level, i) = SCIN(F_cs, heads_i(encoder(tokenizer(I_s^level)))).
// A single tokenizer/encoder pair is shared by all four decoder scales.
class StyleRealignerImpl : public torch::nn::Module {
 public:
  StyleRealignerImpl(int64_t token_dim, int64_t heads,
                     std::array<int64_t, kDecoderScales> scale_channels,
                     EncoderResidual residual = EncoderResidual::query,
                     double epsilon = kDefaultEpsilon);

  EncodedStyle encode(const torch::Tensor& style_level);
  AffineParams affine(const torch::Tensor& style_level, int layer_index);
  torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& style_level,
                        int layer_index);

  StyleTokenizer tokenizer{nullptr};
  StyleEncoder encoder{nullptr};
  AffineHeads heads{nullptr};

 private:
  double epsilon_;
};
TORCH_MODULE(StyleRealigner);

}  // namespace scinet
