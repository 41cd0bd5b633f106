#pragma once

#include <torch/torch.h>

namespace scinet {

struct QkvProjections {
  torch::Tensor q;  // (N, L, C)
  torch::Tensor k;
  torch::Tensor v;
};

struct AttentionOutput {
  torch::Tensor output;   // (N, Lq, C), after the output projection
  torch::Tensor weights;  // (N, heads, Lq, Lk); rows are softmax distributions
};

// Multi-head scaled dot-product attention over token sequences (N, L, C).
// Q/K/V/O projections are bias-free C x C maps; d_head = C / heads exactly.
class MultiHeadAttentionImpl : public torch::nn::Module {
 public:
  MultiHeadAttentionImpl(int64_t dim, int64_t heads);

  QkvProjections project(const torch::Tensor& queries, const torch::Tensor& keys,
                         const torch::Tensor& values);
  AttentionOutput attend(const QkvProjections& qkv);

  AttentionOutput forward(const torch::Tensor& tokens) {
    return attend(project(tokens, tokens, tokens));
  }

  int64_t dim() const { return dim_; }
  int64_t heads() const { return heads_; }
  int64_t head_dim() const { return dim_ / heads_; }

  torch::nn::Linear w_q{nullptr}, w_k{nullptr}, w_v{nullptr}, w_o{nullptr};

 private:
  int64_t dim_;
  int64_t heads_;
};
TORCH_MODULE(MultiHeadAttention);

// (N, C, H, W) <-> (N, H*W, C) row-major token order.
torch::Tensor to_tokens(const torch::Tensor& fmap);
torch::Tensor from_tokens(const torch::Tensor& tokens, int64_t height, int64_t width);

}  // namespace scinet
