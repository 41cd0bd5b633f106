#include "scinet/attention.hpp"

#include <cmath>

#include "scinet/errors.hpp"

namespace scinet {

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t dim, int64_t heads)
    : dim_(dim), heads_(heads) {
  if (dim < 1 || heads < 1 || dim % heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  auto opts = torch::nn::LinearOptions(dim, dim).bias(false);
  w_q = register_module("w_q", torch::nn::Linear(opts));
  w_k = register_module("w_k", torch::nn::Linear(opts));
  w_v = register_module("w_v", torch::nn::Linear(opts));
  w_o = register_module("w_o", torch::nn::Linear(opts));
}

QkvProjections MultiHeadAttentionImpl::project(const torch::Tensor& queries,
                                               const torch::Tensor& keys,
                                               const torch::Tensor& values) {
  if (queries.dim() != 3 || keys.dim() != 3 || values.dim() != 3 || queries.size(2) != dim_ ||
      keys.size(2) != dim_ || values.size(2) != dim_ || keys.size(1) != values.size(1)) {
    throw DimensionError("attention: expected (N, L, " + std::to_string(dim_) + ") token tensors");
  }
  return {w_q->forward(queries), w_k->forward(keys), w_v->forward(values)};
}

AttentionOutput MultiHeadAttentionImpl::attend(const QkvProjections& qkv) {
  const int64_t n = qkv.q.size(0);
  const int64_t lq = qkv.q.size(1);
  const int64_t lk = qkv.k.size(1);
  const int64_t dh = head_dim();
  auto split = [&](const torch::Tensor& t, int64_t len) {
    return t.reshape({n, len, heads_, dh}).transpose(1, 2);  // (N, heads, L, dh)
  };
  auto q = split(qkv.q, lq);
  auto k = split(qkv.k, lk);
  auto v = split(qkv.v, lk);
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh));
  auto weights = torch::softmax(scores, -1);
  auto heads_out = torch::matmul(weights, v).transpose(1, 2).reshape({n, lq, dim_});
  return {w_o->forward(heads_out), weights};
}

torch::Tensor to_tokens(const torch::Tensor& fmap) {
  return fmap.flatten(2).transpose(1, 2);
}

torch::Tensor from_tokens(const torch::Tensor& tokens, int64_t height, int64_t width) {
  return tokens.transpose(1, 2).reshape({tokens.size(0), tokens.size(2), height, width});
}

}  // namespace scinet
