#pragma once

// Brute-force reference computations. Everything here works on flattened
// std::vector<double> copies with explicit loops and shares no code path with
// the tensor implementations it is used to check.

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <vector>

namespace scinet::oracle {

// Contiguous double copy of any tensor, row-major.
std::vector<double> to_vector(const torch::Tensor& t);

struct Moments {
  std::vector<double> mean;    // N*C entries
  std::vector<double> stddev;  // sqrt(biased variance + epsilon)
};

// Two-pass mean / standard deviation over the spatial dims of (N, C, H, W).
Moments instance_moments(const torch::Tensor& x, double epsilon);

// Explicit-loop multi-head self-attention: per head, score matrix, softmax,
// weighted sum; then head concat and W_o. Weights use the nn::Linear layout
// (out x in) and tokens are (N, L, C).
struct AttentionResult {
  std::vector<double> output;   // (N, L, C)
  std::vector<double> weights;  // (N, heads, L, L)
  std::vector<double> query;    // (N, L, C) = Z W_q^T
};
AttentionResult naive_self_attention(const torch::Tensor& tokens, const torch::Tensor& w_q,
                                     const torch::Tensor& w_k, const torch::Tensor& w_v,
                                     const torch::Tensor& w_o, int64_t heads);

// Row-wise layer norm with affine weight/bias over the last dim of (rows, C).
std::vector<double> naive_layer_norm(const std::vector<double>& x, int64_t rows, int64_t cols,
                                     const torch::Tensor& weight, const torch::Tensor& bias,
                                     double epsilon);

// Rows of x (rows x in) through an nn::Linear layout weight (out x in) and an
// optional bias.
std::vector<double> naive_linear(const std::vector<double>& x, int64_t rows,
                                 const torch::Tensor& weight, const torch::Tensor& bias = {});

struct Conv1x1 {
  torch::Tensor weight;  // (C_out, C_in, 1, 1)
  torch::Tensor bias;    // (C_out)
};

// SANet-style cross attention written as double loops over grid positions.
struct CrossAttentionResult {
  std::vector<double> fused;      // (N, C, Hc, Wc)
  std::vector<double> attention;  // (N, Hc*Wc, Hs*Ws)
};
CrossAttentionResult naive_cross_attention(const torch::Tensor& content, const torch::Tensor& style,
                                           const Conv1x1& query, const Conv1x1& key,
                                           const Conv1x1& value, const Conv1x1& out,
                                           double epsilon);

// Enumerates every (anchor, positive) pair of both views and evaluates
// -log(exp(p) / (exp(p) + sum exp(negatives))) directly; returns the sum of
// the two per-view means. Codes are (n*n, d), cosine similarity / tau.
double brute_force_icl(const torch::Tensor& style_codes, const torch::Tensor& content_codes,
                       int64_t n, double tau);

struct GradientCheckReport {
  double relative_error = 0.0;  // ||g_a - g_n|| / max(||g_a||, ||g_n||, 1e-12)
  double max_abs_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double tolerance = 1e-3;
  bool passed = false;
};

using ScalarFn = std::function<torch::Tensor(const std::vector<torch::Tensor>&)>;

// Central differences with step `step` on every entry of every input, against
// autograd gradients of `fn`. Inputs are converted to double.
GradientCheckReport check_gradients(const ScalarFn& fn, std::vector<torch::Tensor> inputs,
                                    double step = 1e-6, double tolerance = 1e-3);

}  // namespace scinet::oracle
