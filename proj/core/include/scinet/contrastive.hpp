#pragma once

// Instance-based contrastive learning over an n x n grid of stylizations.
//
// Entry (i, j) of the grid is stylize(c_j, s_i). In the style view an anchor
// (i, j) is pulled towards (i, j') for j' != j; in the content view towards
// (i', j) for i' != i. In both views the negatives are the entries sharing
// neither index, (i', j') with i' != i and j' != j.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "scinet/generator.hpp"
#include "scinet/oracles.hpp"

namespace scinet {

inline constexpr double kDefaultTau = 0.3;
inline constexpr uint64_t kEmbedderInitSeed = 0xc11bull;

enum class IclForm {
  infonce,  // standard InfoNCE over the positive/negative sets
  literal,  // every logit is the anchor's similarity with itself (constant loss)
};

// Frozen image encoder producing instance embeddings. Gradients flow through
// the input images but never into the encoder.
class InstanceEmbedder {
 public:
  virtual ~InstanceEmbedder() = default;

  virtual torch::Tensor embed(const torch::Tensor& images) = 0;  // (N, dim)
  virtual int64_t dim() const = 0;
  virtual std::string identifier() const = 0;
  virtual uint64_t checksum() const = 0;
  virtual void to(torch::Dtype dtype) = 0;
};

// Default stand-in: four stride-2 convs, global average pooling and a linear
// map to `dim`, randomly initialized from a fixed seed and frozen.
class ConvInstanceEncoderImpl : public torch::nn::Module {
 public:
  explicit ConvInstanceEncoderImpl(int64_t dim);

  torch::Tensor forward(const torch::Tensor& images);

  torch::nn::Sequential trunk{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(ConvInstanceEncoder);

class ConvInstanceEmbedder final : public InstanceEmbedder {
 public:
  explicit ConvInstanceEmbedder(int64_t dim = 512, uint64_t seed = kEmbedderInitSeed);

  torch::Tensor embed(const torch::Tensor& images) override;
  int64_t dim() const override { return dim_; }
  std::string identifier() const override;
  uint64_t checksum() const override;
  void to(torch::Dtype dtype) override;

  ConvInstanceEncoder module() const { return net_; }

 private:
  ConvInstanceEncoder net_{nullptr};
  int64_t dim_;
  uint64_t seed_;
};

// Adapter for a traced/scripted image encoder (e.g. an exported CLIP visual
// tower). Images are resized to `input_size` and normalized with the CLIP
// channel statistics before the call.
class TorchScriptEmbedder final : public InstanceEmbedder {
 public:
  TorchScriptEmbedder(const std::filesystem::path& path, int64_t dim, int64_t input_size = 224);
  ~TorchScriptEmbedder() override;

  torch::Tensor embed(const torch::Tensor& images) override;
  int64_t dim() const override { return dim_; }
  std::string identifier() const override;
  uint64_t checksum() const override;
  void to(torch::Dtype dtype) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int64_t dim_;
  int64_t input_size_;
  std::string path_;
};

// l_s and l_c: two-layer perceptrons with L2-normalized outputs.
class ProjectionHeadsImpl : public torch::nn::Module {
 public:
  ProjectionHeadsImpl(int64_t embed_dim = 512, int64_t hidden = 256, int64_t out = 128);

  torch::Tensor style(const torch::Tensor& embeddings);
  torch::Tensor content(const torch::Tensor& embeddings);

  torch::nn::Sequential style_head{nullptr}, content_head{nullptr};
};
TORCH_MODULE(ProjectionHeads);

struct StylizationGrid {
  int64_t n = 0;
  torch::Tensor images;  // (n*n, 3, H, W); row-major in (style i, content j)

  static int64_t index(int64_t n, int64_t style, int64_t content) { return style * n + content; }
  torch::Tensor at(int64_t style, int64_t content) const;
};

// contents and styles are (n, 3, H, W) batches. n < 2 raises ConfigError
// because no positives exist.
StylizationGrid build_grid(const torch::Tensor& contents, const torch::Tensor& styles,
                           Generator& generator);
// The same (style, content) arrangement without running anything.
std::pair<torch::Tensor, torch::Tensor> grid_inputs(const torch::Tensor& contents,
                                                    const torch::Tensor& styles);

// style_codes / content_codes: (n*n, d) rows in grid order. Rows are
// L2-normalized inside, so similarities are cosines scaled by 1/tau. The
// result is invariant, bit for bit, under relabeling of styles or contents.
torch::Tensor icl_loss(const torch::Tensor& style_codes, const torch::Tensor& content_codes,
                       int64_t n, double tau = kDefaultTau, IclForm form = IclForm::infonce);

torch::Tensor icl_loss(const StylizationGrid& grid, InstanceEmbedder& embedder,
                       ProjectionHeads& heads, double tau = kDefaultTau,
                       IclForm form = IclForm::infonce);

// Positive and negative grid indices for an anchor, per view.
struct ContrastiveSets {
  std::vector<int64_t> positives;
  std::vector<int64_t> negatives;
};
ContrastiveSets style_view_sets(int64_t n, int64_t style, int64_t content);
ContrastiveSets content_view_sets(int64_t n, int64_t style, int64_t content);

using oracle::GradientCheckReport;

// Central differences vs autograd for icl_loss w.r.t. both code matrices, in
// double precision. Intended for small codes (d <= 8).
GradientCheckReport icl_gradient_check(const torch::Tensor& style_codes,
                                       const torch::Tensor& content_codes, int64_t n,
                                       double tau = kDefaultTau, double tolerance = 1e-3);

}  // namespace scinet
