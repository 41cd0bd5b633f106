#include "scinet/contrastive.hpp"

#include <torch/script.h>

#include <cmath>
#include <sstream>

#include "scinet/errors.hpp"
#include "scinet/imaging.hpp"

namespace scinet {

namespace F = torch::nn::functional;

namespace {

uint64_t fnv_tensors(const std::vector<std::pair<std::string, torch::Tensor>>& named) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&](const void* data, size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [name, t] : named) {
    feed(name.data(), name.size());
    auto c = t.detach().contiguous().cpu();
    feed(c.data_ptr(), static_cast<size_t>(c.numel()) * c.element_size());
  }
  return h;
}

torch::Tensor index_tensor(const std::vector<int64_t>& idx) {
  return torch::tensor(idx, torch::kLong);
}

void check_codes(const torch::Tensor& codes, int64_t n, const char* what) {
  if (!codes.defined() || codes.dim() != 2 || codes.size(0) != n * n || codes.size(1) < 1) {
    throw DimensionError(std::string("icl_loss: ") + what + " codes must be (n*n, d) with n=" +
                         std::to_string(n));
  }
}

enum class View { style, content };

torch::Tensor view_loss(const torch::Tensor& logits, int64_t n, View view, IclForm form) {
  std::vector<torch::Tensor> terms;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      const int64_t a = StylizationGrid::index(n, i, j);
      const auto sets = view == View::style ? style_view_sets(n, i, j) : content_view_sets(n, i, j);
      auto row = logits[a];
      torch::Tensor negatives;
      if (form == IclForm::literal) {
        negatives = row[a].expand({static_cast<int64_t>(sets.negatives.size())});
      } else {
        // Sorted so the reduction order does not depend on grid labeling.
        negatives = std::get<0>(row.index_select(0, index_tensor(sets.negatives)).sort());
      }
      for (int64_t p : sets.positives) {
        auto positive = form == IclForm::literal ? row[a] : row[p];
        auto all = torch::cat({positive.unsqueeze(0), negatives});
        terms.push_back(torch::logsumexp(all, 0) - positive);
      }
    }
  }
  auto stacked = std::get<0>(torch::stack(terms).sort());
  return stacked.sum() / static_cast<double>(terms.size());
}

}  // namespace

ConvInstanceEncoderImpl::ConvInstanceEncoderImpl(int64_t dim) {
  auto down = [](int64_t in, int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1));
  };
  trunk = register_module(
      "trunk", torch::nn::Sequential(down(3, 32), torch::nn::ReLU(), down(32, 64), torch::nn::ReLU(),
                                     down(64, 128), torch::nn::ReLU(), down(128, 256),
                                     torch::nn::ReLU()));
  head = register_module("head", torch::nn::Linear(256, dim));
}

torch::Tensor ConvInstanceEncoderImpl::forward(const torch::Tensor& images) {
  auto x = trunk->forward(images);
  return head->forward(x.mean({2, 3}));
}

ConvInstanceEmbedder::ConvInstanceEmbedder(int64_t dim, uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 1) throw ConfigError("embedding dim must be positive");
  ScopedSeed guard(seed);
  net_ = ConvInstanceEncoder(dim);
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
  net_->eval();
}

torch::Tensor ConvInstanceEmbedder::embed(const torch::Tensor& images) {
  check_nchw(images, "embed_instance");
  if (images.size(1) != 3) throw DimensionError("embed_instance: expected 3-channel images");
  if (images.size(2) < 16 || images.size(3) < 16) {
    throw DimensionError("embed_instance: images must be at least 16x16");
  }
  return net_->forward(images);
}

std::string ConvInstanceEmbedder::identifier() const {
  std::ostringstream os;
  os << "conv-standin-d" << dim_ << "-seed" << seed_;
  return os.str();
}

uint64_t ConvInstanceEmbedder::checksum() const {
  std::vector<std::pair<std::string, torch::Tensor>> named;
  for (const auto& p : net_->named_parameters(true)) named.emplace_back(p.key(), p.value());
  return fnv_tensors(named);
}

void ConvInstanceEmbedder::to(torch::Dtype dtype) { net_->to(dtype); }

struct TorchScriptEmbedder::Impl {
  torch::jit::script::Module module;
};

TorchScriptEmbedder::TorchScriptEmbedder(const std::filesystem::path& path, int64_t dim,
                                         int64_t input_size)
    : impl_(std::make_unique<Impl>()), dim_(dim), input_size_(input_size), path_(path.string()) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw IoError("TorchScript embedder does not exist: " + path_);
  }
  try {
    impl_->module = torch::jit::load(path_);
  } catch (const c10::Error& e) {
    throw DecodeError("cannot load TorchScript embedder " + path_ + ": " + e.what_without_backtrace());
  }
  impl_->module.eval();
  for (auto p : impl_->module.parameters()) p.set_requires_grad(false);
}

TorchScriptEmbedder::~TorchScriptEmbedder() = default;

torch::Tensor TorchScriptEmbedder::embed(const torch::Tensor& images) {
  check_nchw(images, "embed_instance");
  auto x = F::interpolate(images, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{input_size_, input_size_})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
  auto opts = x.options().requires_grad(false);
  auto mean = torch::tensor({0.48145466, 0.4578275, 0.40821073}, opts).view({1, 3, 1, 1});
  auto stdev = torch::tensor({0.26862954, 0.26130258, 0.27577711}, opts).view({1, 3, 1, 1});
  auto out = impl_->module.forward({(x - mean) / stdev}).toTensor();
  if (out.dim() != 2 || out.size(1) != dim_) {
    throw DimensionError("TorchScript embedder returned shape incompatible with dim " +
                         std::to_string(dim_));
  }
  return out;
}

std::string TorchScriptEmbedder::identifier() const { return "torchscript:" + path_; }

uint64_t TorchScriptEmbedder::checksum() const {
  std::vector<std::pair<std::string, torch::Tensor>> named;
  for (const auto& p : impl_->module.named_parameters(true)) named.emplace_back(p.name, p.value);
  return fnv_tensors(named);
}

void TorchScriptEmbedder::to(torch::Dtype dtype) { impl_->module.to(dtype); }

ProjectionHeadsImpl::ProjectionHeadsImpl(int64_t embed_dim, int64_t hidden, int64_t out) {
  auto mlp = [&] {
    return torch::nn::Sequential(torch::nn::Linear(embed_dim, hidden), torch::nn::ReLU(),
                                 torch::nn::Linear(hidden, out));
  };
  style_head = register_module("style_head", mlp());
  content_head = register_module("content_head", mlp());
}

torch::Tensor ProjectionHeadsImpl::style(const torch::Tensor& embeddings) {
  return F::normalize(style_head->forward(embeddings), F::NormalizeFuncOptions().dim(1));
}

torch::Tensor ProjectionHeadsImpl::content(const torch::Tensor& embeddings) {
  return F::normalize(content_head->forward(embeddings), F::NormalizeFuncOptions().dim(1));
}

torch::Tensor StylizationGrid::at(int64_t style, int64_t content) const {
  if (style < 0 || style >= n || content < 0 || content >= n) {
    throw DimensionError("grid index out of range");
  }
  return images.narrow(0, index(n, style, content), 1);
}

std::pair<torch::Tensor, torch::Tensor> grid_inputs(const torch::Tensor& contents,
                                                    const torch::Tensor& styles) {
  check_nchw(contents, "build_grid contents");
  check_nchw(styles, "build_grid styles");
  const int64_t n = contents.size(0);
  if (styles.size(0) != n) {
    throw DimensionError("build_grid: expected equal numbers of content and style images");
  }
  // Entry i*n + j pairs style i with content j.
  auto style_batch = styles.repeat_interleave(n, 0);
  auto content_batch = contents.repeat({n, 1, 1, 1});
  return {content_batch, style_batch};
}

StylizationGrid build_grid(const torch::Tensor& contents, const torch::Tensor& styles,
                           Generator& generator) {
  check_nchw(contents, "build_grid contents");
  const int64_t n = contents.size(0);
  if (n < 2) {
    throw ConfigError("build_grid: contrastive grid needs n >= 2 (no positives exist for n=" +
                      std::to_string(n) + ")");
  }
  auto [content_batch, style_batch] = grid_inputs(contents, styles);
  StylizationGrid grid;
  grid.n = n;
  grid.images = generator->forward(content_batch, style_batch);
  return grid;
}

ContrastiveSets style_view_sets(int64_t n, int64_t style, int64_t content) {
  ContrastiveSets s;
  for (int64_t m = 0; m < n; ++m) {
    for (int64_t k = 0; k < n; ++k) {
      if (m == style && k != content) s.positives.push_back(StylizationGrid::index(n, m, k));
      if (m != style && k != content) s.negatives.push_back(StylizationGrid::index(n, m, k));
    }
  }
  return s;
}

ContrastiveSets content_view_sets(int64_t n, int64_t style, int64_t content) {
  ContrastiveSets s;
  for (int64_t m = 0; m < n; ++m) {
    for (int64_t k = 0; k < n; ++k) {
      if (k == content && m != style) s.positives.push_back(StylizationGrid::index(n, m, k));
      if (m != style && k != content) s.negatives.push_back(StylizationGrid::index(n, m, k));
    }
  }
  return s;
}

torch::Tensor icl_loss(const torch::Tensor& style_codes, const torch::Tensor& content_codes,
                       int64_t n, double tau, IclForm form) {
  if (n < 2) {
    throw ConfigError("icl_loss: needs n >= 2, got n=" + std::to_string(n));
  }
  if (!std::isfinite(tau) || tau <= 0.0) throw ConfigError("icl_loss: tau must be positive");
  check_codes(style_codes, n, "style");
  check_codes(content_codes, n, "content");

  auto logits = [&](const torch::Tensor& codes) {
    auto unit = F::normalize(codes, F::NormalizeFuncOptions().dim(1));
    // Elementwise product + row sum keeps s(a, b) == s(b, a) bit for bit.
    return (unit.unsqueeze(1) * unit.unsqueeze(0)).sum(-1) / tau;
  };
  return view_loss(logits(style_codes), n, View::style, form) +
         view_loss(logits(content_codes), n, View::content, form);
}

torch::Tensor icl_loss(const StylizationGrid& grid, InstanceEmbedder& embedder,
                       ProjectionHeads& heads, double tau, IclForm form) {
  auto embeddings = embedder.embed(grid.images);
  return icl_loss(heads->style(embeddings), heads->content(embeddings), grid.n, tau, form);
}

GradientCheckReport icl_gradient_check(const torch::Tensor& style_codes,
                                       const torch::Tensor& content_codes, int64_t n, double tau,
                                       double tolerance) {
  return oracle::check_gradients(
      [&](const std::vector<torch::Tensor>& in) { return icl_loss(in[0], in[1], n, tau); },
      {style_codes, content_codes}, 1e-6, tolerance);
}

}  // namespace scinet
