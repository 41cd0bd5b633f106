#pragma once

// The optimization loop: one discriminator update followed by one
// generator-side update per step, checkpointing and the metrics log.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "scinet/checkpoint.hpp"
#include "scinet/config.hpp"
#include "scinet/contrastive.hpp"
#include "scinet/generator.hpp"
#include "scinet/losses.hpp"

namespace scinet {

// Images of one directory, decoded once and resized to a square.
class Dataset {
 public:
  // Empty or missing directories raise ConfigError naming the path.
  static Dataset load(const std::filesystem::path& dir, int64_t image_size);
  static Dataset from_tensors(std::vector<torch::Tensor> images);

  int64_t size() const { return static_cast<int64_t>(images_.size()); }
  const torch::Tensor& image(int64_t i) const { return images_.at(static_cast<size_t>(i)); }
  const std::vector<std::filesystem::path>& paths() const { return paths_; }

 private:
  std::vector<torch::Tensor> images_;  // each (1, 3, S, S)
  std::vector<std::filesystem::path> paths_;
};

struct Batch {
  torch::Tensor contents;  // (n, 3, crop, crop)
  torch::Tensor styles;
};

// A pure function of (seed, step): a seeded shuffle picks n images from each
// dataset (cycling when a dataset has fewer than n) and each gets its own
// seeded crop.
Batch sample_batch(const Dataset& contents, const Dataset& styles, int64_t n, int64_t crop_size,
                   uint64_t seed, int64_t step);

class Trainer {
 public:
  // Builds every module under seeds derived from config.seed.
  explicit Trainer(const TrainConfig& config);

  // Rebuilds a trainer from a checkpoint's embedded configuration.
  static std::unique_ptr<Trainer> from_checkpoint(const std::filesystem::path& path);

  LossBundle step(const Batch& batch);

  // Inference: eval mode, no autograd.
  torch::Tensor stylize(const torch::Tensor& content, const torch::Tensor& style);

  // Every parameter group (generator, discriminator, projection heads, frozen
  // encoders), both optimizers, the step counter and the configuration text.
  void save(const std::filesystem::path& path) const;
  // Requires a matching config hash.
  void load(const std::filesystem::path& path);

  int64_t steps_done() const { return step_; }
  const TrainConfig& config() const { return config_; }

  VggEncoder& perceptual() { return vgg_; }
  Generator& generator() { return generator_; }
  Discriminator& discriminator() { return discriminator_; }
  ProjectionHeads& projection_heads() { return heads_; }
  InstanceEmbedder& embedder() { return *embedder_; }

  // Loss components without any parameter update.
  LossComponents components(const Batch& batch, bool with_grad);

 private:
  std::string serialize() const;
  void deserialize(const std::string& payload);

  TrainConfig config_;
  VggEncoder vgg_{nullptr};
  Generator generator_{nullptr};
  Discriminator discriminator_{nullptr};
  ProjectionHeads heads_{nullptr};
  std::unique_ptr<InstanceEmbedder> embedder_;
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
  int64_t step_ = 0;
};

// One JSON object per line: step plus every loss field of the bundle.
std::string metrics_record(int64_t step, const LossBundle& bundle);

struct TrainingSummary {
  int64_t steps = 0;  // total steps done, including any resumed ones
  LossBundle last;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
};

using StepCallback = std::function<void(int64_t step, const LossBundle& bundle)>;

// Loads both datasets, resumes if config.resume is set, runs until
// config.steps total steps, appends to <out_dir>/metrics.jsonl and writes
// <out_dir>/checkpoint_<step>.ckpt periodically plus <out_dir>/final.ckpt.
TrainingSummary run_training(const TrainConfig& config, const StepCallback& on_step = {});

}  // namespace scinet
