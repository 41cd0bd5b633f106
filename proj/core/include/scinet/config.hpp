#pragma once

// Training configuration and its TOML-style text form:
//
//   [data]      content_dir, style_dir, image_size, crop_size
//   [model]     width_divisor, heads, fuse_relu5, residual, epsilon, embed_dim,
//               proj_hidden, proj_dim, vgg_weights, embedder_script
//   [ablation]  no_adv, no_icl, no_scin, style_encoder
//   [train]     grid_size, steps, lr_generator, lr_discriminator, tau, icl_form,
//               identity_form, checkpoint_every, out_dir, resume, seed
//   [loss]      style, content, identity, adversarial, contrastive,
//               identity_pixel, identity_feature
//
// Values are integers, reals, true/false or double-quoted strings; '#' starts
// a comment. Unknown sections or keys are errors.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "scinet/contrastive.hpp"
#include "scinet/losses.hpp"
#include "scinet/model_config.hpp"

namespace scinet {

enum class IdentityForm {
  self_stylization,  // I_cc = G(I_c, I_c), I_ss = G(I_s, I_s)
  literal,           // distances of I_cs to both inputs
};

std::string_view to_string(IdentityForm form);
std::string_view to_string(IclForm form);
std::string_view to_string(EncoderResidual residual);

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;

  std::string content_dir;
  std::string style_dir;
  int64_t image_size = 64;  // every image is resized to a square of this side
  int64_t crop_size = 64;

  int64_t grid_size = 4;
  int64_t steps = 300;
  double lr_generator = 1e-4;
  double lr_discriminator = 1e-4;
  double tau = kDefaultTau;
  bool no_adv = false;
  bool no_icl = false;
  IclForm icl_form = IclForm::infonce;
  IdentityForm identity_form = IdentityForm::self_stylization;

  int64_t checkpoint_every = 100;  // 0 keeps only the final checkpoint
  std::string out_dir = "runs/default";
  std::string resume;  // checkpoint to continue from, empty for a fresh run
  uint64_t seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// `origin` prefixes diagnostics ("<origin>:<line>: ..."). Relative paths are
// kept as written.
TrainConfig parse_config(std::string_view text, const std::string& origin = "<config>");

// Reads and parses a file; relative paths inside it resolve against the
// file's directory.
TrainConfig load_config(const std::filesystem::path& path);

// Canonical text; parse_config(to_text(c)) reproduces c.
std::string to_text(const TrainConfig& config);

// FNV-1a over everything that changes the parameter set or the objective's
// structure: model architecture and the ablation switches.
uint64_t config_hash(const TrainConfig& config);

}  // namespace scinet
