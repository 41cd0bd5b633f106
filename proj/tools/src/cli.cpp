#include "scinet/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "scinet/config.hpp"
#include "scinet/errors.hpp"
#include "scinet/imaging.hpp"
#include "scinet/training.hpp"
#include "scinet/verify.hpp"

namespace scinet::cli {

namespace fs = std::filesystem;

namespace {

constexpr int64_t kGutter = 4;

fs::path resolve_checkpoint(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* dir = std::getenv(kCheckpointDirEnv); dir && *dir) {
    return fs::path(dir) / "final.ckpt";
  }
  throw ConfigError(std::string("no checkpoint given: pass --checkpoint or set ") + kCheckpointDirEnv);
}

void print_bundle(std::ostream& out, const LossBundle& b) {
  out << "total=" << b.total << " content=" << b.content << " style=" << b.style
      << " identity=" << b.identity << " adversarial_g=" << b.adversarial_g
      << " adversarial_d=" << b.adversarial_d << " contrastive=" << b.contrastive;
}

int cmd_train(const std::string& config_path, std::ostream& out) {
  const auto config = load_config(config_path);
  const int64_t every = std::max<int64_t>(1, config.steps / 10);
  auto summary = run_training(config, [&](int64_t step, const LossBundle& b) {
    if (step % every == 0 || step == config.steps) {
      out << "step " << step << "/" << config.steps << " ";
      print_bundle(out, b);
      out << std::endl;
    }
  });
  out << "finished " << summary.steps << " steps\nfinal losses: ";
  print_bundle(out, summary.last);
  out << "\ncheckpoint: " << summary.checkpoint.string() << "\nmetrics: " << summary.metrics.string()
      << "\n";
  return kExitOk;
}

int cmd_stylize(const std::string& content_path, const std::string& style_path,
                const std::string& checkpoint, const std::string& out_path, std::ostream& out) {
  auto trainer = Trainer::from_checkpoint(resolve_checkpoint(checkpoint));
  auto content = load_image(content_path);
  auto style = load_image(style_path);
  auto result = trainer->stylize(content, style);
  check_finite(result, "stylized output");
  const fs::path target(out_path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  save_image(result, target);
  out << "wrote " << target.string() << " (" << result.size(2) << "x" << result.size(3) << ")\n";
  return kExitOk;
}

int cmd_verify(double epsilon, uint64_t seed, std::ostream& out) {
  VerifyOptions opts;
  opts.epsilon = epsilon;
  opts.seed = seed;
  const auto results = run_verification(opts);
  out << format_report(results);
  for (const auto& r : results) {
    if (!r.passed) return kExitFailure;
  }
  return kExitOk;
}

int cmd_grid(const std::string& contents_dir, const std::string& styles_dir,
             const std::string& checkpoint, const std::string& out_dir, std::ostream& out) {
  const auto content_paths = list_images(contents_dir);
  const auto style_paths = list_images(styles_dir);
  if (content_paths.empty()) throw ConfigError("no PNG/JPEG images in " + contents_dir);
  if (style_paths.empty()) throw ConfigError("no PNG/JPEG images in " + styles_dir);

  auto trainer = Trainer::from_checkpoint(resolve_checkpoint(checkpoint));
  const int64_t side = trainer->config().image_size;
  std::vector<torch::Tensor> contents;
  for (const auto& p : content_paths) contents.push_back(load_image(p, {side, side}));
  auto content_batch = torch::cat(contents, 0);

  fs::create_directories(out_dir);
  std::vector<std::vector<torch::Tensor>> rows;
  for (size_t i = 0; i < style_paths.size(); ++i) {
    auto style = load_image(style_paths[i], {side, side});
    auto stylized = trainer->stylize(content_batch, style.expand({content_batch.size(0), 3, side, side}));
    check_finite(stylized, "stylized output");
    rows.emplace_back();
    for (int64_t j = 0; j < stylized.size(0); ++j) {
      auto tile = stylized.narrow(0, j, 1);
      save_image(tile, fs::path(out_dir) / ("s" + std::to_string(i) + "_c" + std::to_string(j) + ".png"));
      rows.back().push_back(tile);
    }
  }
  auto sheet = contact_sheet(rows, kGutter);
  save_image(sheet, fs::path(out_dir) / "contact_sheet.png");
  out << "wrote " << style_paths.size() * content_paths.size() << " stylizations and contact_sheet.png ("
      << sheet.size(2) << "x" << sheet.size(3) << ") to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

torch::Tensor contact_sheet(const std::vector<std::vector<torch::Tensor>>& rows, int64_t gutter) {
  if (rows.empty() || rows.front().empty()) throw DimensionError("contact_sheet: no tiles");
  if (gutter < 0) throw DimensionError("contact_sheet: gutter must be >= 0");
  const auto& first = rows.front().front();
  check_nchw(first, "contact_sheet tile");
  const int64_t h = first.size(2);
  const int64_t w = first.size(3);
  const auto m = static_cast<int64_t>(rows.size());
  const auto n = static_cast<int64_t>(rows.front().size());
  auto sheet = torch::ones({1, 3, m * h + (m - 1) * gutter, n * w + (n - 1) * gutter});
  for (int64_t i = 0; i < m; ++i) {
    const auto& row = rows[static_cast<size_t>(i)];
    if (static_cast<int64_t>(row.size()) != n) throw DimensionError("contact_sheet: ragged rows");
    for (int64_t j = 0; j < n; ++j) {
      const auto& tile = row[static_cast<size_t>(j)];
      if (tile.dim() != 4 || tile.size(0) != 1 || tile.size(1) != 3 || tile.size(2) != h ||
          tile.size(3) != w) {
        throw DimensionError("contact_sheet: tiles must all be (1, 3, h, w)");
      }
      sheet.narrow(2, i * (h + gutter), h).narrow(3, j * (w + gutter), w).copy_(tile);
    }
  }
  return sheet;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"scinet: arbitrary style transfer with transformer-driven instance normalization"};
  app.name("scinet");
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "Train from a TOML-style config file");
  train->add_option("--config", config_path, "Config file")->required();

  std::string content, style, checkpoint, out_path;
  auto* stylize = app.add_subcommand("stylize", "Stylize one content image with one style image");
  stylize->add_option("--content", content, "Content image (PNG/JPEG)")->required();
  stylize->add_option("--style", style, "Style image (PNG/JPEG)")->required();
  stylize->add_option("--checkpoint", checkpoint,
                      std::string("Checkpoint file (default: $") + kCheckpointDirEnv + "/final.ckpt)");
  stylize->add_option("--out", out_path, "Output PNG")->required();

  double epsilon = kDefaultEpsilon;
  uint64_t seed = VerifyOptions{}.seed;
  auto* verify = app.add_subcommand("verify", "Run the embedded oracle checks");
  verify->add_option("--epsilon", epsilon, "Normalization epsilon under test")->capture_default_str();
  verify->add_option("--seed", seed, "Seed for the random test inputs")->capture_default_str();

  std::string contents_dir, styles_dir, grid_checkpoint, grid_out;
  auto* grid = app.add_subcommand("grid", "Stylize every content with every style");
  grid->add_option("--contents", contents_dir, "Directory of content images")->required();
  grid->add_option("--styles", styles_dir, "Directory of style images")->required();
  grid->add_option("--checkpoint", grid_checkpoint,
                   std::string("Checkpoint file (default: $") + kCheckpointDirEnv + "/final.ckpt)");
  grid->add_option("--out", grid_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(config_path, out);
    if (*stylize) return cmd_stylize(content, style, checkpoint, out_path, out);
    if (*verify) return cmd_verify(epsilon, seed, out);
    if (*grid) return cmd_grid(contents_dir, styles_dir, grid_checkpoint, grid_out, out);
  } catch (const TrainingError& e) {
    err << "error: training failed in " << e.component() << ": " << e.what() << "\n";
    return kExitFailure;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DecodeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IntegrityError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace scinet::cli
