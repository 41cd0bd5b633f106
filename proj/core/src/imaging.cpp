#include "scinet/imaging.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "scinet/errors.hpp"

namespace scinet {

namespace {

std::string shape_string(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading image file: " + path.string());
  return bytes;
}

std::recursive_mutex& seed_mutex() {
  static std::recursive_mutex m;
  return m;
}

}  // namespace

void check_nchw(const torch::Tensor& t, std::string_view what) {
  if (!t.defined() || t.dim() != 4) {
    throw DimensionError(std::string(what) + ": expected an (N, C, H, W) tensor, got " +
                         (t.defined() ? shape_string(t) : std::string("undefined")));
  }
  for (int64_t d : t.sizes()) {
    if (d < 1) throw DimensionError(std::string(what) + ": empty dimension in " + shape_string(t));
  }
}

void check_image(const torch::Tensor& t, std::string_view what) {
  check_nchw(t, what);
  if (t.size(1) != 3) {
    throw DimensionError(std::string(what) + ": expected 3 channels, got " + shape_string(t));
  }
  check_finite(t, what);
  torch::NoGradGuard no_grad;
  if (t.min().item<double>() < 0.0 || t.max().item<double>() > 1.0) {
    throw DimensionError(std::string(what) + ": image values must lie in [0, 1]");
  }
}

void check_finite(const torch::Tensor& t, std::string_view what) {
  torch::NoGradGuard no_grad;
  if (!torch::isfinite(t).all().item<bool>()) {
    throw DimensionError(std::string(what) + ": tensor contains NaN or Inf");
  }
}

torch::Tensor load_image(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw IoError("image file does not exist: " + path.string());
  }
  const auto bytes = read_bytes(path);
  cv::Mat bgr;
  if (!bytes.empty()) {
    try {
      bgr = cv::imdecode(cv::Mat(1, static_cast<int>(bytes.size()), CV_8UC1,
                                 const_cast<unsigned char*>(bytes.data())),
                         cv::IMREAD_COLOR);
    } catch (const cv::Exception&) {
      bgr.release();
    }
  }
  if (bgr.empty() || bgr.type() != CV_8UC3) {
    throw DecodeError("not a decodable PNG/JPEG image: " + path.string());
  }

  const int64_t h = bgr.rows;
  const int64_t w = bgr.cols;
  auto hwc = torch::from_blob(bgr.data, {h, w, 3}, {static_cast<int64_t>(bgr.step[0]), 3, 1},
                              torch::kUInt8);
  // BGR -> RGB, HWC -> CHW
  auto img = hwc.flip({2}).permute({2, 0, 1}).to(torch::kFloat32).div(255.0).unsqueeze(0);
  return img.contiguous();
}

torch::Tensor load_image(const std::filesystem::path& path, Size2 size) {
  if (size.height < 1 || size.width < 1) {
    throw DimensionError("load_image: target size must be positive");
  }
  auto img = load_image(path);
  if (img.size(2) != size.height || img.size(3) != size.width) {
    namespace F = torch::nn::functional;
    img = F::interpolate(img, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{size.height, size.width})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
    img = img.clamp(0.0, 1.0);
  }
  return img;
}

void save_image(const torch::Tensor& img, const std::filesystem::path& path) {
  check_nchw(img, "save_image");
  if (img.size(0) != 1 || img.size(1) != 3) {
    throw DimensionError("save_image: expected a single 3-channel image, got " + shape_string(img));
  }
  check_finite(img, "save_image");
  torch::NoGradGuard no_grad;
  auto hwc = img[0]
                 .detach()
                 .to(torch::kFloat64)
                 .clamp(0.0, 1.0)
                 .mul(255.0)
                 .round()
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .flip({2})
                 .contiguous();
  cv::Mat bgr(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3,
              hwc.data_ptr<uint8_t>());
  std::vector<unsigned char> encoded;
  if (!cv::imencode(".png", bgr, encoded)) {
    throw IoError("PNG encoding failed for " + path.string());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image file: " + path.string());
  out.write(reinterpret_cast<const char*>(encoded.data()),
            static_cast<std::streamsize>(encoded.size()));
  if (!out) throw IoError("failed writing image file: " + path.string());
}

CropWindow crop_window(Size2 image, Size2 crop, uint64_t seed) {
  if (crop.height < 1 || crop.width < 1 || crop.height > image.height ||
      crop.width > image.width) {
    throw DimensionError("crop " + std::to_string(crop.height) + "x" + std::to_string(crop.width) +
                         " does not fit image " + std::to_string(image.height) + "x" +
                         std::to_string(image.width));
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int64_t> top(0, image.height - crop.height);
  std::uniform_int_distribution<int64_t> left(0, image.width - crop.width);
  CropWindow w;
  w.top = top(rng);
  w.left = left(rng);
  w.size = crop;
  return w;
}

torch::Tensor crop(const torch::Tensor& img, const CropWindow& window) {
  check_nchw(img, "crop");
  if (window.top < 0 || window.left < 0 || window.top + window.size.height > img.size(2) ||
      window.left + window.size.width > img.size(3)) {
    throw DimensionError("crop window lies outside the image");
  }
  return img.narrow(2, window.top, window.size.height)
      .narrow(3, window.left, window.size.width)
      .contiguous();
}

torch::Tensor random_crop(const torch::Tensor& img, Size2 size, uint64_t seed) {
  check_nchw(img, "random_crop");
  return crop(img, crop_window({img.size(2), img.size(3)}, size, seed));
}

const torch::Tensor& StylePyramid::level(int one_based) const {
  if (one_based < 1 || one_based > kPyramidLevels) {
    throw ConfigError("pyramid level must be in 1.." + std::to_string(kPyramidLevels));
  }
  return levels[static_cast<size_t>(one_based - 1)];
}

StylePyramid build_pyramid(const torch::Tensor& style) {
  check_nchw(style, "build_pyramid");
  if (style.size(2) % 8 != 0 || style.size(3) % 8 != 0) {
    throw DimensionError("build_pyramid: style height and width must be divisible by 8, got " +
                         shape_string(style));
  }
  StylePyramid p;
  p.levels[0] = style;
  for (size_t i = 1; i < p.levels.size(); ++i) {
    p.levels[i] = torch::avg_pool2d(p.levels[i - 1], {2, 2}, {2, 2});
  }
  return p;
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw IoError("dataset directory does not exist: " + dir.string());
  }
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

ScopedSeed::ScopedSeed(uint64_t seed) : lock_(seed_mutex()) {
  auto gen = at::detail::getDefaultCPUGenerator();
  saved_state_ = gen.get_state();
  gen.set_current_seed(seed);
}

ScopedSeed::~ScopedSeed() {
  auto gen = at::detail::getDefaultCPUGenerator();
  gen.set_state(saved_state_);
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace scinet
