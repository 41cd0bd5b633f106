#pragma once

// Image I/O, crops, the 4-level style pyramid and deterministic seeding.
//
// Images travel as plain torch tensors of shape (N, 3, H, W) with values in
// [0, 1]; feature maps share the (N, C, H, W) layout but are unbounded.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string_view>
#include <vector>

namespace scinet {

struct Size2 {
  int64_t height = 0;
  int64_t width = 0;

  friend bool operator==(const Size2&, const Size2&) = default;
};

// Throws DimensionError unless `t` is a 4-d tensor with every dimension >= 1.
void check_nchw(const torch::Tensor& t, std::string_view what);
// As check_nchw, plus C == 3 and all values in [0, 1].
void check_image(const torch::Tensor& t, std::string_view what);
// Throws DimensionError when `t` has NaN or Inf entries.
void check_finite(const torch::Tensor& t, std::string_view what);

// Decodes at the file's own resolution.
torch::Tensor load_image(const std::filesystem::path& path);
// Decodes, then bilinearly resizes to `size` when it differs. Missing or
// unreadable files raise IoError, undecodable bytes DecodeError.
torch::Tensor load_image(const std::filesystem::path& path, Size2 size);
void save_image(const torch::Tensor& img, const std::filesystem::path& path);

struct CropWindow {
  int64_t top = 0;
  int64_t left = 0;
  Size2 size;
};

// Offsets are a pure function of (image size, crop size, seed).
CropWindow crop_window(Size2 image, Size2 crop, uint64_t seed);
torch::Tensor random_crop(const torch::Tensor& img, Size2 crop, uint64_t seed);
torch::Tensor crop(const torch::Tensor& img, const CropWindow& window);

inline constexpr int kPyramidLevels = 4;

// levels[0] is the source image; every later level halves both spatial dims
// by 2x2 area averaging.
struct StylePyramid {
  std::array<torch::Tensor, kPyramidLevels> levels;

  const torch::Tensor& level(int one_based) const;
};

StylePyramid build_pyramid(const torch::Tensor& style);

// PNG/JPEG files directly inside `dir`, sorted lexicographically by filename.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

// Reseeds torch's default CPU generator for the lifetime of the guard and
// restores the previous generator state afterwards. Module construction runs
// under one of these so parameter initialization depends only on the seed.
class ScopedSeed {
 public:
  explicit ScopedSeed(uint64_t seed);
  ~ScopedSeed();

  ScopedSeed(const ScopedSeed&) = delete;
  ScopedSeed& operator=(const ScopedSeed&) = delete;

 private:
  std::unique_lock<std::recursive_mutex> lock_;
  torch::Tensor saved_state_;
};

// splitmix64 finalizer; used to derive independent sub-seeds.
uint64_t mix_seed(uint64_t seed, uint64_t stream);

}  // namespace scinet
