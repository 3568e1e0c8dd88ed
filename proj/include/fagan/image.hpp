#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <torch/types.h>

namespace fagan {

// Interleaved 8-bit pixels, row-major, RGB channel order.
struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

// PNG or JPEG bytes to RGB. Throws ImageError when undecodable.
RawImage decode_image(std::span<const std::uint8_t> bytes);
RawImage load_image(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const RawImage& image);
void save_png(const RawImage& image, const std::filesystem::path& path);

// Resizes to image_size x image_size (area interpolation, skipped at native
// resolution) and maps v -> v / 127.5 - 1. Result: float32 tensor (3, H, W).
torch::Tensor preprocess_image(const RawImage& raw, std::int64_t image_size);

// Inverse of preprocess_image: v -> round((v + 1) * 127.5), clamped to
// [0, 255]. Accepts (3, H, W) of any floating dtype.
RawImage to_raw_image(const torch::Tensor& image);

}  // namespace fagan
