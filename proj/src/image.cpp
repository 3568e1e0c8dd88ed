#include "fagan/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fagan/error.hpp"

namespace fagan {
namespace {

RawImage from_bgr_mat(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  RawImage out;
  out.width = rgb.cols;
  out.height = rgb.rows;
  out.channels = 3;
  out.pixels.resize(static_cast<std::size_t>(rgb.rows) * rgb.cols * 3);
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<std::uint8_t>(y);
    std::copy(row, row + rgb.cols * 3,
              out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * rgb.cols * 3);
  }
  return out;
}

cv::Mat to_rgb_mat(const RawImage& image) {
  if (image.channels != 3)
    throw ImageError("expected a 3-channel image, got " +
                     std::to_string(image.channels));
  if (image.pixels.size() !=
      static_cast<std::size_t>(image.width) * image.height * 3)
    throw ImageError("pixel buffer does not match image dimensions");
  cv::Mat rgb(image.height, image.width, CV_8UC3,
              const_cast<std::uint8_t*>(image.pixels.data()));
  return rgb.clone();
}

}  // namespace

RawImage decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw ImageError("empty image payload");
  cv::Mat buffer(1, static_cast<int>(bytes.size()), CV_8UC1,
                 const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat decoded;
  try {
    decoded = cv::imdecode(buffer, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw ImageError(std::string("cannot decode image: ") + e.what());
  }
  if (decoded.empty()) throw ImageError("cannot decode image payload");
  return from_bgr_mat(decoded);
}

RawImage load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_image(bytes);
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const RawImage& image) {
  cv::Mat bgr;
  cv::cvtColor(to_rgb_mat(image), bgr, cv::COLOR_RGB2BGR);
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", bgr, out)) throw ImageError("PNG encoding failed");
  return out;
}

void save_png(const RawImage& image, const std::filesystem::path& path) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

torch::Tensor preprocess_image(const RawImage& raw, std::int64_t image_size) {
  if (raw.channels != 3)
    throw ImageError("expected 3 channels, got " + std::to_string(raw.channels));
  if (raw.width <= 0 || raw.height <= 0)
    throw ImageError("image has no pixels");
  cv::Mat rgb = to_rgb_mat(raw);
  const int size = static_cast<int>(image_size);
  if (rgb.cols != size || rgb.rows != size) {
    cv::Mat resized;
    cv::resize(rgb, resized, cv::Size(size, size), 0, 0, cv::INTER_AREA);
    rgb = resized;
  }
  auto out = torch::empty({3, image_size, image_size}, torch::kFloat32);
  auto acc = out.accessor<float, 3>();
  for (int y = 0; y < size; ++y) {
    const auto* row = rgb.ptr<std::uint8_t>(y);
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) {
        acc[c][y][x] = static_cast<float>(row[x * 3 + c] / 127.5 - 1.0);
      }
    }
  }
  return out;
}

RawImage to_raw_image(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3)
    throw ShapeError("expected a (3, H, W) image tensor");
  const auto data = image.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  const auto acc = data.accessor<double, 3>();
  RawImage out;
  out.height = static_cast<int>(image.size(1));
  out.width = static_cast<int>(image.size(2));
  out.channels = 3;
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::round((acc[c][y][x] + 1.0) * 127.5);
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return out;
}

}  // namespace fagan
