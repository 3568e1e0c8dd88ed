#include "fagan/toy_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>

#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "fagan/error.hpp"

namespace fagan::toy {
namespace {

constexpr std::array<std::array<double, 3>, 3> kBaseColors = {{
    {200.0, 40.0, 40.0},   // red
    {40.0, 170.0, 60.0},   // green
    {40.0, 70.0, 200.0},   // blue
}};

std::vector<cv::Point> transform(std::initializer_list<cv::Point2d> pts, double cx,
                                 double cy, double scale, double unit) {
  std::vector<cv::Point> out;
  for (const auto& p : pts) {
    out.emplace_back(static_cast<int>(std::lround((cx + (p.x - 32.0) * scale) * unit)),
                     static_cast<int>(std::lround((cy + (p.y - 32.0) * scale) * unit)));
  }
  return out;
}

}  // namespace

AttributeSchema schema() {
  return AttributeSchema({"red", "green", "blue", "long", "short"},
                         {{"color", {0, 1, 2}}, {"sleeve", {3, 4}}});
}

RawImage draw_garment(int color, int sleeve, std::mt19937_64& rng, int size) {
  if (color < 0 || color > 2 || sleeve < 0 || sleeve > 1)
    throw SchemaError("toy garment: color in [0,3), sleeve in [0,2)");
  std::uniform_real_distribution<double> jitter(-2.0, 2.0);
  std::uniform_real_distribution<double> scale_dist(0.9, 1.1);
  std::uniform_real_distribution<double> shade_dist(0.75, 1.1);
  std::uniform_real_distribution<double> channel_dist(-15.0, 15.0);
  std::uniform_real_distribution<double> bg_dist(236.0, 250.0);

  const double cx = 32.0 + jitter(rng);
  const double cy = 32.0 + jitter(rng);
  const double scale = scale_dist(rng);
  const double shade = shade_dist(rng);
  std::array<double, 3> rgb{};
  for (int c = 0; c < 3; ++c)
    rgb[c] = std::clamp(kBaseColors[color][c] * shade + channel_dist(rng), 0.0, 255.0);
  const double bg = bg_dist(rng);
  const double unit = size / 64.0;

  cv::Mat canvas(size, size, CV_8UC3, cv::Scalar(bg, bg, bg));
  const cv::Scalar fill(rgb[0], rgb[1], rgb[2]);  // canvas is RGB

  // Torso.
  cv::fillConvexPoly(canvas, transform({{21, 18}, {43, 18}, {43, 52}, {21, 52}}, cx, cy,
                                       scale, unit),
                     fill, cv::LINE_AA);
  // Sleeves, mirrored.
  if (sleeve == 0) {  // long
    cv::fillConvexPoly(canvas, transform({{21, 18}, {14, 21}, {11, 50}, {17, 50}, {21, 28}},
                                         cx, cy, scale, unit),
                       fill, cv::LINE_AA);
    cv::fillConvexPoly(canvas, transform({{43, 18}, {50, 21}, {53, 50}, {47, 50}, {43, 28}},
                                         cx, cy, scale, unit),
                       fill, cv::LINE_AA);
  } else {  // short
    cv::fillConvexPoly(canvas, transform({{21, 18}, {12, 25}, {16, 30}, {21, 27}}, cx, cy,
                                         scale, unit),
                       fill, cv::LINE_AA);
    cv::fillConvexPoly(canvas, transform({{43, 18}, {52, 25}, {48, 30}, {43, 27}}, cx, cy,
                                         scale, unit),
                       fill, cv::LINE_AA);
  }
  // Neckline.
  const auto neck = transform({{32, 18}}, cx, cy, scale, unit).front();
  cv::circle(canvas, neck, static_cast<int>(std::lround(5.0 * scale * unit)),
             cv::Scalar(bg, bg, bg), cv::FILLED, cv::LINE_AA);

  RawImage out;
  out.width = size;
  out.height = size;
  out.channels = 3;
  out.pixels.assign(canvas.data, canvas.data + canvas.total() * 3);
  return out;
}

std::vector<Sample> generate(std::size_t count, std::uint64_t seed, int size) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> color_dist(0, 2);
  std::uniform_int_distribution<int> sleeve_dist(0, 1);
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int color = color_dist(rng);
    const int sleeve = sleeve_dist(rng);
    std::vector<std::uint8_t> attrs(5, 0);
    attrs[static_cast<std::size_t>(color)] = 1;
    attrs[static_cast<std::size_t>(3 + sleeve)] = 1;
    out.push_back({draw_garment(color, sleeve, rng, size), AttributeVector(attrs)});
  }
  return out;
}

TensorDataset to_dataset(const std::vector<Sample>& samples, std::int64_t image_size) {
  if (samples.empty()) throw ManifestError("no toy samples");
  TensorDataset ds;
  ds.images = torch::empty(
      {static_cast<std::int64_t>(samples.size()), 3, image_size, image_size},
      torch::kFloat32);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ds.images[static_cast<std::int64_t>(i)].copy_(
        preprocess_image(samples[i].image, image_size));
    ds.attributes.push_back(samples[i].attributes);
  }
  return ds;
}

void write(const std::vector<Sample>& samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::vector<DatasetExample> examples;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string ref = "images/" + std::to_string(i) + ".png";
    save_png(samples[i].image, dir / ref);
    examples.push_back({ref, samples[i].attributes});
  }
  const auto s = schema();
  write_manifest(dir / "manifest.csv", s, examples);
  std::ofstream out(dir / "schema.json");
  out << s.to_json().dump(2) << '\n';
}

}  // namespace fagan::toy
