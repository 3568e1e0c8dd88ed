#pragma once

// Independent oracles and fixtures shared by the unit and acceptance tests.
// Oracles here use plain loops over std::vector<double> and never call the
// library's loss or network code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "fagan/attributes.hpp"
#include "fagan/dataset.hpp"
#include "fagan/networks.hpp"
#include "fagan/trainer.hpp"

namespace fagan::test_support {

inline constexpr double kEps = 1e-7;

inline double clamp_probability(double p) { return std::clamp(p, kEps, 1.0 - kEps); }
inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

using Matrix = std::vector<std::vector<double>>;

inline double bce_oracle(const Matrix& logits, const Matrix& targets) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < logits[i].size(); ++j) {
      const double p = clamp_probability(sigmoid(logits[i][j]));
      const double t = targets[i][j];
      row += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    }
    total += row;
  }
  return total / static_cast<double>(logits.size());
}

inline double adv_d_oracle(const std::vector<double>& real, const std::vector<double>& fake) {
  double total = 0.0;
  for (std::size_t i = 0; i < real.size(); ++i)
    total += std::log(clamp_probability(real[i])) + std::log(1.0 - clamp_probability(fake[i]));
  return -total / static_cast<double>(real.size());
}

inline double adv_g_oracle(const std::vector<double>& fake, bool saturating) {
  double total = 0.0;
  for (double s : fake) {
    const double p = clamp_probability(s);
    total += saturating ? std::log(1.0 - p) : -std::log(p);
  }
  return total / static_cast<double>(fake.size());
}

// Per-sample mean of squared differences, averaged over the batch.
inline double rec_oracle(const Matrix& a, const Matrix& b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a[i].size(); ++j) s += (a[i][j] - b[i][j]) * (a[i][j] - b[i][j]);
    total += s / static_cast<double>(a[i].size());
  }
  return total / static_cast<double>(a.size());
}

inline Matrix to_matrix(const torch::Tensor& t) {
  const auto c = t.to(torch::kFloat64).contiguous().view({t.size(0), -1});
  Matrix out(static_cast<std::size_t>(c.size(0)));
  const double* p = c.data_ptr<double>();
  for (std::int64_t i = 0; i < c.size(0); ++i)
    out[static_cast<std::size_t>(i)].assign(p + i * c.size(1), p + (i + 1) * c.size(1));
  return out;
}

inline std::vector<double> to_vector(const torch::Tensor& t) {
  const auto c = t.to(torch::kFloat64).contiguous().view({-1});
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

// Central differences of f with respect to every element of the float64
// tensor t, perturbing its storage in place.
inline std::vector<double> finite_difference(const std::function<double()>& f, torch::Tensor t,
                                             double step = 1e-5) {
  torch::NoGradGuard no_grad;
  auto flat = t.view({-1});
  double* p = flat.data_ptr<double>();
  std::vector<double> grad(static_cast<std::size_t>(flat.numel()));
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = p[i];
    p[i] = orig + step;
    const double up = f();
    p[i] = orig - step;
    const double down = f();
    p[i] = orig;
    grad[static_cast<std::size_t>(i)] = (up - down) / (2.0 * step);
  }
  return grad;
}

// ||a - b|| / max(||a||, ||b||); zero when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

inline double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

inline double max_abs_diff(const ParameterGroup& a, const ParameterGroup& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.entries().size(); ++i)
    worst = std::max(worst, max_abs_diff(a.entries()[i].value, b.entries()[i].value));
  return worst;
}

// Two groups "first" {x0, x1} and "second" {y0, y1}; n = 4.
inline AttributeSchema two_by_two_schema() {
  return AttributeSchema({"x0", "x1", "y0", "y1"}, {{"first", {0, 1}}, {"second", {2, 3}}});
}

// One group of two values; n = 2.
inline AttributeSchema micro_schema() { return AttributeSchema({"p", "q"}, {{"pair", {0, 1}}}); }

// 8x8 images, n = 2, base_channels = 4. Two stride-2 blocks keep the latent
// map at 2x2.
inline NetworkConfig micro_network() {
  NetworkConfig c;
  c.image_size = 8;
  c.base_channels = 4;
  c.num_downsamples = 2;
  c.latent_channels = 8;
  c.num_attributes = 2;
  return c;
}

inline TrainConfig micro_train(ScopingMode mode = ScopingMode::kFashionAttGan) {
  TrainConfig t;
  t.batch_size = 4;
  t.total_steps = 50;
  t.seed = 7;
  t.scoping_mode = mode;
  t.learning_rate = 1e-3;
  t.checkpoint_interval = 0;
  return t;
}

// Random images in [-1, 1] with one-hot attributes for `schema`.
inline TensorDataset random_dataset(const AttributeSchema& schema, std::int64_t count,
                                    std::int64_t image_size, std::uint64_t seed) {
  torch::manual_seed(seed);
  TensorDataset ds;
  ds.images = torch::rand({count, 3, image_size, image_size}, torch::kFloat64) * 2.0 - 1.0;
  std::mt19937_64 rng(seed);
  for (std::int64_t i = 0; i < count; ++i) {
    std::vector<std::uint8_t> v(schema.size(), 0);
    for (const auto& g : schema.groups()) {
      std::uniform_int_distribution<std::size_t> pick(0, g.members.size() - 1);
      v[g.members[pick(rng)]] = 1;
    }
    ds.attributes.emplace_back(std::move(v));
  }
  return ds;
}

inline Batch first_batch(const TensorDataset& ds, std::int64_t m) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(m));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return ds.gather(idx);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("fagan_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace fagan::test_support
