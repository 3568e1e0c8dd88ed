#include "fagan/networks.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <set>

#include <ATen/ATen.h>
#include <torch/torch.h>

#include "fagan/error.hpp"

namespace fagan {
namespace {

constexpr std::int64_t kKernel = 4;
constexpr std::int64_t kStride = 2;
constexpr std::int64_t kPadding = 1;

std::string layer_name(std::string_view partition, std::int64_t index,
                       std::string_view leaf) {
  return std::string(partition) + "." + std::to_string(index) + "." +
         std::string(leaf);
}

class Initializer {
 public:
  Initializer(std::uint64_t seed, torch::ScalarType dtype)
      : rng_(seed), dtype_(dtype) {}

  torch::Tensor uniform(std::vector<std::int64_t> shape, double fan_in) {
    const double bound = std::sqrt(1.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::int64_t count = 1;
    for (auto s : shape) count *= s;
    std::vector<double> values(static_cast<std::size_t>(count));
    for (auto& v : values) v = dist(rng_);
    return torch::tensor(values, torch::kFloat64).reshape(shape).to(dtype_);
  }
  torch::Tensor zeros(std::vector<std::int64_t> shape) const {
    return torch::zeros(shape, dtype_);
  }
  torch::Tensor ones(std::vector<std::int64_t> shape) const {
    return torch::ones(shape, dtype_);
  }

 private:
  std::mt19937_64 rng_;
  torch::ScalarType dtype_;
};

void add_norm(ParameterGroup& g, std::string_view partition, std::int64_t i,
              std::int64_t channels, const Initializer& init) {
  g.add(layer_name(partition, i, "norm.weight"), init.ones({channels}));
  g.add(layer_name(partition, i, "norm.bias"), init.zeros({channels}));
  g.add(layer_name(partition, i, "norm.running_mean"), init.zeros({channels}),
        false);
  g.add(layer_name(partition, i, "norm.running_var"), init.ones({channels}),
        false);
}

torch::Tensor apply_norm(const ParameterGroup& g, std::string_view partition,
                         std::int64_t i, const torch::Tensor& x,
                         const NetworkConfig& config, NormMode mode) {
  const auto& weight = g.at(layer_name(partition, i, "norm.weight"));
  const auto& bias = g.at(layer_name(partition, i, "norm.bias"));
  const auto& mean = g.at(layer_name(partition, i, "norm.running_mean"));
  const auto& var = g.at(layer_name(partition, i, "norm.running_var"));
  switch (mode) {
    case NormMode::kInference:
      return torch::batch_norm(x, weight, bias, mean, var, false,
                               config.norm_momentum, config.norm_eps, false);
    case NormMode::kBatchStats:
      return torch::batch_norm(x, weight, bias, {}, {}, true,
                               config.norm_momentum, config.norm_eps, false);
    case NormMode::kBatchStatsUpdate:
      return torch::batch_norm(x, weight, bias, mean, var, true,
                               config.norm_momentum, config.norm_eps, false);
  }
  throw ConfigError("unknown normalization mode");
}

void check_images(const NetworkConfig& config, const torch::Tensor& images,
                  std::string_view who) {
  if (images.dim() != 4 || images.size(1) != 3 ||
      images.size(2) != config.image_size ||
      images.size(3) != config.image_size) {
    throw ShapeError(std::string(who) + ": expected images of shape (m, 3, " +
                     std::to_string(config.image_size) + ", " +
                     std::to_string(config.image_size) + "), got " +
                     c10::str(images.sizes()));
  }
  if (images.size(0) < 1) throw ShapeError(std::string(who) + ": empty batch");
}

bool same_bytes(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.scalar_type() != b.scalar_type() || a.sizes() != b.sizes()) return false;
  const auto ca = a.detach().contiguous();
  const auto cb = b.detach().contiguous();
  return std::memcmp(ca.data_ptr(), cb.data_ptr(), ca.nbytes()) == 0;
}

}  // namespace

void NetworkConfig::validate() const {
  if (image_size < 1 || base_channels < 1 || latent_channels < 1 ||
      num_attributes < 1 || num_downsamples < 1)
    throw ConfigError("network sizes must be positive");
  if (num_downsamples > 16 || (image_size % (std::int64_t{1} << num_downsamples)) != 0)
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " is not divisible by 2^" + std::to_string(num_downsamples));
  if (negative_slope < 0.0) throw ConfigError("negative_slope must be >= 0");
  if (norm_momentum < 0.0 || norm_momentum > 1.0 || norm_eps <= 0.0)
    throw ConfigError("invalid normalization settings");
}

std::int64_t NetworkConfig::block_channels(std::int64_t i) const {
  return base_channels << i;
}

nlohmann::json NetworkConfig::to_json() const {
  return {{"image_size", image_size},
          {"base_channels", base_channels},
          {"num_downsamples", num_downsamples},
          {"latent_channels", latent_channels},
          {"num_attributes", num_attributes},
          {"negative_slope", negative_slope},
          {"norm_momentum", norm_momentum},
          {"norm_eps", norm_eps}};
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& doc) {
  NetworkConfig c;
  try {
    c.image_size = doc.value("image_size", c.image_size);
    c.base_channels = doc.value("base_channels", c.base_channels);
    c.num_downsamples = doc.value("num_downsamples", c.num_downsamples);
    c.latent_channels = doc.value("latent_channels", c.latent_channels);
    c.num_attributes = doc.value("num_attributes", c.num_attributes);
    c.negative_slope = doc.value("negative_slope", c.negative_slope);
    c.norm_momentum = doc.value("norm_momentum", c.norm_momentum);
    c.norm_eps = doc.value("norm_eps", c.norm_eps);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad network config: ") + e.what());
  }
  return c;
}

std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::kEncoder:
      return "encoder";
    case Partition::kGenerator:
      return "generator";
    case Partition::kTrunk:
      return "trunk";
    case Partition::kDHead:
      return "d_head";
    case Partition::kCHead:
      return "c_head";
  }
  throw ConfigError("unknown partition");
}

Partition parse_partition(std::string_view name) {
  for (auto p : kAllPartitions) {
    if (to_string(p) == name) return p;
  }
  throw ConfigError("unknown partition '" + std::string(name) + "'");
}

void ParameterGroup::add(std::string name, torch::Tensor value, bool trainable) {
  if (index_.count(name) != 0)
    throw ConfigError("duplicate parameter name '" + name + "'");
  value = value.detach();
  if (trainable) value.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), trainable});
}

const NamedTensor* ParameterGroup::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

const torch::Tensor& ParameterGroup::at(std::string_view name) const {
  const auto* entry = find(name);
  if (entry == nullptr)
    throw ConfigError("missing parameter '" + std::string(name) + "'");
  return entry->value;
}

std::vector<torch::Tensor> ParameterGroup::trainable() const {
  std::vector<torch::Tensor> out;
  for (const auto& e : entries_) {
    if (e.trainable) out.push_back(e.value);
  }
  return out;
}

std::int64_t ParameterGroup::numel() const {
  std::int64_t total = 0;
  for (const auto& e : entries_) total += e.value.numel();
  return total;
}

ParameterStore ParameterStore::clone() const {
  ParameterStore out;
  for (auto p : kAllPartitions) {
    for (const auto& e : group(p).entries())
      out.group(p).add(e.name, e.value.detach().clone(), e.trainable);
  }
  return out;
}

ParameterStore ParameterStore::to(torch::ScalarType dtype) const {
  ParameterStore out;
  for (auto p : kAllPartitions) {
    for (const auto& e : group(p).entries())
      out.group(p).add(e.name, e.value.detach().to(dtype).clone(), e.trainable);
  }
  return out;
}

void ParameterStore::check_disjoint() const {
  std::set<std::string, std::less<>> names;
  for (auto p : kAllPartitions) {
    for (const auto& e : group(p).entries()) {
      if (!names.insert(e.name).second)
        throw ConfigError("parameter '" + e.name +
                          "' appears in more than one partition");
    }
  }
}

bool bitwise_equal(const ParameterGroup& a, const ParameterGroup& b) {
  if (a.entries().size() != b.entries().size()) return false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const auto& ea = a.entries()[i];
    const auto& eb = b.entries()[i];
    if (ea.name != eb.name || ea.trainable != eb.trainable ||
        !same_bytes(ea.value, eb.value))
      return false;
  }
  return true;
}

bool bitwise_equal(const ParameterStore& a, const ParameterStore& b) {
  for (auto p : kAllPartitions) {
    if (!bitwise_equal(a.group(p), b.group(p))) return false;
  }
  return true;
}

ParameterStore init_params(const NetworkConfig& config, std::uint64_t seed,
                           torch::ScalarType dtype) {
  config.validate();
  Initializer init(seed, dtype);
  ParameterStore store;
  const std::int64_t d = config.num_downsamples;
  const double k2 = static_cast<double>(kKernel * kKernel);

  auto& enc = store.group(Partition::kEncoder);
  std::int64_t in = 3;
  for (std::int64_t i = 0; i < d; ++i) {
    const std::int64_t out = i + 1 == d ? config.latent_channels
                                        : config.block_channels(i);
    enc.add(layer_name("encoder", i, "conv.weight"),
            init.uniform({out, in, kKernel, kKernel}, static_cast<double>(in) * k2));
    enc.add(layer_name("encoder", i, "conv.bias"), init.zeros({out}));
    add_norm(enc, "encoder", i, out, init);
    in = out;
  }

  auto& gen = store.group(Partition::kGenerator);
  in = config.latent_channels + config.num_attributes;
  for (std::int64_t j = 0; j < d; ++j) {
    const std::int64_t out =
        j + 1 == d ? 3 : config.block_channels(d - 2 - j);
    // Each transposed-convolution output sums in * (k / stride)^2 inputs.
    const double fan_in =
        static_cast<double>(in) * k2 / static_cast<double>(kStride * kStride);
    gen.add(layer_name("generator", j, "deconv.weight"),
            init.uniform({in, out, kKernel, kKernel}, fan_in));
    gen.add(layer_name("generator", j, "deconv.bias"), init.zeros({out}));
    if (j + 1 < d) add_norm(gen, "generator", j, out, init);
    in = out;
  }

  auto& trunk = store.group(Partition::kTrunk);
  in = 3;
  for (std::int64_t i = 0; i < d; ++i) {
    const std::int64_t out = config.block_channels(i);
    trunk.add(layer_name("trunk", i, "conv.weight"),
              init.uniform({out, in, kKernel, kKernel}, static_cast<double>(in) * k2));
    trunk.add(layer_name("trunk", i, "conv.bias"), init.zeros({out}));
    in = out;
  }
  const std::int64_t features =
      config.block_channels(d - 1) * config.latent_size() * config.latent_size();

  auto& dh = store.group(Partition::kDHead);
  dh.add("d_head.linear.weight",
         init.uniform({1, features}, static_cast<double>(features)));
  dh.add("d_head.linear.bias", init.zeros({1}));

  auto& ch = store.group(Partition::kCHead);
  ch.add("c_head.linear.weight",
         init.uniform({config.num_attributes, features},
                      static_cast<double>(features)));
  ch.add("c_head.linear.bias", init.zeros({config.num_attributes}));

  store.check_disjoint();
  return store;
}

torch::Tensor encode(const ParameterGroup& encoder, const NetworkConfig& config,
                     const torch::Tensor& images, NormMode mode) {
  check_images(config, images, "encode");
  torch::Tensor x = images;
  for (std::int64_t i = 0; i < config.num_downsamples; ++i) {
    x = torch::conv2d(x, encoder.at(layer_name("encoder", i, "conv.weight")),
                      encoder.at(layer_name("encoder", i, "conv.bias")),
                      kStride, kPadding);
    x = apply_norm(encoder, "encoder", i, x, config, mode);
    x = torch::leaky_relu(x, config.negative_slope);
  }
  return x;
}

torch::Tensor generate(const ParameterGroup& generator,
                       const NetworkConfig& config, const torch::Tensor& latent,
                       const torch::Tensor& attributes, NormMode mode) {
  const auto hz = config.latent_size();
  if (latent.dim() != 4 || latent.size(1) != config.latent_channels ||
      latent.size(2) != hz || latent.size(3) != hz)
    throw ShapeError("generate: latent has shape " + c10::str(latent.sizes()));
  if (attributes.dim() != 2 || attributes.size(1) != config.num_attributes)
    throw ShapeError("generate: expected attributes of length " +
                     std::to_string(config.num_attributes) + ", got shape " +
                     c10::str(attributes.sizes()));
  if (attributes.size(0) != latent.size(0))
    throw ShapeError("generate: latent and attribute batch sizes differ");

  const auto planes = attributes.to(latent.scalar_type())
                          .view({attributes.size(0), attributes.size(1), 1, 1})
                          .expand({-1, -1, hz, hz});
  torch::Tensor x = torch::cat({latent, planes}, 1);
  const std::int64_t d = config.num_downsamples;
  for (std::int64_t j = 0; j < d; ++j) {
    x = torch::conv_transpose2d(
        x, generator.at(layer_name("generator", j, "deconv.weight")),
        generator.at(layer_name("generator", j, "deconv.bias")), kStride,
        kPadding);
    if (j + 1 < d) {
      x = apply_norm(generator, "generator", j, x, config, mode);
      x = torch::relu(x);
    }
  }
  return torch::tanh(x);
}

torch::Tensor trunk_features(const ParameterGroup& trunk,
                             const NetworkConfig& config,
                             const torch::Tensor& images) {
  check_images(config, images, "trunk");
  torch::Tensor x = images;
  for (std::int64_t i = 0; i < config.num_downsamples; ++i) {
    x = torch::conv2d(x, trunk.at(layer_name("trunk", i, "conv.weight")),
                      trunk.at(layer_name("trunk", i, "conv.bias")), kStride,
                      kPadding);
    x = torch::leaky_relu(x, config.negative_slope);
  }
  return x.flatten(1);
}

torch::Tensor discriminator_head(const ParameterGroup& d_head,
                                 const torch::Tensor& features) {
  return torch::sigmoid(torch::linear(features, d_head.at("d_head.linear.weight"),
                                      d_head.at("d_head.linear.bias"))
                            .squeeze(1));
}

torch::Tensor classifier_head(const ParameterGroup& c_head,
                              const torch::Tensor& features) {
  return torch::linear(features, c_head.at("c_head.linear.weight"),
                       c_head.at("c_head.linear.bias"));
}

torch::Tensor discriminate(const ParameterGroup& trunk,
                           const ParameterGroup& d_head,
                           const NetworkConfig& config,
                           const torch::Tensor& images) {
  return discriminator_head(d_head, trunk_features(trunk, config, images));
}

torch::Tensor classify(const ParameterGroup& trunk, const ParameterGroup& c_head,
                       const NetworkConfig& config,
                       const torch::Tensor& images) {
  return classifier_head(c_head, trunk_features(trunk, config, images));
}

}  // namespace fagan
