#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <torch/types.h>

namespace fagan {

struct NetworkConfig {
  std::int64_t image_size = 64;
  std::int64_t base_channels = 8;
  std::int64_t num_downsamples = 4;
  std::int64_t latent_channels = 64;
  std::int64_t num_attributes = 5;
  double negative_slope = 0.2;
  double norm_momentum = 0.1;
  double norm_eps = 1e-5;

  // Throws ConfigError.
  void validate() const;
  std::int64_t latent_size() const { return image_size >> num_downsamples; }
  // Channel width of block i (0-based) in the encoder and trunk.
  std::int64_t block_channels(std::int64_t i) const;

  nlohmann::json to_json() const;
  // Reads known keys from `doc`, keeping defaults for absent ones.
  static NetworkConfig from_json(const nlohmann::json& doc);

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

enum class Partition : std::uint8_t {
  kEncoder = 0,
  kGenerator = 1,
  kTrunk = 2,
  kDHead = 3,
  kCHead = 4,
};
inline constexpr std::array<Partition, 5> kAllPartitions = {
    Partition::kEncoder, Partition::kGenerator, Partition::kTrunk,
    Partition::kDHead, Partition::kCHead};

std::string_view to_string(Partition p);
Partition parse_partition(std::string_view name);

struct NamedTensor {
  std::string name;
  torch::Tensor value;
  bool trainable = true;  // false for normalization running statistics
};

// Ordered named tensors belonging to one partition.
class ParameterGroup {
 public:
  void add(std::string name, torch::Tensor value, bool trainable = true);
  const torch::Tensor& at(std::string_view name) const;
  const NamedTensor* find(std::string_view name) const;
  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<NamedTensor>& entries() { return entries_; }
  std::vector<torch::Tensor> trainable() const;
  bool empty() const { return entries_.empty(); }
  std::int64_t numel() const;

 private:
  std::vector<NamedTensor> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// theta_E, theta_G, the trunk shared by D and C, and the two heads.
// theta_D = trunk + d_head, theta_C = trunk + c_head.
class ParameterStore {
 public:
  ParameterGroup& group(Partition p) { return groups_[static_cast<int>(p)]; }
  const ParameterGroup& group(Partition p) const {
    return groups_[static_cast<int>(p)];
  }
  const ParameterGroup& encoder() const { return group(Partition::kEncoder); }
  const ParameterGroup& generator() const { return group(Partition::kGenerator); }
  const ParameterGroup& trunk() const { return group(Partition::kTrunk); }
  const ParameterGroup& d_head() const { return group(Partition::kDHead); }
  const ParameterGroup& c_head() const { return group(Partition::kCHead); }

  // Deep copy; trainable tensors keep requires_grad.
  ParameterStore clone() const;
  // Deep copy converted to `dtype`.
  ParameterStore to(torch::ScalarType dtype) const;
  // Throws ConfigError when names collide across partitions.
  void check_disjoint() const;

 private:
  std::array<ParameterGroup, 5> groups_;
};

// Bitwise equality of every tensor in the partition (names, shapes, dtypes,
// bytes).
bool bitwise_equal(const ParameterGroup& a, const ParameterGroup& b);
bool bitwise_equal(const ParameterStore& a, const ParameterStore& b);

// Weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)); biases zero; normalization
// scale one. Reproducible from `seed`.
ParameterStore init_params(const NetworkConfig& config, std::uint64_t seed,
                           torch::ScalarType dtype = torch::kFloat32);

// How batch normalization layers in E and G behave for one forward pass.
enum class NormMode {
  kInference,        // running statistics, no state change
  kBatchStats,       // batch statistics, running statistics untouched
  kBatchStatsUpdate  // batch statistics, running statistics updated in place
};

// (m, 3, S, S) -> (m, c_z, S / 2^d, S / 2^d)
torch::Tensor encode(const ParameterGroup& encoder, const NetworkConfig& config,
                     const torch::Tensor& images, NormMode mode);

// (m, c_z, h, w) x (m, n) -> (m, 3, S, S) in (-1, 1). Attributes are broadcast
// to h x w planes and concatenated with z before the first layer.
torch::Tensor generate(const ParameterGroup& generator,
                       const NetworkConfig& config, const torch::Tensor& latent,
                       const torch::Tensor& attributes, NormMode mode);

// Shared D/C trunk output, flattened to (m, features).
torch::Tensor trunk_features(const ParameterGroup& trunk,
                             const NetworkConfig& config,
                             const torch::Tensor& images);

// Real/fake probability per sample, (m,) in (0, 1).
torch::Tensor discriminate(const ParameterGroup& trunk,
                           const ParameterGroup& d_head,
                           const NetworkConfig& config,
                           const torch::Tensor& images);

// Attribute logits (m, n), no sigmoid.
torch::Tensor classify(const ParameterGroup& trunk, const ParameterGroup& c_head,
                       const NetworkConfig& config,
                       const torch::Tensor& images);

// Head outputs from already-computed trunk features.
torch::Tensor discriminator_head(const ParameterGroup& d_head,
                                 const torch::Tensor& features);
torch::Tensor classifier_head(const ParameterGroup& c_head,
                              const torch::Tensor& features);

}  // namespace fagan
