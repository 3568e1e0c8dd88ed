#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <torch/types.h>

#include "fagan/attributes.hpp"

namespace fagan {

// Index batches for one epoch. Order is a pure function of (seed, epoch).
// With drop_last every batch has exactly batch_size entries; throws
// ConfigError when batch_size is 0 or exceeds the dataset under drop_last.
std::vector<std::vector<std::size_t>> make_batches(std::size_t num_examples,
                                                   std::size_t batch_size,
                                                   std::uint64_t seed,
                                                   std::uint64_t epoch,
                                                   bool drop_last);

// Attributes as an (m, n) float tensor of 0/1 entries.
torch::Tensor attributes_to_tensor(std::span<const AttributeVector> attrs,
                                   torch::ScalarType dtype = torch::kFloat32);

struct Batch {
  torch::Tensor images;      // (m, 3, H, W) in [-1, 1]
  torch::Tensor attributes;  // (m, n) 0/1
  std::vector<AttributeVector> attribute_vectors;
  std::vector<std::size_t> indices;  // positions in the source dataset
};

// A fully decoded dataset held in memory.
struct TensorDataset {
  torch::Tensor images;  // (N, 3, H, W) float32
  std::vector<AttributeVector> attributes;

  std::size_t size() const { return attributes.size(); }
  Batch gather(std::span<const std::size_t> indices) const;
};

// Decodes and preprocesses every example. Relative image refs resolve
// against `base_dir`.
TensorDataset load_dataset(std::span<const DatasetExample> examples,
                           const std::filesystem::path& base_dir,
                           std::int64_t image_size);

// Maps a global step index to a batch: epoch = step / batches_per_epoch.
// Random access keeps resume-from-checkpoint on the same batch sequence.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t num_examples, std::size_t batch_size,
                std::uint64_t seed, bool drop_last = true);

  std::size_t batches_per_epoch() const { return batches_per_epoch_; }
  std::vector<std::size_t> indices_for_step(std::uint64_t step);

 private:
  std::size_t num_examples_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool drop_last_;
  std::size_t batches_per_epoch_;
  std::uint64_t cached_epoch_ = ~std::uint64_t{0};
  std::vector<std::vector<std::size_t>> cached_;
};

}  // namespace fagan
