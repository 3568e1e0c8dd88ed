#include "fagan/dataset.hpp"

#include <numeric>
#include <random>

#include "fagan/error.hpp"
#include "fagan/image.hpp"

namespace fagan {

std::vector<std::vector<std::size_t>> make_batches(std::size_t num_examples,
                                                   std::size_t batch_size,
                                                   std::uint64_t seed,
                                                   std::uint64_t epoch,
                                                   bool drop_last) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (num_examples == 0) throw ConfigError("cannot batch an empty dataset");
  if (drop_last && batch_size > num_examples)
    throw ConfigError("batch size " + std::to_string(batch_size) +
                      " exceeds dataset size " + std::to_string(num_examples) +
                      " with drop_last set");

  std::vector<std::size_t> order(num_examples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch),
                    static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < num_examples; start += batch_size) {
    const std::size_t end = std::min(start + batch_size, num_examples);
    if (drop_last && end - start < batch_size) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

torch::Tensor attributes_to_tensor(std::span<const AttributeVector> attrs,
                                   torch::ScalarType dtype) {
  if (attrs.empty()) throw ShapeError("no attribute vectors");
  const auto n = static_cast<std::int64_t>(attrs.front().size());
  auto out = torch::zeros({static_cast<std::int64_t>(attrs.size()), n},
                          torch::kFloat64);
  auto acc = out.accessor<double, 2>();
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    if (static_cast<std::int64_t>(attrs[i].size()) != n)
      throw ShapeError("attribute vectors of differing length");
    for (std::int64_t j = 0; j < n; ++j)
      acc[static_cast<std::int64_t>(i)][j] = attrs[i][static_cast<std::size_t>(j)];
  }
  return out.to(dtype);
}

Batch TensorDataset::gather(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ShapeError("empty batch");
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  Batch batch;
  batch.images = images.index_select(
      0, torch::tensor(idx, torch::TensorOptions().dtype(torch::kLong)));
  for (std::size_t i : indices) batch.attribute_vectors.push_back(attributes.at(i));
  batch.attributes = attributes_to_tensor(batch.attribute_vectors);
  batch.indices.assign(indices.begin(), indices.end());
  return batch;
}

TensorDataset load_dataset(std::span<const DatasetExample> examples,
                           const std::filesystem::path& base_dir,
                           std::int64_t image_size) {
  if (examples.empty()) throw ManifestError("dataset is empty");
  TensorDataset ds;
  ds.images = torch::empty(
      {static_cast<std::int64_t>(examples.size()), 3, image_size, image_size},
      torch::kFloat32);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::filesystem::path ref(examples[i].image_ref);
    if (ref.is_relative()) ref = base_dir / ref;
    ds.images[static_cast<std::int64_t>(i)].copy_(
        preprocess_image(load_image(ref), image_size));
    ds.attributes.push_back(examples[i].attributes);
  }
  return ds;
}

BatchSchedule::BatchSchedule(std::size_t num_examples, std::size_t batch_size,
                             std::uint64_t seed, bool drop_last)
    : num_examples_(num_examples),
      batch_size_(batch_size),
      seed_(seed),
      drop_last_(drop_last) {
  batches_per_epoch_ =
      make_batches(num_examples, batch_size, seed, 0, drop_last).size();
}

std::vector<std::size_t> BatchSchedule::indices_for_step(std::uint64_t step) {
  const std::uint64_t epoch = step / batches_per_epoch_;
  if (epoch != cached_epoch_) {
    cached_ = make_batches(num_examples_, batch_size_, seed_, epoch, drop_last_);
    cached_epoch_ = epoch;
  }
  return cached_[step % batches_per_epoch_];
}

}  // namespace fagan
