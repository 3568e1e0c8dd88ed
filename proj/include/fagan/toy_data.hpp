#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "fagan/attributes.hpp"
#include "fagan/dataset.hpp"
#include "fagan/image.hpp"

namespace fagan::toy {

// {color: red/green/blue, sleeve: long/short}, n = 5, two groups.
AttributeSchema schema();

struct Sample {
  RawImage image;
  AttributeVector attributes;
};

// A centered shirt-like silhouette on a light background. Position, size and
// shade jitter are drawn from `rng`.
RawImage draw_garment(int color, int sleeve, std::mt19937_64& rng, int size = 64);

// Attributes drawn uniformly per group.
std::vector<Sample> generate(std::size_t count, std::uint64_t seed, int size = 64);

TensorDataset to_dataset(const std::vector<Sample>& samples, std::int64_t image_size);

// Writes images/<i>.png, manifest.csv and schema.json under `dir`.
void write(const std::vector<Sample>& samples, const std::filesystem::path& dir);

}  // namespace fagan::toy
