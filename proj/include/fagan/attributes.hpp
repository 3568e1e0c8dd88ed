#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace fagan {

struct AttributeGroup {
  std::string name;
  std::vector<std::size_t> members;  // indices into AttributeSchema::names()

  friend bool operator==(const AttributeGroup&,
                         const AttributeGroup&) = default;
};

// Ordered attribute labels plus a partition of their indices into mutually
// exclusive groups (e.g. sleeve_length, color). Immutable once constructed.
class AttributeSchema {
 public:
  // Throws SchemaError when names are empty/duplicated or groups are not an
  // exact partition of [0, n).
  AttributeSchema(std::vector<std::string> names,
                  std::vector<AttributeGroup> groups);

  // Sidecar format:
  //   {"attributes": ["red", ...],
  //    "groups": [{"name": "color", "members": ["red", "green", "blue"]}, ...]}
  // Members may be given as attribute names or integer indices.
  static AttributeSchema from_json(const nlohmann::json& doc);
  static AttributeSchema load(const std::filesystem::path& path);
  nlohmann::json to_json() const;  // members as names, schema order

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<AttributeGroup>& groups() const { return groups_; }

  std::optional<std::size_t> index_of(std::string_view name) const;
  const AttributeGroup* find_group(std::string_view name) const;
  std::size_t group_of(std::size_t attribute_index) const {
    return group_of_[attribute_index];
  }

  friend bool operator==(const AttributeSchema&, const AttributeSchema&) =
      default;

 private:
  std::vector<std::string> names_;
  std::vector<AttributeGroup> groups_;
  std::vector<std::size_t> group_of_;
};

// Binary attribute vector, one-hot within each schema group.
class AttributeVector {
 public:
  AttributeVector() = default;
  explicit AttributeVector(std::vector<std::uint8_t> values)
      : values_(std::move(values)) {}

  std::size_t size() const { return values_.size(); }
  std::uint8_t operator[](std::size_t i) const { return values_[i]; }
  std::uint8_t& operator[](std::size_t i) { return values_[i]; }
  const std::vector<std::uint8_t>& values() const { return values_; }

  // Index of the active value inside `group`. Requires a valid vector.
  std::size_t active_in(const AttributeGroup& group) const;
  // Moves the group's one-hot onto attribute index `target`.
  void set_active(const AttributeGroup& group, std::size_t target);

  friend bool operator==(const AttributeVector&,
                         const AttributeVector&) = default;
  friend auto operator<=>(const AttributeVector&,
                          const AttributeVector&) = default;

 private:
  std::vector<std::uint8_t> values_;
};

// Empty when `v` satisfies the schema, otherwise a description of the first
// violation. Group violations name the group.
std::optional<std::string> find_violation(const AttributeSchema& schema,
                                          const AttributeVector& v);
// Throws SchemaError with the find_violation() message.
void validate(const AttributeSchema& schema, const AttributeVector& v);

struct DatasetExample {
  std::string image_ref;
  AttributeVector attributes;

  friend bool operator==(const DatasetExample&,
                         const DatasetExample&) = default;
};

// CSV manifest with header `image,<attr_0>,...,<attr_{n-1}>` in schema order.
// Errors (ManifestError) carry the 1-based line number.
std::vector<DatasetExample> parse_manifest(std::istream& in,
                                           const AttributeSchema& schema);
std::vector<DatasetExample> parse_manifest(const std::filesystem::path& path,
                                           const AttributeSchema& schema);
void write_manifest(std::ostream& out, const AttributeSchema& schema,
                    std::span<const DatasetExample> examples);
void write_manifest(const std::filesystem::path& path,
                    const AttributeSchema& schema,
                    std::span<const DatasetExample> examples);

enum class TargetPolicy { kBatchPermutation, kUniformPerGroup };

TargetPolicy parse_target_policy(std::string_view name);
std::string_view to_string(TargetPolicy policy);

// Draws target attributes b for a batch of source attributes a.
std::vector<AttributeVector> sample_target_attributes(
    std::span<const AttributeVector> batch, const AttributeSchema& schema,
    std::mt19937_64& rng, TargetPolicy policy = TargetPolicy::kBatchPermutation);

}  // namespace fagan
