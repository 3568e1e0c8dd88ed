#include "fagan/attributes.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "fagan/error.hpp"

namespace fagan {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string quote_csv(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && s[start] == ' ') ++start;
  return s.substr(start);
}

}  // namespace

AttributeSchema::AttributeSchema(std::vector<std::string> names,
                                 std::vector<AttributeGroup> groups)
    : names_(std::move(names)), groups_(std::move(groups)) {
  if (names_.empty()) throw SchemaError("schema has no attributes");
  std::set<std::string> seen;
  for (const auto& name : names_) {
    if (name.empty()) throw SchemaError("schema has an empty attribute name");
    if (!seen.insert(name).second)
      throw SchemaError("duplicate attribute name '" + name + "'");
  }
  constexpr std::size_t kUnassigned = static_cast<std::size_t>(-1);
  group_of_.assign(names_.size(), kUnassigned);
  std::set<std::string> group_names;
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    const auto& group = groups_[g];
    if (group.name.empty()) throw SchemaError("schema has an unnamed group");
    if (!group_names.insert(group.name).second)
      throw SchemaError("duplicate group name '" + group.name + "'");
    if (group.members.empty())
      throw SchemaError("group '" + group.name + "' is empty");
    for (std::size_t idx : group.members) {
      if (idx >= names_.size())
        throw SchemaError("group '" + group.name + "' references index " +
                          std::to_string(idx) + " outside [0, n)");
      if (group_of_[idx] != kUnassigned)
        throw SchemaError("attribute '" + names_[idx] +
                          "' belongs to more than one group");
      group_of_[idx] = g;
    }
  }
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (group_of_[i] == kUnassigned)
      throw SchemaError("attribute '" + names_[i] + "' is not in any group");
  }
}

AttributeSchema AttributeSchema::from_json(const nlohmann::json& doc) {
  try {
    std::vector<std::string> names =
        doc.at("attributes").get<std::vector<std::string>>();
    std::vector<AttributeGroup> groups;
    for (const auto& g : doc.at("groups")) {
      AttributeGroup group;
      group.name = g.at("name").get<std::string>();
      for (const auto& m : g.at("members")) {
        if (m.is_number_unsigned()) {
          group.members.push_back(m.get<std::size_t>());
        } else {
          const auto name = m.get<std::string>();
          auto it = std::find(names.begin(), names.end(), name);
          if (it == names.end())
            throw SchemaError("group '" + group.name +
                              "' references unknown attribute '" + name + "'");
          group.members.push_back(
              static_cast<std::size_t>(it - names.begin()));
        }
      }
      groups.push_back(std::move(group));
    }
    return AttributeSchema(std::move(names), std::move(groups));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed schema document: ") + e.what());
  }
}

AttributeSchema AttributeSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open schema file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("cannot parse schema file " + path.string() + ": " +
                      e.what());
  }
  return from_json(doc);
}

nlohmann::json AttributeSchema::to_json() const {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : groups_) {
    nlohmann::json members = nlohmann::json::array();
    for (std::size_t idx : g.members) members.push_back(names_[idx]);
    groups.push_back({{"name", g.name}, {"members", members}});
  }
  return {{"attributes", names_}, {"groups", groups}};
}

std::optional<std::size_t> AttributeSchema::index_of(
    std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

const AttributeGroup* AttributeSchema::find_group(std::string_view name) const {
  for (const auto& g : groups_) {
    if (g.name == name) return &g;
  }
  return nullptr;
}

std::size_t AttributeVector::active_in(const AttributeGroup& group) const {
  for (std::size_t idx : group.members) {
    if (values_.at(idx) == 1) return idx;
  }
  throw SchemaError("group '" + group.name + "' has no active value");
}

void AttributeVector::set_active(const AttributeGroup& group,
                                 std::size_t target) {
  if (std::find(group.members.begin(), group.members.end(), target) ==
      group.members.end())
    throw SchemaError("attribute index " + std::to_string(target) +
                      " is not a member of group '" + group.name + "'");
  for (std::size_t idx : group.members) values_.at(idx) = 0;
  values_.at(target) = 1;
}

std::optional<std::string> find_violation(const AttributeSchema& schema,
                                          const AttributeVector& v) {
  if (v.size() != schema.size()) {
    return "attribute vector has " + std::to_string(v.size()) +
           " entries, schema expects " + std::to_string(schema.size());
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] > 1) {
      return "attribute '" + schema.names()[i] + "' has non-binary value " +
             std::to_string(v[i]);
    }
  }
  for (const auto& g : schema.groups()) {
    int active = 0;
    for (std::size_t idx : g.members) active += v[idx];
    if (active != 1) {
      return "group '" + g.name + "' must have exactly one active value, found " +
             std::to_string(active);
    }
  }
  return std::nullopt;
}

void validate(const AttributeSchema& schema, const AttributeVector& v) {
  if (auto msg = find_violation(schema, v)) throw SchemaError(*msg);
}

std::vector<DatasetExample> parse_manifest(std::istream& in,
                                           const AttributeSchema& schema) {
  std::string line;
  std::size_t line_no = 0;
  // Header.
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (line_no == 0 || trim(line).empty())
    throw ManifestError("manifest is empty");
  if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  const auto header = split_csv_line(trim(line));
  if (header.size() != schema.size() + 1 || trim(header[0]) != "image") {
    throw ManifestError("line " + std::to_string(line_no) +
                        ": header must be 'image' followed by the " +
                        std::to_string(schema.size()) + " schema attributes");
  }
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (trim(header[i + 1]) != schema.names()[i]) {
      throw ManifestError("line " + std::to_string(line_no) + ": header column " +
                          std::to_string(i + 2) + " is '" + header[i + 1] +
                          "', schema expects '" + schema.names()[i] + "'");
    }
  }

  std::vector<DatasetExample> examples;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() != schema.size() + 1) {
      throw ManifestError(where + ": expected " +
                          std::to_string(schema.size() + 1) + " fields, got " +
                          std::to_string(fields.size()));
    }
    if (trim(fields[0]).empty())
      throw ManifestError(where + ": empty image reference");
    std::vector<std::uint8_t> values(schema.size());
    for (std::size_t i = 0; i < schema.size(); ++i) {
      const auto f = trim(fields[i + 1]);
      if (f == "0") {
        values[i] = 0;
      } else if (f == "1") {
        values[i] = 1;
      } else {
        throw ManifestError(where + ": attribute '" + schema.names()[i] +
                            "' has non-binary value '" + f + "'");
      }
    }
    DatasetExample ex{trim(fields[0]), AttributeVector(std::move(values))};
    if (auto msg = find_violation(schema, ex.attributes))
      throw ManifestError(where + ": " + *msg);
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) throw ManifestError("manifest has no data rows");
  return examples;
}

std::vector<DatasetExample> parse_manifest(const std::filesystem::path& path,
                                           const AttributeSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  return parse_manifest(in, schema);
}

void write_manifest(std::ostream& out, const AttributeSchema& schema,
                    std::span<const DatasetExample> examples) {
  out << "image";
  for (const auto& name : schema.names()) out << ',' << quote_csv(name);
  out << '\n';
  for (const auto& ex : examples) {
    validate(schema, ex.attributes);
    out << quote_csv(ex.image_ref);
    for (std::size_t i = 0; i < ex.attributes.size(); ++i)
      out << ',' << static_cast<int>(ex.attributes[i]);
    out << '\n';
  }
}

void write_manifest(const std::filesystem::path& path,
                    const AttributeSchema& schema,
                    std::span<const DatasetExample> examples) {
  std::ofstream out(path);
  if (!out) throw ManifestError("cannot write manifest " + path.string());
  write_manifest(out, schema, examples);
}

TargetPolicy parse_target_policy(std::string_view name) {
  if (name == "batch_permutation") return TargetPolicy::kBatchPermutation;
  if (name == "uniform_per_group") return TargetPolicy::kUniformPerGroup;
  throw ConfigError("unknown target attribute policy '" + std::string(name) +
                    "'");
}

std::string_view to_string(TargetPolicy policy) {
  switch (policy) {
    case TargetPolicy::kBatchPermutation:
      return "batch_permutation";
    case TargetPolicy::kUniformPerGroup:
      return "uniform_per_group";
  }
  throw ConfigError("unknown target attribute policy");
}

std::vector<AttributeVector> sample_target_attributes(
    std::span<const AttributeVector> batch, const AttributeSchema& schema,
    std::mt19937_64& rng, TargetPolicy policy) {
  if (batch.empty()) throw SchemaError("cannot sample targets for empty batch");
  for (const auto& a : batch) validate(schema, a);

  switch (policy) {
    case TargetPolicy::kBatchPermutation: {
      std::vector<std::size_t> order(batch.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      // Fisher-Yates.
      for (std::size_t i = order.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
      }
      std::vector<AttributeVector> out;
      out.reserve(batch.size());
      for (std::size_t idx : order) out.push_back(batch[idx]);
      return out;
    }
    case TargetPolicy::kUniformPerGroup: {
      std::vector<AttributeVector> out;
      out.reserve(batch.size());
      for (const auto& a : batch) {
        AttributeVector b = a;
        for (const auto& g : schema.groups()) {
          std::uniform_int_distribution<std::size_t> pick(0,
                                                          g.members.size() - 1);
          b.set_active(g, g.members[pick(rng)]);
        }
        out.push_back(std::move(b));
      }
      return out;
    }
  }
  throw ConfigError("unknown target attribute policy");
}

}  // namespace fagan
