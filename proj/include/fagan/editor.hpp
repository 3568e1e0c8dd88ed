#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <torch/types.h>

#include "fagan/attributes.hpp"
#include "fagan/checkpoint.hpp"
#include "fagan/dataset.hpp"
#include "fagan/image.hpp"
#include "fagan/networks.hpp"

namespace fagan {

// A trained model as needed at inference time.
struct Model {
  NetworkConfig network;
  AttributeSchema schema;
  ParameterStore store;
  std::string fingerprint;
};

// Reads a model checkpoint written by the trainer; the embedded configuration
// must reproduce the stored fingerprint.
Model load_model(const std::filesystem::path& path);

struct AttributeEdit {
  std::string group;
  std::string value;
};

// Parses "group=value".
AttributeEdit parse_attribute_edit(std::string_view text);

struct EditRequest {
  torch::Tensor image;  // (3, H, W) in [-1, 1]
  std::optional<AttributeVector> source;
  std::vector<AttributeEdit> edits;
};

struct EditResult {
  torch::Tensor image;  // (3, H, W)
  AttributeVector source;
  AttributeVector target;
};

struct SweepGrid {
  std::vector<torch::Tensor> images;  // original, reconstruction, one per value
  std::vector<std::string> labels;
};

// b = a with each edited group moved to its target value. Throws EditError for
// an unknown group or value, a value outside its group, or two edits on one
// group.
AttributeVector resolve_target(const AttributeSchema& schema,
                               const AttributeVector& source,
                               std::span<const AttributeEdit> edits);

// Thresholds logits at probability 0.5, then repairs every group that is not
// one-hot by taking the group's argmax.
AttributeVector attributes_from_logits(const AttributeSchema& schema,
                                       const torch::Tensor& logits);

// Inference-time editing over a read-only model. All methods are const and
// safe to call concurrently.
class Editor {
 public:
  explicit Editor(const Model& model);

  // G(E(x), a) with running normalization statistics.
  torch::Tensor reconstruct(const torch::Tensor& image,
                            const AttributeVector& source) const;
  EditResult edit_image(const EditRequest& request) const;
  SweepGrid attribute_sweep(const torch::Tensor& image,
                            const AttributeVector& source) const;
  // Source attributes predicted by the model's own classifier.
  AttributeVector predict_attributes(const torch::Tensor& image) const;

  // Batched G(E(x), attrs) for evaluation, (m, 3, H, W) x (m, n).
  torch::Tensor generate_batch(const torch::Tensor& images,
                               const torch::Tensor& attributes) const;

  const AttributeSchema& schema() const { return model_.schema; }
  const NetworkConfig& network() const { return model_.network; }

 private:
  torch::Tensor to_batch(const torch::Tensor& image) const;
  Model model_;  // tensors are shared, never written
};

// Columns side by side with a label band above each. The result is an
// 8-bit RGB image.
RawImage render_strip(const SweepGrid& grid);

// Maps an image batch (m, 3, H, W) to attribute logits (m, n).
using AttributeEvaluator = std::function<torch::Tensor(const torch::Tensor&)>;

struct EditSample {
  torch::Tensor image;   // (3, H, W) edited image
  AttributeVector target;
  std::vector<std::size_t> edited_groups;  // indices into schema.groups()
};

// Fraction of samples whose evaluator per-group argmax equals the target in
// every edited group. Argmax ties resolve to the first index.
double attribute_match_rate(const AttributeEvaluator& evaluator,
                            const AttributeSchema& schema,
                            std::span<const EditSample> samples);

// Classifier trained from scratch on real images, independent of any GAN.
struct Evaluator {
  NetworkConfig network;
  AttributeSchema schema;
  ParameterStore store;  // trunk and c_head only
  std::string fingerprint;

  torch::Tensor logits(const torch::Tensor& images) const;
  AttributeEvaluator as_function() const;
};

struct EvaluatorTrainConfig {
  std::int64_t steps = 1500;
  std::int64_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1234;
};

Evaluator train_evaluator(const TensorDataset& dataset,
                          const AttributeSchema& schema,
                          const NetworkConfig& network,
                          const EvaluatorTrainConfig& config = {});
void save_evaluator(const Evaluator& evaluator, const std::filesystem::path& path);
Evaluator load_evaluator(const std::filesystem::path& path);

struct EditEvaluation {
  double match_rate = 0.0;
  std::vector<double> group_match_rate;  // per schema group
  double reconstruction_mae = 0.0;       // mean |x - G(E(x), a)| in [-1, 1] units
  std::size_t num_edits = 0;
};

// For every image, every single-group edit to each other value of the group.
EditEvaluation evaluate_edits(const Editor& editor, const AttributeEvaluator& evaluator,
                              const TensorDataset& dataset);

}  // namespace fagan
