#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/types.h>

#include "fagan/attributes.hpp"
#include "fagan/checkpoint.hpp"
#include "fagan/dataset.hpp"
#include "fagan/networks.hpp"
#include "fagan/objectives.hpp"
#include "fagan/optimizer.hpp"

namespace fagan {

// Which partitions the edit-classification objective L_C(x_b_hat) may update:
// the generator alone, or encoder and generator together (AttGAN scoping).
enum class ScopingMode { kFashionAttGan, kAttGan };
ScopingMode parse_scoping_mode(std::string_view name);
std::string_view to_string(ScopingMode mode);

struct TrainConfig {
  double lambda1 = 100.0;  // L_rec weight in the encoder/generator objective
  double lambda2 = 1.0;    // L_C(x_a_hat) weight in the critic objective
  double lambda3 = 1.0;    // L_C(x_b_hat) weight in the generator-only step
  std::int64_t batch_size = 32;
  std::int64_t total_steps = 5000;
  std::uint64_t seed = 0;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  ScopingMode scoping_mode = ScopingMode::kFashionAttGan;
  GeneratorLossForm g_loss_form = GeneratorLossForm::kSaturating;
  TargetPolicy p_attr = TargetPolicy::kBatchPermutation;
  std::string feature_extractor = "identity";
  std::int64_t checkpoint_interval = 1000;

  void validate() const;  // throws ConfigError
  OptimizerConfig optimizer_config() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& doc);
};

struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
};

// Flat key-value document holding TrainConfig and NetworkConfig fields by
// name. Unknown keys are rejected.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

// SHA-256 (hex) over the trajectory-relevant configuration and the schema.
std::string config_fingerprint(const NetworkConfig& network,
                               const TrainConfig& train,
                               const AttributeSchema& schema);

enum class SubStep {
  kForward,          // z, x_a_hat, x_b_hat computed
  kCriticUpdate,     // trunk, d_head, c_head updated
  kAutoencoderUpdate,// encoder, generator updated
  kEditUpdate,       // generator (or encoder+generator) updated on L_C(x_b_hat)
};

// Batch tensors of the current step, in the store's dtype.
struct StepContext {
  torch::Tensor x;  // x_a
  torch::Tensor a;
  torch::Tensor b;
};

struct StepOptions {
  // Skip the L_C(x_b_hat) update entirely (its loss is still reported).
  bool skip_edit_update = false;
  std::function<void(SubStep, const ParameterStore&, const StepContext&)> observer;
};

struct StepMetrics {
  std::uint64_t step = 0;
  LossReport losses;
  std::array<double, 5> grad_norm{};  // per partition, over every sub-step
  double wall_time = 0.0;             // seconds
  bool aborted = false;
  std::string abort_reason;

  nlohmann::json to_json() const;
};

// Owns the parameters and optimizer state for one training run and executes
// the four sub-steps of an iteration in order.
class Trainer {
 public:
  Trainer(NetworkConfig network, TrainConfig train, AttributeSchema schema);
  Trainer(NetworkConfig network, TrainConfig train, AttributeSchema schema,
          ParameterStore initial);

  StepMetrics train_step(const Batch& batch, const StepOptions& options = {});

  const ParameterStore& store() const { return store_; }
  ParameterStore& store() { return store_; }
  const OptimizerState& optimizer_state() const { return optimizer_; }
  std::uint64_t step() const { return step_; }
  const std::string& fingerprint() const { return fingerprint_; }
  const NetworkConfig& network_config() const { return network_; }
  const TrainConfig& train_config() const { return train_; }
  const AttributeSchema& schema() const { return schema_; }

  Checkpoint checkpoint() const;
  // Throws FingerprintMismatch when the checkpoint was produced under
  // different configs.
  void restore(const Checkpoint& checkpoint);

 private:
  StepMetrics run_step(const Batch& batch, const StepOptions& options);

  NetworkConfig network_;
  TrainConfig train_;
  AttributeSchema schema_;
  std::string fingerprint_;
  FeatureExtractor phi_;
  ParameterStore store_;
  OptimizerState optimizer_;
  std::mt19937_64 rng_;
  std::uint64_t step_ = 0;
};

struct FitOptions {
  // When set: metrics.jsonl is appended per step, checkpoints written every
  // checkpoint_interval steps and at the end (model.fagn).
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::filesystem::path> resume;
  std::optional<ParameterStore> initial;
  std::function<void(const StepMetrics&)> on_step;
};

struct FitResult {
  ParameterStore store;
  std::vector<StepMetrics> metrics;
  std::uint64_t final_step = 0;
};

// Runs train_step until train.total_steps over seed-shuffled batches. Throws
// NonFiniteError after 5 consecutive aborted steps.
FitResult fit(const TensorDataset& dataset, const AttributeSchema& schema,
              const NetworkConfig& network, const TrainConfig& train,
              const FitOptions& options = {});

inline constexpr int kMaxConsecutiveAborts = 5;

}  // namespace fagan
