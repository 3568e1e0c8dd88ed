#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>

#include <torch/types.h>

#include "fagan/networks.hpp"

namespace fagan {

enum class OptimizerKind { kAdam, kSgd };
OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ParamState {
  std::int64_t step = 0;
  torch::Tensor exp_avg;     // undefined for SGD
  torch::Tensor exp_avg_sq;  // undefined for SGD
};

// Moment estimates keyed by parameter name, one table per partition.
struct OptimizerState {
  std::array<std::map<std::string, ParamState>, 5> partitions;

  std::map<std::string, ParamState>& of(Partition p) {
    return partitions[static_cast<int>(p)];
  }
  const std::map<std::string, ParamState>& of(Partition p) const {
    return partitions[static_cast<int>(p)];
  }
  OptimizerState clone() const;
};

using Scope = std::set<Partition>;

struct UpdateResult {
  std::array<double, 5> grad_norm{};  // zero outside scope
  double loss = 0.0;
};

// Differentiates `loss` with respect to the trainable tensors of every
// partition in `scope` and applies one optimizer step to them. Tensors outside
// the scope are never written. Throws ConfigError on an empty scope and
// NonFiniteError (before any write) when the loss or a gradient is not finite.
UpdateResult scoped_update(ParameterStore& store, const torch::Tensor& loss,
                           const Scope& scope, OptimizerState& state,
                           const OptimizerConfig& config);

}  // namespace fagan
