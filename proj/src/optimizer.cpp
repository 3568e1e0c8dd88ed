#include "fagan/optimizer.hpp"

#include <cmath>

#include <torch/torch.h>

#include "fagan/error.hpp"

namespace fagan {

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd";
}

OptimizerState OptimizerState::clone() const {
  OptimizerState out;
  for (std::size_t p = 0; p < partitions.size(); ++p) {
    for (const auto& [name, s] : partitions[p]) {
      ParamState c;
      c.step = s.step;
      if (s.exp_avg.defined()) c.exp_avg = s.exp_avg.clone();
      if (s.exp_avg_sq.defined()) c.exp_avg_sq = s.exp_avg_sq.clone();
      out.partitions[p].emplace(name, std::move(c));
    }
  }
  return out;
}

UpdateResult scoped_update(ParameterStore& store, const torch::Tensor& loss,
                           const Scope& scope, OptimizerState& state,
                           const OptimizerConfig& config) {
  if (scope.empty()) throw ConfigError("scoped_update: empty scope");
  if (loss.numel() != 1) throw ShapeError("scoped_update: loss must be scalar");

  UpdateResult result;
  result.loss = loss.item<double>();
  if (!std::isfinite(result.loss))
    throw NonFiniteError("scoped_update: loss is not finite");

  struct Target {
    Partition partition;
    NamedTensor* entry;
  };
  std::vector<Target> targets;
  std::vector<torch::Tensor> inputs;
  for (Partition p : scope) {
    for (auto& e : store.group(p).entries()) {
      if (!e.trainable) continue;
      targets.push_back({p, &e});
      inputs.push_back(e.value);
    }
  }
  if (inputs.empty()) throw ConfigError("scoped_update: scope has no parameters");

  std::vector<torch::Tensor> grads;
  if (loss.requires_grad()) {
    grads = torch::autograd::grad({loss}, inputs, /*grad_outputs=*/{},
                                  /*retain_graph=*/false,
                                  /*create_graph=*/false, /*allow_unused=*/true);
  } else {
    grads.resize(inputs.size());
  }

  std::array<double, 5> sq{};
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].defined()) grads[i] = torch::zeros_like(inputs[i]);
    const double s = grads[i].detach().pow(2).sum().item<double>();
    if (!std::isfinite(s))
      throw NonFiniteError("scoped_update: non-finite gradient for '" +
                           targets[i].entry->name + "'");
    sq[static_cast<int>(targets[i].partition)] += s;
  }
  for (std::size_t p = 0; p < sq.size(); ++p) result.grad_norm[p] = std::sqrt(sq[p]);

  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& param = targets[i].entry->value;
    const auto& g = grads[i];
    auto& ps = state.of(targets[i].partition)[targets[i].entry->name];
    ++ps.step;
    if (config.kind == OptimizerKind::kSgd) {
      param.add_(g, -config.learning_rate);
      continue;
    }
    if (!ps.exp_avg.defined()) {
      ps.exp_avg = torch::zeros_like(param);
      ps.exp_avg_sq = torch::zeros_like(param);
    }
    ps.exp_avg.mul_(config.beta1).add_(g, 1.0 - config.beta1);
    ps.exp_avg_sq.mul_(config.beta2).addcmul_(g, g, 1.0 - config.beta2);
    const double t = static_cast<double>(ps.step);
    const double bias1 = 1.0 - std::pow(config.beta1, t);
    const double bias2 = 1.0 - std::pow(config.beta2, t);
    const auto denom = (ps.exp_avg_sq.sqrt() / std::sqrt(bias2)).add_(config.eps);
    param.addcdiv_(ps.exp_avg, denom, -config.learning_rate / bias1);
  }
  return result;
}

}  // namespace fagan
