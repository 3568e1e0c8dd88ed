#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <torch/types.h>

namespace fagan {

// Probability clamp used by every log-loss.
inline constexpr double kProbabilityEpsilon = 1e-7;

// Phi in the reconstruction loss. Never trained.
class FeatureExtractor {
 public:
  static FeatureExtractor identity();
  // Frozen stack of 3x3 convolutions with leaky rectifiers; weights drawn
  // from `seed`.
  static FeatureExtractor random_conv(std::uint64_t seed, int layers = 2,
                                      std::int64_t channels = 16);
  // "identity" or "random_conv".
  static FeatureExtractor from_name(std::string_view name, std::uint64_t seed);

  const std::string& name() const { return name_; }
  torch::Tensor operator()(const torch::Tensor& images) const;

 private:
  std::string name_;
  std::vector<torch::Tensor> weights_;  // empty for identity
};

// Batch mean of the per-sample sum over attributes of binary cross-entropy,
// computed from logits with probabilities clamped to [eps, 1 - eps].
torch::Tensor classification_loss(const torch::Tensor& logits,
                                  const torch::Tensor& targets);

// -(1/m) sum [log D(x_a) + log(1 - D(x_b_hat))]
torch::Tensor adversarial_d_loss(const torch::Tensor& scores_real,
                                 const torch::Tensor& scores_fake);

enum class GeneratorLossForm { kSaturating, kNonSaturating };
GeneratorLossForm parse_generator_loss_form(std::string_view name);
std::string_view to_string(GeneratorLossForm form);

// kSaturating: (1/m) sum log(1 - D(x_b_hat)); kNonSaturating: -(1/m) sum log D.
torch::Tensor adversarial_g_loss(
    const torch::Tensor& scores_fake,
    GeneratorLossForm form = GeneratorLossForm::kSaturating);

// Batch mean of ||Phi(x_a) - Phi(x_hat)||^2 / (feature elements per sample).
torch::Tensor reconstruction_loss(const FeatureExtractor& phi,
                                  const torch::Tensor& x_a,
                                  const torch::Tensor& x_hat);

struct LossReport {
  double adv_d = 0.0;
  double adv_g = 0.0;
  double cls_real = 0.0;  // L_C(x_a_hat)
  double cls_edit = 0.0;  // L_C(x_b_hat)
  double rec = 0.0;

  bool all_finite() const;
};

}  // namespace fagan
