#include "fagan/objectives.hpp"

#include <cmath>
#include <random>

#include <torch/torch.h>

#include "fagan/error.hpp"

namespace fagan {
namespace {

torch::Tensor clamp_probability(const torch::Tensor& p) {
  return p.clamp(kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
}

void check_scores(const torch::Tensor& scores, std::string_view who) {
  if (scores.dim() != 1)
    throw ShapeError(std::string(who) + ": expected a vector of scores");
  if (scores.size(0) == 0) throw ShapeError(std::string(who) + ": empty batch");
}

}  // namespace

FeatureExtractor FeatureExtractor::identity() {
  FeatureExtractor phi;
  phi.name_ = "identity";
  return phi;
}

FeatureExtractor FeatureExtractor::random_conv(std::uint64_t seed, int layers,
                                               std::int64_t channels) {
  if (layers < 1 || channels < 1)
    throw ConfigError("random_conv feature extractor needs layers, channels >= 1");
  FeatureExtractor phi;
  phi.name_ = "random_conv";
  std::mt19937_64 rng(seed);
  std::int64_t in = 3;
  for (int l = 0; l < layers; ++l) {
    const double bound = std::sqrt(1.0 / static_cast<double>(in * 9));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(static_cast<std::size_t>(channels * in * 9));
    for (auto& v : values) v = dist(rng);
    phi.weights_.push_back(
        torch::tensor(values, torch::kFloat64).reshape({channels, in, 3, 3}));
    in = channels;
  }
  return phi;
}

FeatureExtractor FeatureExtractor::from_name(std::string_view name,
                                             std::uint64_t seed) {
  if (name == "identity") return identity();
  if (name == "random_conv") return random_conv(seed);
  throw ConfigError("unknown feature extractor '" + std::string(name) + "'");
}

torch::Tensor FeatureExtractor::operator()(const torch::Tensor& images) const {
  torch::Tensor x = images;
  for (const auto& w : weights_) {
    x = torch::leaky_relu(
        torch::conv2d(x, w.to(images.scalar_type()), {}, 1, 1), 0.2);
  }
  return x;
}

torch::Tensor classification_loss(const torch::Tensor& logits,
                                  const torch::Tensor& targets) {
  if (logits.dim() != 2 || logits.sizes() != targets.sizes())
    throw ShapeError("classification_loss: logits " + c10::str(logits.sizes()) +
                     " and targets " + c10::str(targets.sizes()) +
                     " must be matching (m, n) matrices");
  if (logits.size(0) == 0) throw ShapeError("classification_loss: empty batch");
  const auto t = targets.to(logits.scalar_type());
  if (!torch::logical_or(t == 0, t == 1).all().item<bool>())
    throw ShapeError("classification_loss: targets must be 0 or 1");
  const auto p = clamp_probability(torch::sigmoid(logits));
  const auto bce = -(t * torch::log(p) + (1 - t) * torch::log(1 - p));
  return bce.sum(1).mean();
}

torch::Tensor adversarial_d_loss(const torch::Tensor& scores_real,
                                 const torch::Tensor& scores_fake) {
  check_scores(scores_real, "adversarial_d_loss");
  check_scores(scores_fake, "adversarial_d_loss");
  if (scores_real.size(0) != scores_fake.size(0))
    throw ShapeError("adversarial_d_loss: real and fake batches differ in size");
  const auto real = clamp_probability(scores_real);
  const auto fake = clamp_probability(scores_fake);
  return -(torch::log(real) + torch::log(1 - fake)).mean();
}

GeneratorLossForm parse_generator_loss_form(std::string_view name) {
  if (name == "saturating") return GeneratorLossForm::kSaturating;
  if (name == "non_saturating") return GeneratorLossForm::kNonSaturating;
  throw ConfigError("unknown generator loss form '" + std::string(name) + "'");
}

std::string_view to_string(GeneratorLossForm form) {
  switch (form) {
    case GeneratorLossForm::kSaturating:
      return "saturating";
    case GeneratorLossForm::kNonSaturating:
      return "non_saturating";
  }
  throw ConfigError("unknown generator loss form");
}

torch::Tensor adversarial_g_loss(const torch::Tensor& scores_fake,
                                 GeneratorLossForm form) {
  check_scores(scores_fake, "adversarial_g_loss");
  const auto fake = clamp_probability(scores_fake);
  switch (form) {
    case GeneratorLossForm::kSaturating:
      return torch::log(1 - fake).mean();
    case GeneratorLossForm::kNonSaturating:
      return -torch::log(fake).mean();
  }
  throw ConfigError("unknown generator loss form");
}

torch::Tensor reconstruction_loss(const FeatureExtractor& phi,
                                  const torch::Tensor& x_a,
                                  const torch::Tensor& x_hat) {
  if (x_a.sizes() != x_hat.sizes())
    throw ShapeError("reconstruction_loss: shapes " + c10::str(x_a.sizes()) +
                     " and " + c10::str(x_hat.sizes()) + " differ");
  if (x_a.dim() < 2 || x_a.size(0) == 0)
    throw ShapeError("reconstruction_loss: expected a non-empty batch");
  const auto diff = phi(x_a) - phi(x_hat);
  return diff.pow(2).flatten(1).mean(1).mean();
}

bool LossReport::all_finite() const {
  return std::isfinite(adv_d) && std::isfinite(adv_g) &&
         std::isfinite(cls_real) && std::isfinite(cls_edit) &&
         std::isfinite(rec);
}

}  // namespace fagan
