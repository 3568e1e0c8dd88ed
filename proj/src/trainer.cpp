#include "fagan/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <torch/torch.h>

#include "fagan/encoding.hpp"
#include "fagan/error.hpp"

namespace fagan {
namespace {

constexpr std::uint64_t kRngSalt = 0x9E3779B97F4A7C15ULL;

const std::set<std::string>& network_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k;
    const auto doc = NetworkConfig{}.to_json();
    for (const auto& item : doc.items()) k.insert(item.key());
    return k;
  }();
  return keys;
}

const std::set<std::string>& train_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k;
    const auto doc = TrainConfig{}.to_json();
    for (const auto& item : doc.items()) k.insert(item.key());
    return k;
  }();
  return keys;
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

void accumulate_norms(std::array<double, 5>& total, const UpdateResult& r) {
  for (std::size_t i = 0; i < total.size(); ++i)
    total[i] = std::sqrt(total[i] * total[i] + r.grad_norm[i] * r.grad_norm[i]);
}

}  // namespace

ScopingMode parse_scoping_mode(std::string_view name) {
  if (name == "fashion_attgan") return ScopingMode::kFashionAttGan;
  if (name == "attgan") return ScopingMode::kAttGan;
  throw ConfigError("unknown scoping mode '" + std::string(name) + "'");
}

std::string_view to_string(ScopingMode mode) {
  return mode == ScopingMode::kFashionAttGan ? "fashion_attgan" : "attgan";
}

void TrainConfig::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
    throw ConfigError("loss weights must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || adam_eps <= 0)
    throw ConfigError("invalid optimizer momentum parameters");
  if (checkpoint_interval < 0)
    throw ConfigError("checkpoint_interval must be non-negative");
  FeatureExtractor::from_name(feature_extractor, seed);
}

OptimizerConfig TrainConfig::optimizer_config() const {
  return {optimizer, learning_rate, beta1, beta2, adam_eps};
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lambda1", lambda1},
          {"lambda2", lambda2},
          {"lambda3", lambda3},
          {"batch_size", batch_size},
          {"total_steps", total_steps},
          {"seed", seed},
          {"learning_rate", learning_rate},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"optimizer", std::string(to_string(optimizer))},
          {"scoping_mode", std::string(to_string(scoping_mode))},
          {"g_loss_form", std::string(to_string(g_loss_form))},
          {"p_attr", std::string(to_string(p_attr))},
          {"feature_extractor", feature_extractor},
          {"checkpoint_interval", checkpoint_interval}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) {
  TrainConfig c;
  try {
    c.lambda1 = doc.value("lambda1", c.lambda1);
    c.lambda2 = doc.value("lambda2", c.lambda2);
    c.lambda3 = doc.value("lambda3", c.lambda3);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.total_steps = doc.value("total_steps", c.total_steps);
    c.seed = doc.value("seed", c.seed);
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.beta1 = doc.value("beta1", c.beta1);
    c.beta2 = doc.value("beta2", c.beta2);
    c.adam_eps = doc.value("adam_eps", c.adam_eps);
    if (doc.contains("optimizer"))
      c.optimizer = parse_optimizer_kind(doc.at("optimizer").get<std::string>());
    if (doc.contains("scoping_mode"))
      c.scoping_mode = parse_scoping_mode(doc.at("scoping_mode").get<std::string>());
    if (doc.contains("g_loss_form"))
      c.g_loss_form =
          parse_generator_loss_form(doc.at("g_loss_form").get<std::string>());
    if (doc.contains("p_attr"))
      c.p_attr = parse_target_policy(doc.at("p_attr").get<std::string>());
    c.feature_extractor = doc.value("feature_extractor", c.feature_extractor);
    c.checkpoint_interval = doc.value("checkpoint_interval", c.checkpoint_interval);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  return c;
}

RunConfig parse_run_config(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a key-value object");
  for (const auto& [key, _] : doc.items()) {
    if (network_keys().count(key) == 0 && train_keys().count(key) == 0)
      throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig rc{NetworkConfig::from_json(doc), TrainConfig::from_json(doc)};
  rc.network.validate();
  rc.train.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

nlohmann::json to_json(const RunConfig& config) {
  auto doc = config.network.to_json();
  doc.update(config.train.to_json());
  return doc;
}

std::string config_fingerprint(const NetworkConfig& network,
                               const TrainConfig& train,
                               const AttributeSchema& schema) {
  auto t = train.to_json();
  // Run length does not change the trajectory, so a run can be extended.
  t.erase("total_steps");
  t.erase("checkpoint_interval");
  const nlohmann::json doc = {
      {"network", network.to_json()}, {"train", t}, {"schema", schema.to_json()}};
  return sha256_hex(doc.dump());
}

nlohmann::json StepMetrics::to_json() const {
  nlohmann::json norms = nlohmann::json::object();
  for (auto p : kAllPartitions)
    norms[std::string(to_string(p))] = grad_norm[static_cast<int>(p)];
  nlohmann::json doc = {{"step", step},
                        {"adv_d", losses.adv_d},
                        {"adv_g", losses.adv_g},
                        {"cls_real", losses.cls_real},
                        {"cls_edit", losses.cls_edit},
                        {"rec", losses.rec},
                        {"grad_norm", norms},
                        {"wall_time", wall_time},
                        {"aborted", aborted}};
  if (aborted) doc["abort_reason"] = abort_reason;
  return doc;
}

Trainer::Trainer(NetworkConfig network, TrainConfig train, AttributeSchema schema)
    : Trainer(network, train, schema, init_params(network, train.seed)) {}

Trainer::Trainer(NetworkConfig network, TrainConfig train, AttributeSchema schema,
                 ParameterStore initial)
    : network_(std::move(network)),
      train_(std::move(train)),
      schema_(std::move(schema)),
      phi_(FeatureExtractor::identity()),
      store_(std::move(initial)),
      rng_(train_.seed ^ kRngSalt) {
  network_.validate();
  train_.validate();
  if (static_cast<std::size_t>(network_.num_attributes) != schema_.size())
    throw ConfigError("network num_attributes (" +
                      std::to_string(network_.num_attributes) +
                      ") does not match schema size (" +
                      std::to_string(schema_.size()) + ")");
  store_.check_disjoint();
  phi_ = FeatureExtractor::from_name(train_.feature_extractor, train_.seed);
  fingerprint_ = config_fingerprint(network_, train_, schema_);
}

StepMetrics Trainer::train_step(const Batch& batch, const StepOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  auto saved_store = store_.clone();
  auto saved_optimizer = optimizer_.clone();
  StepMetrics metrics;
  try {
    metrics = run_step(batch, options);
    if (!metrics.losses.all_finite()) throw NonFiniteError("non-finite loss");
  } catch (const NonFiniteError& e) {
    store_ = std::move(saved_store);
    optimizer_ = std::move(saved_optimizer);
    metrics = StepMetrics{};
    metrics.aborted = true;
    metrics.abort_reason = e.what();
  }
  metrics.step = step_++;
  metrics.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return metrics;
}

StepMetrics Trainer::run_step(const Batch& batch, const StepOptions& options) {
  const auto dtype = store_.encoder().entries().front().value.scalar_type();
  const auto m = batch.images.size(0);
  if (m < 1 || static_cast<std::size_t>(m) != batch.attribute_vectors.size())
    throw ShapeError("batch images and attribute vectors disagree in size");
  const auto x = batch.images.to(dtype);
  const auto a = attributes_to_tensor(batch.attribute_vectors, dtype);
  const auto b_vecs = sample_target_attributes(batch.attribute_vectors, schema_,
                                               rng_, train_.p_attr);
  const auto b = attributes_to_tensor(b_vecs, dtype);
  const auto opt = train_.optimizer_config();
  const StepContext context{x, a, b};
  auto notify = [&](SubStep s) {
    if (options.observer) options.observer(s, store_, context);
  };

  StepMetrics metrics;
  auto& losses = metrics.losses;

  // (i) z <- E(x_a), x_a_hat <- G(z, a), x_b_hat <- G(z, b)
  torch::Tensor x_a_hat;
  torch::Tensor x_b_hat;
  {
    torch::NoGradGuard no_grad;
    const auto z = encode(store_.encoder(), network_, x, NormMode::kBatchStats);
    x_a_hat = generate(store_.generator(), network_, z, a, NormMode::kBatchStats);
    x_b_hat = generate(store_.generator(), network_, z, b, NormMode::kBatchStats);
  }
  notify(SubStep::kForward);

  // (ii) theta_D, theta_C on L_adv_d + lambda2 * L_C(x_a_hat)
  {
    const auto features =
        trunk_features(store_.trunk(), network_, torch::cat({x, x_b_hat, x_a_hat}));
    const auto scores = discriminator_head(store_.d_head(), features.slice(0, 0, 2 * m));
    const auto logits = classifier_head(store_.c_head(), features.slice(0, 2 * m));
    const auto adv_d = adversarial_d_loss(scores.slice(0, 0, m), scores.slice(0, m));
    const auto cls_real = classification_loss(logits, a);
    losses.adv_d = adv_d.item<double>();
    losses.cls_real = cls_real.item<double>();
    const auto r = scoped_update(store_, adv_d + train_.lambda2 * cls_real,
                                 {Partition::kTrunk, Partition::kDHead, Partition::kCHead},
                                 optimizer_, opt);
    accumulate_norms(metrics.grad_norm, r);
  }
  notify(SubStep::kCriticUpdate);

  // (iii) theta_E, theta_G on L_adv_g + lambda1 * L_rec, against the updated D
  {
    const auto z = encode(store_.encoder(), network_, x, NormMode::kBatchStatsUpdate);
    const auto rec_img =
        generate(store_.generator(), network_, z, a, NormMode::kBatchStatsUpdate);
    const auto edit_img =
        generate(store_.generator(), network_, z, b, NormMode::kBatchStatsUpdate);
    const auto adv_g = adversarial_g_loss(
        discriminate(store_.trunk(), store_.d_head(), network_, edit_img),
        train_.g_loss_form);
    const auto rec = reconstruction_loss(phi_, x, rec_img);
    losses.adv_g = adv_g.item<double>();
    losses.rec = rec.item<double>();
    const auto r = scoped_update(store_, adv_g + train_.lambda1 * rec,
                                 {Partition::kEncoder, Partition::kGenerator},
                                 optimizer_, opt);
    accumulate_norms(metrics.grad_norm, r);
  }
  notify(SubStep::kAutoencoderUpdate);

  // (iv) lambda3 * L_C(x_b_hat): generator only, or encoder + generator
  {
    const bool generator_only = train_.scoping_mode == ScopingMode::kFashionAttGan;
    torch::Tensor z;
    if (generator_only || options.skip_edit_update) {
      torch::NoGradGuard no_grad;
      z = encode(store_.encoder(), network_, x, NormMode::kBatchStats);
    } else {
      z = encode(store_.encoder(), network_, x, NormMode::kBatchStats);
    }
    if (options.skip_edit_update) {
      torch::NoGradGuard no_grad;
      const auto edit_img =
          generate(store_.generator(), network_, z, b, NormMode::kBatchStats);
      losses.cls_edit =
          classification_loss(classify(store_.trunk(), store_.c_head(), network_, edit_img), b)
              .item<double>();
    } else {
      const auto edit_img =
          generate(store_.generator(), network_, z, b, NormMode::kBatchStats);
      const auto cls_edit = classification_loss(
          classify(store_.trunk(), store_.c_head(), network_, edit_img), b);
      losses.cls_edit = cls_edit.item<double>();
      Scope scope = generator_only
                        ? Scope{Partition::kGenerator}
                        : Scope{Partition::kEncoder, Partition::kGenerator};
      const auto r =
          scoped_update(store_, train_.lambda3 * cls_edit, scope, optimizer_, opt);
      accumulate_norms(metrics.grad_norm, r);
    }
  }
  notify(SubStep::kEditUpdate);
  return metrics;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.store = store_.clone();
  ck.optimizer = optimizer_.clone();
  ck.step = step_;
  ck.rng_state = rng_to_string(rng_);
  ck.fingerprint = fingerprint_;
  ck.metadata = {{"kind", "model"},
                 {"config", to_json(RunConfig{network_, train_})},
                 {"schema", schema_.to_json()}};
  return ck;
}

void Trainer::restore(const Checkpoint& checkpoint) {
  if (checkpoint.fingerprint != fingerprint_)
    throw FingerprintMismatch("checkpoint fingerprint " + checkpoint.fingerprint +
                              " does not match current configuration " +
                              fingerprint_);
  auto store = checkpoint.store.clone();
  store.check_disjoint();
  std::istringstream in(checkpoint.rng_state);
  std::mt19937_64 rng;
  in >> rng;
  if (!in) throw CheckpointError("cannot restore rng state");
  store_ = std::move(store);
  optimizer_ = checkpoint.optimizer.clone();
  step_ = checkpoint.step;
  rng_ = rng;
}

FitResult fit(const TensorDataset& dataset, const AttributeSchema& schema,
              const NetworkConfig& network, const TrainConfig& train,
              const FitOptions& options) {
  if (dataset.size() == 0) throw ManifestError("cannot fit on an empty dataset");
  Trainer trainer = options.initial
                        ? Trainer(network, train, schema, options.initial->clone())
                        : Trainer(network, train, schema);
  if (options.resume)
    trainer.restore(load_checkpoint(*options.resume, trainer.fingerprint()));

  std::ofstream metrics_log;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    metrics_log.open(*options.out_dir / "metrics.jsonl", std::ios::app);
    if (!metrics_log)
      throw Error("cannot open metrics log in " + options.out_dir->string());
  }

  BatchSchedule schedule(dataset.size(), static_cast<std::size_t>(train.batch_size),
                         train.seed, /*drop_last=*/true);
  FitResult result;
  int consecutive_aborts = 0;
  const auto total = static_cast<std::uint64_t>(train.total_steps);
  while (trainer.step() < total) {
    const auto indices = schedule.indices_for_step(trainer.step());
    auto metrics = trainer.train_step(dataset.gather(indices));
    if (metrics_log.is_open()) metrics_log << metrics.to_json().dump() << '\n';
    if (options.on_step) options.on_step(metrics);
    consecutive_aborts = metrics.aborted ? consecutive_aborts + 1 : 0;
    const std::string reason = metrics.abort_reason;
    result.metrics.push_back(std::move(metrics));
    if (consecutive_aborts >= kMaxConsecutiveAborts)
      throw NonFiniteError("training aborted after " +
                           std::to_string(kMaxConsecutiveAborts) +
                           " consecutive non-finite steps: " + reason);
    if (options.out_dir && train.checkpoint_interval > 0 &&
        trainer.step() % static_cast<std::uint64_t>(train.checkpoint_interval) == 0) {
      save_checkpoint(trainer.checkpoint(),
                      *options.out_dir /
                          ("checkpoint_" + std::to_string(trainer.step()) + ".fagn"));
    }
  }
  if (options.out_dir) {
    metrics_log.flush();
    save_checkpoint(trainer.checkpoint(), *options.out_dir / "model.fagn");
  }
  result.final_step = trainer.step();
  result.store = trainer.store().clone();
  return result;
}

}  // namespace fagan
