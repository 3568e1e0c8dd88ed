#include "fagan/editor.hpp"

#include <algorithm>
#include <set>

#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "fagan/encoding.hpp"
#include "fagan/error.hpp"
#include "fagan/objectives.hpp"
#include "fagan/optimizer.hpp"
#include "fagan/trainer.hpp"

namespace fagan {
namespace {

std::size_t group_argmax(const AttributeGroup& group, const double* row) {
  std::size_t best = group.members.front();
  for (std::size_t idx : group.members) {
    if (row[idx] > row[best]) best = idx;
  }
  return best;
}

std::string evaluator_fingerprint(const NetworkConfig& network,
                                  const AttributeSchema& schema,
                                  const nlohmann::json& train) {
  const nlohmann::json doc = {{"kind", "evaluator"},
                              {"network", network.to_json()},
                              {"schema", schema.to_json()},
                              {"train", train}};
  return sha256_hex(doc.dump());
}

nlohmann::json to_json(const EvaluatorTrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed}};
}

}  // namespace

Model load_model(const std::filesystem::path& path) {
  auto ck = read_checkpoint(path);
  try {
    if (ck.metadata.value("kind", "") != "model")
      throw CheckpointError(path.string() + " is not a model checkpoint");
    const auto rc = parse_run_config(ck.metadata.at("config"));
    auto schema = AttributeSchema::from_json(ck.metadata.at("schema"));
    const auto expected = config_fingerprint(rc.network, rc.train, schema);
    if (expected != ck.fingerprint)
      throw FingerprintMismatch(path.string() +
                                ": embedded configuration does not match the "
                                "stored fingerprint");
    return Model{rc.network, std::move(schema), std::move(ck.store), ck.fingerprint};
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad metadata: " + e.what());
  }
}

AttributeEdit parse_attribute_edit(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos || eq == 0 || eq + 1 == text.size())
    throw EditError("edit '" + std::string(text) + "' must look like group=value");
  return {std::string(text.substr(0, eq)), std::string(text.substr(eq + 1))};
}

AttributeVector resolve_target(const AttributeSchema& schema,
                               const AttributeVector& source,
                               std::span<const AttributeEdit> edits) {
  if (auto msg = find_violation(schema, source))
    throw EditError("source attributes: " + *msg);
  AttributeVector target = source;
  std::set<std::string> seen;
  for (const auto& edit : edits) {
    const auto* group = schema.find_group(edit.group);
    if (group == nullptr) throw EditError("unknown group '" + edit.group + "'");
    if (!seen.insert(edit.group).second)
      throw EditError("more than one edit targets group '" + edit.group + "'");
    const auto idx = schema.index_of(edit.value);
    if (!idx) throw EditError("unknown value '" + edit.value + "'");
    if (std::find(group->members.begin(), group->members.end(), *idx) ==
        group->members.end())
      throw EditError("value '" + edit.value + "' is not in group '" +
                      edit.group + "'");
    target.set_active(*group, *idx);
  }
  return target;
}

AttributeVector attributes_from_logits(const AttributeSchema& schema,
                                       const torch::Tensor& logits) {
  const auto row = logits.detach().to(torch::kCPU, torch::kFloat64).contiguous().view(-1);
  if (static_cast<std::size_t>(row.numel()) != schema.size())
    throw ShapeError("logit count does not match schema");
  const double* data = row.data_ptr<double>();
  std::vector<std::uint8_t> values(schema.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = data[i] > 0.0 ? 1 : 0;
  AttributeVector v(std::move(values));
  for (const auto& g : schema.groups()) {
    int active = 0;
    for (std::size_t idx : g.members) active += v[idx];
    if (active != 1) v.set_active(g, group_argmax(g, data));
  }
  return v;
}

Editor::Editor(const Model& model) : model_(model) {
  model_.network.validate();
  if (static_cast<std::size_t>(model_.network.num_attributes) != model_.schema.size())
    throw ConfigError("model schema does not match its network");
}

torch::Tensor Editor::to_batch(const torch::Tensor& image) const {
  const auto dtype = model_.store.encoder().entries().front().value.scalar_type();
  torch::Tensor x = image.dim() == 3 ? image.unsqueeze(0) : image;
  if (x.dim() != 4 || x.size(0) != 1)
    throw ShapeError("expected a single (3, H, W) image");
  return x.to(dtype);
}

torch::Tensor Editor::generate_batch(const torch::Tensor& images,
                                     const torch::Tensor& attributes) const {
  torch::NoGradGuard no_grad;
  const auto dtype = model_.store.encoder().entries().front().value.scalar_type();
  const auto z = encode(model_.store.encoder(), model_.network, images.to(dtype),
                        NormMode::kInference);
  return generate(model_.store.generator(), model_.network, z, attributes.to(dtype),
                  NormMode::kInference);
}

torch::Tensor Editor::reconstruct(const torch::Tensor& image,
                                  const AttributeVector& source) const {
  if (auto msg = find_violation(model_.schema, source)) throw EditError(*msg);
  const std::vector<AttributeVector> attrs{source};
  return generate_batch(to_batch(image), attributes_to_tensor(attrs))[0];
}

AttributeVector Editor::predict_attributes(const torch::Tensor& image) const {
  torch::NoGradGuard no_grad;
  const auto logits = classify(model_.store.trunk(), model_.store.c_head(),
                               model_.network, to_batch(image));
  return attributes_from_logits(model_.schema, logits[0]);
}

EditResult Editor::edit_image(const EditRequest& request) const {
  EditResult result;
  result.source =
      request.source ? *request.source : predict_attributes(request.image);
  result.target = resolve_target(model_.schema, result.source, request.edits);
  const std::vector<AttributeVector> attrs{result.target};
  result.image =
      generate_batch(to_batch(request.image), attributes_to_tensor(attrs))[0];
  return result;
}

SweepGrid Editor::attribute_sweep(const torch::Tensor& image,
                                  const AttributeVector& source) const {
  SweepGrid grid;
  grid.images.push_back(to_batch(image)[0].clone());
  grid.labels.emplace_back("original");
  grid.images.push_back(reconstruct(image, source));
  grid.labels.emplace_back("reconstruction");
  const auto& names = model_.schema.names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& group = model_.schema.groups()[model_.schema.group_of(i)];
    EditRequest req{image, source, {{group.name, names[i]}}};
    grid.images.push_back(edit_image(req).image);
    grid.labels.push_back(names[i]);
  }
  return grid;
}

RawImage render_strip(const SweepGrid& grid) {
  if (grid.images.empty() || grid.images.size() != grid.labels.size())
    throw ShapeError("sweep grid needs one label per image");
  constexpr int kBand = 16;
  constexpr double kFontScale = 0.35;
  constexpr int kFont = cv::FONT_HERSHEY_SIMPLEX;

  std::vector<RawImage> tiles;
  std::vector<int> widths;
  int height = 0;
  for (std::size_t i = 0; i < grid.images.size(); ++i) {
    tiles.push_back(to_raw_image(grid.images[i]));
    int baseline = 0;
    const auto text = cv::getTextSize(grid.labels[i], kFont, kFontScale, 1, &baseline);
    widths.push_back(std::max(tiles.back().width, text.width + 4));
    height = std::max(height, tiles.back().height);
  }
  int total = 0;
  for (int w : widths) total += w;

  cv::Mat canvas(height + kBand, total, CV_8UC3, cv::Scalar(255, 255, 255));
  int x = 0;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto& t = tiles[i];
    cv::Mat tile(t.height, t.width, CV_8UC3, const_cast<std::uint8_t*>(t.pixels.data()));
    const int offset = x + (widths[i] - t.width) / 2;
    tile.copyTo(canvas(cv::Rect(offset, kBand, t.width, t.height)));
    cv::putText(canvas, grid.labels[i], cv::Point(x + 2, kBand - 4), kFont, kFontScale,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    x += widths[i];
  }
  RawImage out;
  out.width = canvas.cols;
  out.height = canvas.rows;
  out.channels = 3;
  out.pixels.assign(canvas.data, canvas.data + canvas.total() * 3);
  return out;
}

double attribute_match_rate(const AttributeEvaluator& evaluator,
                            const AttributeSchema& schema,
                            std::span<const EditSample> samples) {
  if (samples.empty()) throw EditError("attribute_match_rate: empty evaluation set");
  constexpr std::size_t kChunk = 64;
  std::size_t matched = 0;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(start + kChunk, samples.size());
    std::vector<torch::Tensor> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(samples[i].image);
    torch::Tensor logits;
    {
      torch::NoGradGuard no_grad;
      logits = evaluator(torch::stack(images))
                   .detach()
                   .to(torch::kCPU, torch::kFloat64)
                   .contiguous();
    }
    if (logits.dim() != 2 || logits.size(0) != static_cast<std::int64_t>(end - start) ||
        static_cast<std::size_t>(logits.size(1)) != schema.size())
      throw ShapeError("evaluator returned logits of shape " + c10::str(logits.sizes()));
    for (std::size_t i = start; i < end; ++i) {
      const double* row = logits[static_cast<std::int64_t>(i - start)].data_ptr<double>();
      bool ok = true;
      for (std::size_t g : samples[i].edited_groups) {
        const auto& group = schema.groups().at(g);
        if (group_argmax(group, row) != samples[i].target.active_in(group)) {
          ok = false;
          break;
        }
      }
      matched += ok ? 1 : 0;
    }
  }
  return static_cast<double>(matched) / static_cast<double>(samples.size());
}

torch::Tensor Evaluator::logits(const torch::Tensor& images) const {
  torch::NoGradGuard no_grad;
  const auto dtype = store.trunk().entries().front().value.scalar_type();
  return classify(store.trunk(), store.c_head(), network, images.to(dtype));
}

AttributeEvaluator Evaluator::as_function() const {
  return [this](const torch::Tensor& images) { return logits(images); };
}

Evaluator train_evaluator(const TensorDataset& dataset, const AttributeSchema& schema,
                          const NetworkConfig& network,
                          const EvaluatorTrainConfig& config) {
  if (dataset.size() == 0) throw ManifestError("cannot train evaluator on empty data");
  if (static_cast<std::size_t>(network.num_attributes) != schema.size())
    throw ConfigError("evaluator network does not match schema");
  auto full = init_params(network, config.seed);
  ParameterStore store;
  for (auto p : {Partition::kTrunk, Partition::kCHead}) {
    for (const auto& e : full.group(p).entries())
      store.group(p).add(e.name, e.value, e.trainable);
  }
  OptimizerState state;
  const OptimizerConfig opt{OptimizerKind::kAdam, config.learning_rate, 0.9, 0.999, 1e-8};
  BatchSchedule schedule(dataset.size(),
                         std::min<std::size_t>(static_cast<std::size_t>(config.batch_size),
                                               dataset.size()),
                         config.seed);
  for (std::int64_t step = 0; step < config.steps; ++step) {
    const auto batch = dataset.gather(schedule.indices_for_step(static_cast<std::uint64_t>(step)));
    const auto loss = classification_loss(
        classify(store.trunk(), store.c_head(), network, batch.images), batch.attributes);
    scoped_update(store, loss, {Partition::kTrunk, Partition::kCHead}, state, opt);
  }
  const auto fp = evaluator_fingerprint(network, schema, to_json(config));
  return Evaluator{network, schema, std::move(store), fp};
}

void save_evaluator(const Evaluator& evaluator, const std::filesystem::path& path) {
  Checkpoint ck;
  ck.store = evaluator.store.clone();
  ck.fingerprint = evaluator.fingerprint;
  ck.metadata = {{"kind", "evaluator"},
                 {"network", evaluator.network.to_json()},
                 {"schema", evaluator.schema.to_json()}};
  save_checkpoint(ck, path);
}

Evaluator load_evaluator(const std::filesystem::path& path) {
  auto ck = read_checkpoint(path);
  try {
    if (ck.metadata.value("kind", "") != "evaluator")
      throw CheckpointError(path.string() + " is not an evaluator checkpoint");
    auto network = NetworkConfig::from_json(ck.metadata.at("network"));
    network.validate();
    auto schema = AttributeSchema::from_json(ck.metadata.at("schema"));
    return Evaluator{network, std::move(schema), std::move(ck.store), ck.fingerprint};
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad metadata: " + e.what());
  }
}

EditEvaluation evaluate_edits(const Editor& editor, const AttributeEvaluator& evaluator,
                              const TensorDataset& dataset) {
  if (dataset.size() == 0) throw EditError("evaluate_edits: empty dataset");
  const auto& schema = editor.schema();
  EditEvaluation out;
  out.group_match_rate.assign(schema.groups().size(), 0.0);
  std::vector<std::vector<EditSample>> per_group(schema.groups().size());
  double abs_error = 0.0;
  double elements = 0.0;

  constexpr std::size_t kChunk = 50;
  for (std::size_t start = 0; start < dataset.size(); start += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(start + kChunk, dataset.size()); ++i)
      idx.push_back(i);
    const auto batch = dataset.gather(idx);
    const auto recon = editor.generate_batch(batch.images, batch.attributes);
    abs_error += (recon.to(torch::kFloat64) - batch.images.to(torch::kFloat64))
                     .abs()
                     .sum()
                     .item<double>();
    elements += static_cast<double>(batch.images.numel());

    for (std::size_t g = 0; g < schema.groups().size(); ++g) {
      const auto& group = schema.groups()[g];
      for (std::size_t value : group.members) {
        std::vector<std::size_t> rows;
        std::vector<AttributeVector> targets;
        for (std::size_t r = 0; r < idx.size(); ++r) {
          const auto& a = batch.attribute_vectors[r];
          if (a.active_in(group) == value) continue;
          AttributeVector b = a;
          b.set_active(group, value);
          rows.push_back(r);
          targets.push_back(std::move(b));
        }
        if (rows.empty()) continue;
        std::vector<std::int64_t> sel(rows.begin(), rows.end());
        const auto images = batch.images.index_select(0, torch::tensor(sel, torch::kLong));
        const auto edited = editor.generate_batch(images, attributes_to_tensor(targets));
        for (std::size_t k = 0; k < rows.size(); ++k) {
          per_group[g].push_back(
              {edited[static_cast<std::int64_t>(k)], targets[k], {g}});
        }
      }
    }
  }
  out.reconstruction_mae = abs_error / elements;
  std::vector<EditSample> all;
  for (std::size_t g = 0; g < per_group.size(); ++g) {
    if (!per_group[g].empty())
      out.group_match_rate[g] = attribute_match_rate(evaluator, schema, per_group[g]);
    all.insert(all.end(), per_group[g].begin(), per_group[g].end());
  }
  out.num_edits = all.size();
  if (!all.empty()) out.match_rate = attribute_match_rate(evaluator, schema, all);
  return out;
}

}  // namespace fagan
