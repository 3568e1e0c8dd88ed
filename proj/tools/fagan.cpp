// Command-line front end: dataset checks, training, editing and serving.

#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "fagan/attributes.hpp"
#include "fagan/dataset.hpp"
#include "fagan/edit_service.hpp"
#include "fagan/editor.hpp"
#include "fagan/error.hpp"
#include "fagan/image.hpp"
#include "fagan/toy_data.hpp"
#include "fagan/trainer.hpp"

namespace {

using namespace fagan;
namespace fs = std::filesystem;

int validate_dataset(const fs::path& manifest, const fs::path& schema_path) {
  const auto schema = AttributeSchema::load(schema_path);
  std::vector<DatasetExample> examples;
  try {
    examples = parse_manifest(manifest, schema);
  } catch (const ManifestError& e) {
    std::cerr << "invalid: " << e.what() << '\n';
    return 2;
  }
  std::vector<std::size_t> counts(schema.size(), 0);
  for (const auto& ex : examples)
    for (std::size_t i = 0; i < schema.size(); ++i) counts[i] += ex.attributes[i];
  std::cout << "examples " << examples.size() << '\n';
  for (std::size_t i = 0; i < schema.size(); ++i)
    std::cout << schema.names()[i] << ' ' << counts[i] << '\n';
  return 0;
}

TensorDataset read_dataset(const fs::path& manifest, const AttributeSchema& schema,
                           std::int64_t image_size) {
  const auto examples = parse_manifest(manifest, schema);
  return load_dataset(examples, manifest.parent_path(), image_size);
}

int train(const fs::path& config_path, const fs::path& manifest, const fs::path& schema_path,
          const fs::path& out, const std::optional<fs::path>& resume, int log_every) {
  const auto config = load_run_config(config_path);
  const auto schema = AttributeSchema::load(schema_path);
  const auto dataset = read_dataset(manifest, schema, config.network.image_size);
  FitOptions options;
  options.out_dir = out;
  options.resume = resume;
  options.on_step = [&](const StepMetrics& m) {
    if (log_every > 0 && (m.step % static_cast<std::uint64_t>(log_every) == 0 || m.aborted))
      std::cerr << m.to_json().dump() << '\n';
  };
  const auto result = fit(dataset, schema, config.network, config.train, options);
  std::cout << "trained " << result.final_step << " steps; model at "
            << (out / "model.fagn").string() << '\n';
  return 0;
}

int train_evaluator_cmd(const fs::path& manifest, const fs::path& schema_path,
                        const fs::path& out, std::int64_t image_size,
                        const EvaluatorTrainConfig& config) {
  const auto schema = AttributeSchema::load(schema_path);
  NetworkConfig network;
  network.image_size = image_size;
  network.num_attributes = static_cast<std::int64_t>(schema.size());
  const auto dataset = read_dataset(manifest, schema, image_size);
  const auto evaluator = train_evaluator(dataset, schema, network, config);
  save_evaluator(evaluator, out);
  std::cout << "evaluator written to " << out.string() << '\n';
  return 0;
}

torch::Tensor read_image(const fs::path& path, const Model& model) {
  return preprocess_image(load_image(path), model.network.image_size);
}

int edit(const fs::path& ckpt, const fs::path& image, const std::vector<std::string>& sets,
         const fs::path& out) {
  const auto model = load_model(ckpt);
  const Editor editor(model);
  EditRequest request;
  request.image = read_image(image, model);
  for (const auto& s : sets) request.edits.push_back(parse_attribute_edit(s));
  const auto result = editor.edit_image(request);
  save_png(to_raw_image(result.image), out);
  const auto names = [&](const AttributeVector& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i]) s += (s.empty() ? "" : ",") + model.schema.names()[i];
    return s;
  };
  std::cout << "source " << names(result.source) << "\ntarget " << names(result.target)
            << '\n';
  return 0;
}

int sweep(const fs::path& ckpt, const fs::path& image, const fs::path& out) {
  const auto model = load_model(ckpt);
  const Editor editor(model);
  const auto x = read_image(image, model);
  const auto grid = editor.attribute_sweep(x, editor.predict_attributes(x));
  save_png(render_strip(grid), out);
  std::cout << grid.images.size() << " columns written to " << out.string() << '\n';
  return 0;
}

int eval(const fs::path& ckpt, const fs::path& manifest, const fs::path& evaluator_path) {
  const auto model = load_model(ckpt);
  const auto evaluator = load_evaluator(evaluator_path);
  if (!(evaluator.schema == model.schema))
    throw ConfigError("evaluator and model were trained on different schemas");
  const Editor editor(model);
  const auto dataset = read_dataset(manifest, model.schema, model.network.image_size);
  const auto result = evaluate_edits(editor, evaluator.as_function(), dataset);
  std::printf("edits %zu\nmatch_rate %.4f\n", result.num_edits, result.match_rate);
  for (std::size_t g = 0; g < model.schema.groups().size(); ++g)
    std::printf("match_rate[%s] %.4f\n", model.schema.groups()[g].name.c_str(),
                result.group_match_rate[g]);
  std::printf("reconstruction_mae %.4f\n", result.reconstruction_mae);
  return 0;
}

EditService* g_service = nullptr;

int serve(const fs::path& ckpt, const fs::path& schema_path, const std::string& host,
          int port) {
  const auto expected = AttributeSchema::load(schema_path);
  ServiceConfig config;
  config.host = host;
  config.port = port;
  config.checkpoint = ckpt;
  EditService service(config);
  const int bound = service.bind();
  std::cerr << "listening on " << host << ':' << bound << '\n';
  std::exception_ptr load_error;
  // Health answers 503 until this finishes.
  std::thread loader([&] {
    try {
      auto model = load_model(ckpt);
      if (!(model.schema == expected))
        throw ConfigError("schema file does not match the checkpoint's schema");
      service.load(std::move(model));
      std::cerr << "model loaded\n";
    } catch (...) {
      load_error = std::current_exception();
      service.stop();
    }
  });
  g_service = &service;
  std::signal(SIGINT, [](int) { if (g_service) g_service->stop(); });
  std::signal(SIGTERM, [](int) { if (g_service) g_service->stop(); });
  service.listen();
  loader.join();
  g_service = nullptr;
  if (load_error) std::rethrow_exception(load_error);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribute editing for garment images"};
  app.require_subcommand(1);

  auto* dataset = app.add_subcommand("dataset", "Dataset utilities");
  dataset->require_subcommand(1);
  fs::path manifest, schema_path, out, ckpt, image, config_path, evaluator_path;
  auto* validate = dataset->add_subcommand("validate", "Check a manifest against a schema");
  validate->add_option("--manifest", manifest)->required();
  validate->add_option("--schema", schema_path)->required();

  auto* synth = dataset->add_subcommand("synth", "Write the synthetic two-group dataset");
  std::size_t synth_count = 2000;
  std::uint64_t synth_seed = 0;
  int synth_size = 64;
  synth->add_option("--out", out)->required();
  synth->add_option("--count", synth_count)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--size", synth_size)->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::optional<fs::path> resume;
  int log_every = 100;
  train_cmd->add_option("--config", config_path)->required();
  train_cmd->add_option("--manifest", manifest)->required();
  train_cmd->add_option("--schema", schema_path)->required();
  train_cmd->add_option("--out", out)->required();
  train_cmd->add_option("--resume", resume);
  train_cmd->add_option("--log-every", log_every)->capture_default_str();

  auto* evaluator_cmd =
      app.add_subcommand("train-evaluator", "Train the independent scoring classifier");
  EvaluatorTrainConfig evaluator_config;
  std::int64_t image_size = 64;
  evaluator_cmd->add_option("--manifest", manifest)->required();
  evaluator_cmd->add_option("--schema", schema_path)->required();
  evaluator_cmd->add_option("--out", out)->required();
  evaluator_cmd->add_option("--image-size", image_size)->capture_default_str();
  evaluator_cmd->add_option("--steps", evaluator_config.steps)->capture_default_str();
  evaluator_cmd->add_option("--seed", evaluator_config.seed)->capture_default_str();

  auto* edit_cmd = app.add_subcommand("edit", "Edit attributes of one image");
  std::vector<std::string> sets;
  edit_cmd->add_option("--ckpt", ckpt)->required();
  edit_cmd->add_option("--image", image)->required();
  edit_cmd->add_option("--set", sets, "group=value, repeatable");
  edit_cmd->add_option("--out", out)->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "Render every attribute value as a strip");
  sweep_cmd->add_option("--ckpt", ckpt)->required();
  sweep_cmd->add_option("--image", image)->required();
  sweep_cmd->add_option("--out", out)->required();

  auto* eval_cmd = app.add_subcommand("eval", "Score single-group edits on a manifest");
  eval_cmd->add_option("--ckpt", ckpt)->required();
  eval_cmd->add_option("--manifest", manifest)->required();
  eval_cmd->add_option("--evaluator", evaluator_path)->required();

  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP edit service");
  std::string host = "127.0.0.1";
  int port = 8080;
  serve_cmd->add_option("--ckpt", ckpt)->required();
  serve_cmd->add_option("--schema", schema_path)->required();
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) return validate_dataset(manifest, schema_path);
    if (synth->parsed()) {
      toy::write(toy::generate(synth_count, synth_seed, synth_size), out);
      std::cout << synth_count << " images written to " << out.string() << '\n';
      return 0;
    }
    if (train_cmd->parsed())
      return train(config_path, manifest, schema_path, out, resume, log_every);
    if (evaluator_cmd->parsed())
      return train_evaluator_cmd(manifest, schema_path, out, image_size, evaluator_config);
    if (edit_cmd->parsed()) return edit(ckpt, image, sets, out);
    if (sweep_cmd->parsed()) return sweep(ckpt, image, out);
    if (eval_cmd->parsed()) return eval(ckpt, manifest, evaluator_path);
    if (serve_cmd->parsed()) return serve(ckpt, schema_path, host, port);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
