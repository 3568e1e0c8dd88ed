#include "fagan/edit_service.hpp"

#include <httplib.h>
#include <json.hpp>
#include <torch/torch.h>

#include "fagan/encoding.hpp"
#include "fagan/error.hpp"

namespace fagan {
namespace {

HttpReply error_reply(int status, const std::string& message) {
  return {status, nlohmann::json{{"error", message}}.dump()};
}

// A request failure carrying its HTTP status.
struct RequestError {
  int status;
  std::string message;
};

nlohmann::json parse_body(std::string_view body, std::size_t limit) {
  if (body.size() > limit)
    throw RequestError{413, "request body exceeds " + std::to_string(limit) + " bytes"};
  try {
    auto doc = nlohmann::json::parse(body);
    if (!doc.is_object()) throw RequestError{400, "request body must be a JSON object"};
    return doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw RequestError{400, std::string("malformed JSON body: ") + e.what()};
  }
}

RawImage decode_request_image(const nlohmann::json& doc, std::size_t limit) {
  if (!doc.contains("image") || !doc.at("image").is_string())
    throw RequestError{400, "field 'image' must be a base64 string"};
  std::vector<std::uint8_t> bytes;
  try {
    bytes = base64_decode(doc.at("image").get<std::string>());
  } catch (const Error& e) {
    throw RequestError{400, std::string("field 'image': ") + e.what()};
  }
  if (bytes.size() > limit)
    throw RequestError{413, "image exceeds " + std::to_string(limit) + " bytes"};
  try {
    return decode_image(bytes);
  } catch (const ImageError& e) {
    throw RequestError{422, e.what()};
  }
}

std::optional<AttributeVector> parse_source(const nlohmann::json& doc,
                                            const AttributeSchema& schema) {
  if (!doc.contains("source_attributes") || doc.at("source_attributes").is_null())
    return std::nullopt;
  const auto& field = doc.at("source_attributes");
  if (!field.is_array())
    throw RequestError{400, "field 'source_attributes' must be an array of 0/1"};
  std::vector<std::uint8_t> values;
  for (const auto& v : field) {
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1))
      throw RequestError{400, "field 'source_attributes' must contain only 0 or 1"};
    values.push_back(static_cast<std::uint8_t>(v.get<int>()));
  }
  AttributeVector a(std::move(values));
  if (auto msg = find_violation(schema, a))
    throw RequestError{400, "source_attributes: " + *msg};
  return a;
}

std::vector<AttributeEdit> parse_edits(const nlohmann::json& doc) {
  std::vector<AttributeEdit> edits;
  if (!doc.contains("edits")) return edits;
  const auto& field = doc.at("edits");
  if (!field.is_array()) throw RequestError{400, "field 'edits' must be an array"};
  for (const auto& e : field) {
    if (!e.is_object() || !e.contains("group") || !e.contains("value") ||
        !e.at("group").is_string() || !e.at("value").is_string())
      throw RequestError{400, "each edit must be {\"group\": string, \"value\": string}"};
    edits.push_back({e.at("group").get<std::string>(), e.at("value").get<std::string>()});
  }
  return edits;
}

std::string png_base64(const torch::Tensor& image) {
  return base64_encode(encode_png(to_raw_image(image)));
}

}  // namespace

struct EditService::Loaded {
  Model model;
  Editor editor;
  std::string schema_body;

  explicit Loaded(Model m) : model(std::move(m)), editor(model) {
    auto doc = model.schema.to_json();
    doc["model"] = {{"image_size", model.network.image_size},
                    {"fingerprint", model.fingerprint}};
    schema_body = doc.dump();
  }
};

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw ConfigError("port out of range");
  if (max_upload_bytes == 0) throw ConfigError("max_upload_bytes must be positive");
  if (request_timeout_seconds <= 0) throw ConfigError("request timeout must be positive");
}

EditService::EditService(ServiceConfig config)
    : config_(std::move(config)), server_(std::make_unique<httplib::Server>()) {
  config_.validate();
  // Leave headroom for the base64 expansion of a max-size upload.
  server_->set_payload_max_length(config_.max_upload_bytes / 3 * 4 + 4096);
  server_->set_read_timeout(config_.request_timeout_seconds, 0);
  server_->set_write_timeout(config_.request_timeout_seconds, 0);

  auto send = [](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body, reply.content_type);
  };
  server_->Get("/api/health", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_health());
  });
  server_->Get("/api/schema", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_schema());
  });
  server_->Post("/api/edit", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_edit(req.body));
  });
  server_->Post("/api/sweep", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_sweep(req.body));
  });
}

EditService::~EditService() { stop(); }

void EditService::load(Model model) {
  auto loaded = std::make_shared<const Loaded>(std::move(model));
  std::lock_guard lock(mutex_);
  if (!loaded_) loaded_ = std::move(loaded);
}

std::shared_ptr<const EditService::Loaded> EditService::loaded() const {
  std::lock_guard lock(mutex_);
  return loaded_;
}

bool EditService::ready() const { return loaded() != nullptr; }

HttpReply EditService::handle_health() const {
  if (!ready()) return error_reply(503, "model is loading");
  return {200, R"({"status":"ok"})"};
}

HttpReply EditService::handle_schema() const {
  const auto state = loaded();
  if (!state) return error_reply(503, "model is loading");
  return {200, state->schema_body};
}

HttpReply EditService::handle_edit(std::string_view body) const {
  const auto state = loaded();
  if (!state) return error_reply(503, "model is loading");
  try {
    const auto doc = parse_body(body, config_.max_upload_bytes / 3 * 4 + 4096);
    const auto& schema = state->model.schema;
    EditRequest request;
    request.edits = parse_edits(doc);
    request.source = parse_source(doc, schema);
    const auto raw = decode_request_image(doc, config_.max_upload_bytes);
    request.image = preprocess_image(raw, state->model.network.image_size);
    EditResult result;
    try {
      result = state->editor.edit_image(request);
    } catch (const EditError& e) {
      return error_reply(400, e.what());
    }
    const nlohmann::json reply = {{"image", png_base64(result.image)},
                                  {"resolved_source", result.source.values()},
                                  {"resolved_target", result.target.values()}};
    return {200, reply.dump()};
  } catch (const RequestError& e) {
    return error_reply(e.status, e.message);
  } catch (const ImageError& e) {
    return error_reply(422, e.what());
  }
}

HttpReply EditService::handle_sweep(std::string_view body) const {
  const auto state = loaded();
  if (!state) return error_reply(503, "model is loading");
  try {
    const auto doc = parse_body(body, config_.max_upload_bytes / 3 * 4 + 4096);
    const auto& schema = state->model.schema;
    const auto source = parse_source(doc, schema);
    const auto raw = decode_request_image(doc, config_.max_upload_bytes);
    const auto image = preprocess_image(raw, state->model.network.image_size);
    const auto a = source ? *source : state->editor.predict_attributes(image);
    const auto grid = state->editor.attribute_sweep(image, a);
    nlohmann::json columns = nlohmann::json::array();
    for (std::size_t i = 0; i < grid.images.size(); ++i)
      columns.push_back({{"label", grid.labels[i]}, {"image", png_base64(grid.images[i])}});
    const nlohmann::json reply = {{"columns", columns}, {"resolved_source", a.values()}};
    return {200, reply.dump()};
  } catch (const RequestError& e) {
    return error_reply(e.status, e.message);
  } catch (const ImageError& e) {
    return error_reply(422, e.what());
  } catch (const EditError& e) {
    return error_reply(400, e.what());
  }
}

int EditService::bind() {
  if (config_.port == 0) return server_->bind_to_any_port(config_.host);
  if (!server_->bind_to_port(config_.host, config_.port))
    throw Error("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  return config_.port;
}

void EditService::listen() { server_->listen_after_bind(); }

void EditService::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

}  // namespace fagan
