#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include "fagan/editor.hpp"

namespace httplib {
class Server;
}

namespace fagan {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port at bind time
  std::filesystem::path checkpoint;
  std::size_t max_upload_bytes = 8'388'608;
  int request_timeout_seconds = 30;

  void validate() const;  // throws ConfigError
};

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

// HTTP front end over one immutable model:
//   GET  /api/health   200 once a model is loaded, 503 before
//   GET  /api/schema   attribute names, groups, model metadata
//   POST /api/edit     {image, edits: [{group, value}], source_attributes?}
//   POST /api/sweep    {image, source_attributes?}
// Images travel base64-encoded; responses always carry PNG.
class EditService {
 public:
  explicit EditService(ServiceConfig config);
  ~EditService();
  EditService(const EditService&) = delete;
  EditService& operator=(const EditService&) = delete;

  // Installs the model; requests before this answer 503. Only the first call
  // takes effect.
  void load(Model model);
  bool ready() const;

  HttpReply handle_health() const;
  HttpReply handle_schema() const;
  HttpReply handle_edit(std::string_view body) const;
  HttpReply handle_sweep(std::string_view body) const;

  // Binds the listening socket and returns the port actually bound.
  int bind();
  // Serves until stop(). Requires bind().
  void listen();
  void stop();

 private:
  struct Loaded;
  std::shared_ptr<const Loaded> loaded() const;

  ServiceConfig config_;
  mutable std::mutex mutex_;
  std::shared_ptr<const Loaded> loaded_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace fagan
