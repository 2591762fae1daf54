#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

/// JSON-over-HTTP editing service.
namespace umbra::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path analyzer_checkpoint;
  std::filesystem::path synth_checkpoint;
  /// Learned-constant synthesizer for reference-free insertion; optional.
  std::filesystem::path baseline_checkpoint;
  /// Dataset directory served under /api/scenes; optional.
  std::filesystem::path data;
  /// Concurrent model inferences.
  int workers = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static ServiceConfig from_json(const nlohmann::json& j);
  /// UMBRA_HOST, UMBRA_PORT, UMBRA_CKPT_ANALYZER, UMBRA_CKPT_SYNTH,
  /// UMBRA_CKPT_BASELINE, UMBRA_DATA and UMBRA_WORKERS override fields.
  void apply_env();
};

struct Reply {
  int status = 200;
  nlohmann::json body;
};

/// Request handling independent of the transport. Checkpoints are loaded once
/// by `load`; a missing or unreadable checkpoint leaves the service up but
/// answering 409 on model endpoints.
class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Returns a description of what failed to load, empty when ready.
  std::string load();
  bool ready() const;

  Reply handle(const std::string& method, const std::string& path, const std::string& body);

  /// Blocks serving HTTP until `stop` is called. Returns false if the port could not be bound.
  bool listen();
  /// Binds to an ephemeral port; returns it, or -1 on failure. Call listen_after_bind afterwards.
  int bind_any_port();
  bool listen_after_bind();
  void stop();

  const ServiceConfig& config() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace umbra::service
