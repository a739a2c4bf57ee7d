#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include "scz/model.hpp"
#include "scz/preprocess.hpp"

namespace scz {

struct ServiceConfig {
  std::string bind_address = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path model_path;
  std::size_t max_upload_bytes = 5u << 20;
  std::optional<std::filesystem::path> preprocess_config_path;
  int request_timeout_s = 30;
  std::string cors_origin = "*";

  void validate() const;
};

struct PredictResponse {
  double probability_patient = 0.0;
  Label label = Label::control;
  ArchId model_arch = ArchId::custom_cnn;
  std::string model_checksum;
  PreprocessConfig preprocess_echo;
};

std::string to_json(const PredictResponse& r);

// Failure of a request, with the HTTP status and a code from a closed set:
// undecodable_image, no_ink, content_too_large, payload_too_large,
// unsupported_media_type, missing_field, bad_request, not_found,
// internal_error.
struct ServiceError {
  int status = 500;
  std::string code;
  std::string message;
};

std::string to_json(const ServiceError& e);

// The preprocess settings used with `model`: read from `path` when given,
// otherwise the defaults with the canvas taken from the model. Errc::schema_mismatch
// when a configured canvas disagrees with the model's input size.
PreprocessConfig resolve_preprocess(const Model& model, const std::optional<std::filesystem::path>& path);

// Decode -> preprocess -> predict, exactly what `scz predict` does for a file.
Prediction predict_image_bytes(const Model& model, std::span<const std::uint8_t> bytes, const PreprocessConfig& cfg);

// Maps an upload to a response or a client error. Internal failures are
// rethrown so the server can log them behind an opaque id.
struct PredictOutcome {
  std::optional<PredictResponse> response;
  std::optional<ServiceError> error;
};

class Service {
 public:
  // Loads the model and preprocess config; throws scz::Error if either fails,
  // before any socket is opened.
  explicit Service(ServiceConfig cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  const ServiceConfig& config() const { return cfg_; }
  const PreprocessConfig& preprocess_config() const { return preprocess_; }
  const Model& model() const { return loaded_.model; }
  const std::string& checksum() const { return checksum_; }

  PredictOutcome handle_upload(std::span<const std::uint8_t> bytes) const;
  std::string health_json() const;

  // Binds the listening socket and returns the port (Errc::io_error on failure).
  int bind();
  // Serves until stop(); in-flight requests finish first.
  void listen();
  void stop();

 private:
  void install_routes();

  ServiceConfig cfg_;
  LoadedModel loaded_;
  PreprocessConfig preprocess_;
  std::string checksum_;
  std::chrono::steady_clock::time_point started_;
  struct Http;
  std::unique_ptr<Http> http_;
};

}  // namespace scz
