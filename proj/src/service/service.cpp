#include "scz/service.hpp"

#include <httplib.h>

#include <atomic>
#include <cstdio>
#include <iostream>
#include <json.hpp>
#include <random>

#include "scz/error.hpp"
#include "scz/image_io.hpp"
#include "scz/rng.hpp"

namespace scz {
namespace {

using nlohmann::json;

json preprocess_json(const PreprocessConfig& p) {
  return {{"canvas_w", p.canvas_w},
          {"canvas_h", p.canvas_h},
          {"sigma", p.sigma},
          {"radius", p.radius},
          {"border", std::string(to_string(p.border))},
          {"ink_threshold", p.ink_threshold}};
}

ServiceError client_error(int status, std::string code, std::string message) {
  return {status, std::move(code), std::move(message)};
}

LoadedModel load_checked(const ServiceConfig& cfg) {
  cfg.validate();
  return load_model(cfg.model_path);
}

std::string opaque_id() {
  static std::atomic<std::uint64_t> counter{0};
  static const std::uint64_t salt = std::random_device{}();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(mix_seed(salt, counter.fetch_add(1))));
  return buf;
}

void send_error(httplib::Response& res, const ServiceError& e) {
  res.status = e.status;
  res.set_content(to_json(e), "application/json");
}

}  // namespace

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw Error(Errc::bad_config, "port must lie in [0, 65535]");
  if (max_upload_bytes == 0) throw Error(Errc::bad_config, "max upload size must be positive");
  if (request_timeout_s < 1) throw Error(Errc::bad_config, "request timeout must be at least 1 s");
  if (model_path.empty()) throw Error(Errc::bad_config, "no model file given");
}

std::string to_json(const PredictResponse& r) {
  const json j = {{"probability_patient", r.probability_patient},
                  {"label", std::string(to_string(r.label))},
                  {"model_arch", std::string(to_string(r.model_arch))},
                  {"model_checksum", r.model_checksum},
                  {"preprocess_echo", preprocess_json(r.preprocess_echo)}};
  return j.dump();
}

std::string to_json(const ServiceError& e) {
  return json{{"error", {{"code", e.code}, {"message", e.message}}}}.dump();
}

PreprocessConfig resolve_preprocess(const Model& model, const std::optional<std::filesystem::path>& path) {
  const InputSpec in = model.input_spec();
  PreprocessConfig pre;
  if (path) {
    pre = PreprocessConfig::read(*path);
    if (in.height != static_cast<std::size_t>(pre.canvas_h) || in.width != static_cast<std::size_t>(pre.canvas_w)) {
      throw Error(Errc::schema_mismatch, "model expects " + std::to_string(in.width) + "x" +
                                             std::to_string(in.height) + " inputs but the preprocess canvas is " +
                                             std::to_string(pre.canvas_w) + "x" + std::to_string(pre.canvas_h));
    }
  } else {
    pre.canvas_w = static_cast<int>(in.width);
    pre.canvas_h = static_cast<int>(in.height);
  }
  return pre;
}

Prediction predict_image_bytes(const Model& model, std::span<const std::uint8_t> bytes, const PreprocessConfig& cfg) {
  return predict(model, preprocess(decode_image(bytes), cfg));
}

struct Service::Http {
  httplib::Server server;
};

Service::Service(ServiceConfig cfg)
    : cfg_(std::move(cfg)),
      loaded_(load_checked(cfg_)),
      preprocess_(resolve_preprocess(loaded_.model, cfg_.preprocess_config_path)),
      checksum_(checksum_hex(loaded_.checksum)),
      started_(std::chrono::steady_clock::now()),
      http_(std::make_unique<Http>()) {
  install_routes();
}

Service::~Service() = default;

PredictOutcome Service::handle_upload(std::span<const std::uint8_t> bytes) const {
  PredictOutcome out;
  try {
    const Prediction p = predict_image_bytes(loaded_.model, bytes, preprocess_);
    out.response = PredictResponse{p.p_patient, p.label, loaded_.model.arch(), checksum_, preprocess_};
  } catch (const Error& e) {
    switch (e.code()) {
      case Errc::unsupported_format:
      case Errc::unreadable_file:
      case Errc::empty_image:
        out.error = client_error(400, "undecodable_image", e.what());
        break;
      case Errc::no_ink:
        out.error = client_error(400, "no_ink", "the image contains no ink");
        break;
      case Errc::target_too_small:
        out.error = client_error(400, "content_too_large", e.what());
        break;
      default:
        throw;
    }
  }
  return out;
}

std::string Service::health_json() const {
  const double uptime = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  return json{{"status", "ok"},
              {"model_arch", std::string(to_string(loaded_.model.arch()))},
              {"model_checksum", checksum_},
              {"uptime_seconds", uptime}}
      .dump();
}

void Service::install_routes() {
  auto& srv = http_->server;
  srv.set_payload_max_length(cfg_.max_upload_bytes);
  srv.set_read_timeout(cfg_.request_timeout_s, 0);
  srv.set_write_timeout(cfg_.request_timeout_s, 0);
  srv.set_default_headers({{"Access-Control-Allow-Origin", cfg_.cors_origin},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Vary", "Origin"}});

  srv.Get("/api/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(health_json(), "application/json");
  });

  srv.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Post("/api/v1/predict", [this](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data()) {
      send_error(res, client_error(415, "unsupported_media_type", "expected multipart/form-data"));
      return;
    }
    if (!req.has_file("image")) {
      send_error(res, client_error(422, "missing_field", "multipart field 'image' is required"));
      return;
    }
    const std::string& content = req.get_file_value("image").content;
    const auto* data = reinterpret_cast<const std::uint8_t*>(content.data());
    try {
      const PredictOutcome out = handle_upload({data, content.size()});
      if (out.error) {
        send_error(res, *out.error);
      } else {
        res.set_content(to_json(*out.response), "application/json");
      }
    } catch (const std::exception& e) {
      const std::string id = opaque_id();
      std::cerr << "error id=" << id << ": " << e.what() << '\n';
      send_error(res, client_error(500, "internal_error", "internal error, reference " + id));
    }
  });

  // Fills in bodies for errors raised by the HTTP layer itself.
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    switch (res.status) {
      case 413:
        send_error(res, client_error(413, "payload_too_large", "upload exceeds the size limit"));
        break;
      case 404:
        send_error(res, client_error(404, "not_found", "no such endpoint"));
        break;
      case 500:
        send_error(res, client_error(500, "internal_error", "internal error"));
        break;
      default:
        send_error(res, client_error(res.status, "bad_request", "malformed request"));
        break;
    }
    return httplib::Server::HandlerResponse::Handled;
  });

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    const std::string id = opaque_id();
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      std::cerr << "error id=" << id << ": " << e.what() << '\n';
    } catch (...) {
      std::cerr << "error id=" << id << ": unknown exception\n";
    }
    send_error(res, client_error(500, "internal_error", "internal error, reference " + id));
  });
}

int Service::bind() {
  auto& srv = http_->server;
  const int port = cfg_.port == 0 ? srv.bind_to_any_port(cfg_.bind_address)
                                  : (srv.bind_to_port(cfg_.bind_address, cfg_.port) ? cfg_.port : -1);
  if (port < 0) {
    throw Error(Errc::io_error, "cannot bind " + cfg_.bind_address + ":" + std::to_string(cfg_.port));
  }
  return port;
}

void Service::listen() { http_->server.listen_after_bind(); }

void Service::stop() { http_->server.stop(); }

}  // namespace scz
