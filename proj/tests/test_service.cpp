#include <doctest.h>
#include <httplib.h>

#include <json.hpp>
#include <sstream>
#include <thread>

#include "scz/cli.hpp"
#include "scz/error.hpp"
#include "scz/image_io.hpp"
#include "scz/service.hpp"
#include "small_task.hpp"
#include "support.hpp"

using namespace scz;
using nlohmann::json;

namespace {

std::string as_string(const std::vector<std::uint8_t>& b) { return {b.begin(), b.end()}; }

// A saved 64x64 custom_cnn and a service for it on a free loopback port.
struct Served {
  testing::TempDir dir{"service"};
  std::filesystem::path model_path = dir / "m.sczm";
  std::uint32_t crc = 0;
  std::unique_ptr<Service> svc;
  int port = 0;
  std::thread thread;

  explicit Served(std::size_t max_upload = 5u << 20) {
    Model m = Model::build(ArchId::custom_cnn, 12, {1, 64, 64});
    m.set_input_norm({0.45, 4.0});
    crc = save_model(m, model_path);
    ServiceConfig cfg;
    cfg.port = 0;
    cfg.model_path = model_path;
    cfg.max_upload_bytes = max_upload;
    svc = std::make_unique<Service>(cfg);
    port = svc->bind();
    thread = std::thread([this] { svc->listen(); });
  }
  ~Served() {
    svc->stop();
    thread.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(30, 0);
    return c;
  }
};

httplib::Result post_image(httplib::Client& c, const std::string& bytes, const std::string& field = "image") {
  httplib::MultipartFormDataItems items{{field, bytes, "upload.png", "image/png"}};
  return c.Post("/api/v1/predict", items);
}

std::string error_code(const httplib::Result& r) {
  const json j = json::parse(r->body);
  REQUIRE(j.contains("error"));
  CHECK(j["error"]["message"].is_string());
  return j["error"]["code"].get<std::string>();
}

std::string page_png(std::uint64_t seed) { return as_string(encode_png(testing::small_pages(1, seed)[0].image)); }

}  // namespace

TEST_CASE("health reports the loaded model") {
  Served s;
  auto c = s.client();
  const auto r = c.Get("/api/v1/health");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->get_header_value("Content-Type") == "application/json");
  const json j = json::parse(r->body);
  CHECK(j["status"] == "ok");
  CHECK(j["model_arch"] == "custom_cnn");
  CHECK(j["model_checksum"] == checksum_hex(s.crc));
  CHECK(j["uptime_seconds"].get<double>() >= 0.0);
  CHECK(j["uptime_seconds"].get<double>() < 5.0);

  const json again = json::parse(c.Get("/api/v1/health")->body);
  CHECK(again["model_arch"] == j["model_arch"]);
  CHECK(again["model_checksum"] == j["model_checksum"]);
}

TEST_CASE("predict happy path") {
  Served s;
  auto c = s.client();
  const std::string png = page_png(3);
  const auto r = post_image(c, png);
  REQUIRE(r);
  REQUIRE(r->status == 200);
  const json j = json::parse(r->body);
  const double p = j["probability_patient"].get<double>();
  CHECK(p >= 0.0);
  CHECK(p <= 1.0);
  CHECK(j["label"] == (p >= 0.5 ? "patient" : "control"));
  CHECK(j["model_arch"] == "custom_cnn");
  CHECK(j["model_checksum"] == checksum_hex(s.crc));
  const json& echo = j["preprocess_echo"];
  CHECK(echo["canvas_w"] == 64);
  CHECK(echo["canvas_h"] == 64);
  CHECK(echo["sigma"] == 2.0);
  CHECK(echo["radius"] == 8);
  CHECK(echo["border"] == "replicate");
  CHECK(echo["ink_threshold"] == 0.5);

  // Same bytes, same answer, also in PGM form.
  CHECK(post_image(c, png)->body == r->body);
  const auto pgm = post_image(c, as_string(encode_pgm(decode_image(std::span(
                                     reinterpret_cast<const std::uint8_t*>(png.data()), png.size())))));
  REQUIRE(pgm->status == 200);
  CHECK(json::parse(pgm->body)["probability_patient"].get<double>() == p);

  CHECK(r->get_header_value("Access-Control-Allow-Origin") == "*");
}

TEST_CASE("client errors map to status codes and machine-readable codes") {
  Served s;
  auto c = s.client();

  const auto blank = post_image(c, as_string(encode_png(Image(64, 64, 1.0))));
  REQUIRE(blank);
  CHECK(blank->status == 400);
  CHECK(error_code(blank) == "no_ink");

  const auto junk = post_image(c, "definitely not an image");
  CHECK(junk->status == 400);
  CHECK(error_code(junk) == "undecodable_image");

  Image big(300, 300, 1.0);
  for (int y = 20; y < 280; ++y)
    for (int x = 20; x < 280; ++x) big.at(x, y) = 0.0;
  const auto huge_content = post_image(c, as_string(encode_png(big)));
  CHECK(huge_content->status == 400);
  CHECK(error_code(huge_content) == "content_too_large");

  const auto too_big = post_image(c, std::string(6u << 20, 'x'));
  REQUIRE(too_big);
  CHECK(too_big->status == 413);
  CHECK(error_code(too_big) == "payload_too_large");

  const auto raw = c.Post("/api/v1/predict", page_png(1), "image/png");
  CHECK(raw->status == 415);
  CHECK(error_code(raw) == "unsupported_media_type");

  const auto wrong_field = post_image(c, page_png(1), "file");
  CHECK(wrong_field->status == 422);
  CHECK(error_code(wrong_field) == "missing_field");

  const auto missing = c.Get("/api/v1/nothing");
  CHECK(missing->status == 404);
  CHECK(error_code(missing) == "not_found");
  CHECK(missing->get_header_value("Access-Control-Allow-Origin") == "*");
}

TEST_CASE("upload limit is configurable") {
  Served s(1000);
  auto c = s.client();
  const auto r = post_image(c, page_png(2));
  CHECK(r->status == 413);
  CHECK(error_code(r) == "payload_too_large");
}

TEST_CASE("CORS preflight") {
  Served s;
  auto c = s.client();
  const auto r = c.Options("/api/v1/predict");
  REQUIRE(r);
  CHECK(r->status == 204);
  CHECK(r->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(r->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
  CHECK(r->get_header_value("Access-Control-Allow-Headers").find("Content-Type") != std::string::npos);
}

TEST_CASE("concurrent predictions are independent") {
  Served s;
  const std::string a = page_png(4), b = page_png(5);
  std::string body_a, body_b;
  int status_a = 0, status_b = 0;
  std::thread ta([&] {
    auto c = s.client();
    for (int i = 0; i < 3; ++i) {
      const auto r = post_image(c, a);
      status_a = r ? r->status : -1;
      body_a = r ? r->body : "";
    }
  });
  std::thread tb([&] {
    auto c = s.client();
    for (int i = 0; i < 3; ++i) {
      const auto r = post_image(c, b);
      status_b = r ? r->status : -1;
      body_b = r ? r->body : "";
    }
  });
  ta.join();
  tb.join();
  CHECK(status_a == 200);
  CHECK(status_b == 200);
  auto direct = [&](const std::string& bytes) {
    const auto out = s.svc->handle_upload({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
    REQUIRE(out.response);
    return to_json(*out.response);
  };
  CHECK(body_a == direct(a));
  CHECK(body_b == direct(b));
  CHECK(body_a != body_b);
}

TEST_CASE("service and CLI predict agree to the last bit") {
  Served s;
  auto c = s.client();
  for (std::uint64_t seed : {6, 7, 8}) {
    const std::string png = page_png(seed);
    const auto path = s.dir / ("img" + std::to_string(seed) + ".png");
    write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(png.data()), png.size()});
    std::ostringstream out, err;
    REQUIRE(run_cli({"scz", "predict", "--json", "--model", s.model_path.string(), path.string()}, out, err) == kExitOk);
    const double cli = json::parse(out.str())["probability_patient"].get<double>();
    const double http = json::parse(post_image(c, png)->body)["probability_patient"].get<double>();
    CHECK(cli == http);
  }
}

TEST_CASE("a corrupt model is refused before binding") {
  testing::TempDir dir("corrupt");
  auto bytes = encode_model(Model::build(ArchId::mini_effnet, 1, {1, 64, 64}));
  bytes[bytes.size() / 3] ^= 0x10;
  write_file_bytes(dir / "bad.sczm", bytes);
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.model_path = dir / "bad.sczm";
  try {
    Service svc(cfg);
    FAIL("corrupt model accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::crc_mismatch);
  }

  std::ostringstream out, err;
  CHECK(run_cli({"scz", "serve", "--port", "0", "--model", (dir / "bad.sczm").string()}, out, err) == kExitFailure);
  CHECK(err.str().rfind("error\tcrc_mismatch\t", 0) == 0);
  CHECK(out.str().find("listening") == std::string::npos);
}

TEST_CASE("service config validation and error schema") {
  ServiceConfig cfg;
  cfg.model_path = "m.sczm";
  cfg.max_upload_bytes = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.max_upload_bytes = 1;
  cfg.port = 70000;
  CHECK_THROWS_AS(cfg.validate(), Error);

  const json e = json::parse(to_json(ServiceError{415, "unsupported_media_type", "x"}));
  CHECK(e == json{{"error", {{"code", "unsupported_media_type"}, {"message", "x"}}}});
}
