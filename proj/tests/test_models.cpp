#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "scz/error.hpp"
#include "scz/image_io.hpp"
#include "scz/model.hpp"
#include "support.hpp"

using namespace scz;

namespace {

Errc code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no scz::Error thrown");
  return Errc::io_error;
}

// Parameter count of custom_cnn worked out from its layer list.
std::size_t custom_cnn_count(std::size_t h, std::size_t w) {
  auto conv = [](std::size_t in, std::size_t out) { return out * in * 9 + out; };
  auto dense = [](std::size_t in, std::size_t out) { return out * in + out; };
  const std::size_t flat = 64 * (h / 8) * (w / 8);
  return conv(1, 16) + conv(16, 32) + conv(32, 64) + dense(flat, 128) + dense(128, 2);
}

Image probe_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(static_cast<int>(w), static_cast<int>(h));
  for (auto& v : img.values()) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("custom_cnn parameter count") {
  CHECK(custom_cnn_count(128, 128) == 2120834);
  for (std::size_t s : {64, 128}) {
    CHECK(Model::build(ArchId::custom_cnn, 0, {1, s, s}).parameter_count() == custom_cnn_count(s, s));
  }
}

TEST_CASE("every architecture maps 64, 128 and 256 canvases to two logits") {
  for (ArchId arch : kAllArchs)
    for (std::size_t s : {64, 128, 256}) {
      CAPTURE(to_string(arch));
      CAPTURE(s);
      const Model m = Model::build(arch, 3, {1, s, s});
      const Tensor y = m.infer(Tensor({1, 1, s, s}, 0.0));
      REQUIRE(y.shape() == Shape{1, 2});
      CHECK(std::isfinite(y[0]));
      CHECK(std::isfinite(y[1]));
    }
  CHECK(code_of([] { Model::build(ArchId::custom_cnn, 0, {1, 100, 100}); }) == Errc::shape_mismatch);
  CHECK(code_of([] { Model::build(ArchId::mini_inception, 0, {1, 60, 60}); }) == Errc::shape_mismatch);
}

TEST_CASE("initialization is seeded and binary32-exact") {
  for (ArchId arch : kAllArchs) {
    const Model a = Model::build(arch, 42, {1, 64, 64});
    const Model b = Model::build(arch, 42, {1, 64, 64});
    const Model c = Model::build(arch, 43, {1, 64, 64});
    CHECK(a.weights() == b.weights());
    CHECK(a.weights() != c.weights());
    for (const Tensor& t : a.weights())
      for (double v : t.data()) REQUIRE(v == static_cast<double>(static_cast<float>(v)));
  }
}

TEST_CASE("arch names") {
  for (ArchId arch : kAllArchs) CHECK(parse_arch(to_string(arch)) == arch);
  CHECK_THROWS_AS(parse_arch("resnet"), Error);
}

TEST_CASE("prediction probabilities and the tie rule") {
  CHECK(label_for(0.5) == Label::patient);
  CHECK(label_for(std::nextafter(0.5, 0.0)) == Label::control);
  CHECK(label_for(1.0) == Label::patient);
  CHECK(label_for(0.0) == Label::control);

  for (ArchId arch : kAllArchs) {
    const Model m = Model::build(arch, 1, {1, 64, 64});
    for (std::uint64_t s = 0; s < 3; ++s) {
      const Prediction p = predict(m, probe_image(64, 64, s));
      CHECK(std::abs(p.p_control + p.p_patient - 1.0) <= 1e-9);
      CHECK(p.label == label_for(p.p_patient));
    }
    CHECK(code_of([&] { predict(m, probe_image(32, 64, 0)); }) == Errc::shape_mismatch);
  }
}

TEST_CASE("batched and single predictions agree") {
  const Model m = Model::build(ArchId::mini_effnet, 5, {1, 64, 64});
  std::vector<Image> imgs;
  for (std::uint64_t s = 0; s < 5; ++s) imgs.push_back(probe_image(64, 64, s));
  std::vector<const Image*> ptrs;
  for (const auto& i : imgs) ptrs.push_back(&i);
  const auto batch = predict_batch(m, ptrs);
  // Batching changes GEMM summation order, so only near-equality holds.
  for (std::size_t i = 0; i < imgs.size(); ++i)
    CHECK(batch[i].p_patient == doctest::Approx(predict(m, imgs[i]).p_patient).epsilon(1e-12));
}

TEST_CASE("model file round trip") {
  testing::TempDir dir("model");
  for (ArchId arch : kAllArchs) {
    Model m = Model::build(arch, 9, {1, 64, 64});
    m.set_input_norm({0.4375, 3.25});
    const auto path = dir / (std::string(to_string(arch)) + ".sczm");
    const std::uint32_t crc = save_model(m, path);
    const auto bytes = read_file_bytes(path);
    CHECK(crc == oracle::crc32(std::span(bytes).first(bytes.size() - 4)));
    CHECK(crc32_of(bytes) == oracle::crc32(bytes));

    const LoadedModel back = load_model(path);
    CHECK(back.checksum == crc);
    CHECK(back.model.arch() == arch);
    CHECK(back.model.input_norm() == m.input_norm());
    CHECK(back.model.weights() == m.weights());
    const Image img = probe_image(64, 64, 7);
    const Tensor probe = images_to_batch({&img});
    CHECK(back.model.infer(probe) == m.infer(probe));
    CHECK(encode_model(back.model) == bytes);
  }
}

TEST_CASE("model file errors") {
  const Model m = Model::build(ArchId::custom_cnn, 2, {1, 64, 64});
  const auto good = encode_model(m);

  auto last = good;
  last.back() ^= 0x01;
  CHECK(code_of([&] { decode_model(last); }) == Errc::crc_mismatch);

  auto middle = good;
  middle[middle.size() / 2] ^= 0x40;
  CHECK(code_of([&] { decode_model(middle); }) == Errc::crc_mismatch);

  auto magic = good;
  magic[0] = 'X';
  CHECK(code_of([&] { decode_model(magic); }) == Errc::bad_magic);

  // A flipped version byte is corruption; an intact file of another version is not.
  auto version = good;
  version[4] = 9;
  CHECK(code_of([&] { decode_model(version); }) == Errc::crc_mismatch);
  version.resize(version.size() - 4);
  const std::uint32_t vcrc = oracle::crc32(version);
  for (int k = 0; k < 4; ++k) version.push_back(static_cast<std::uint8_t>(vcrc >> (8 * k)));
  CHECK(code_of([&] { decode_model(version); }) == Errc::unsupported_version);

  CHECK(code_of([&] { decode_model(std::span(good).first(10)); }) == Errc::crc_mismatch);

  // Intact checksum over a body that stops mid-tensor.
  std::vector<std::uint8_t> cut(good.begin(), good.begin() + 200);
  const std::uint32_t crc = oracle::crc32(cut);
  for (int k = 0; k < 4; ++k) cut.push_back(static_cast<std::uint8_t>(crc >> (8 * k)));
  CHECK(code_of([&] { decode_model(cut); }) == Errc::schema_mismatch);
  CHECK(code_of([&] { decode_model(good, ArchId::mini_inception); }) == Errc::schema_mismatch);
  CHECK_NOTHROW(decode_model(good, ArchId::custom_cnn));

  testing::TempDir dir("missing");
  CHECK(code_of([&] { load_model(dir / "nope.sczm"); }) == Errc::unreadable_file);
}

TEST_CASE("input standardization") {
  std::vector<Image> imgs{Image(2, 2, std::vector<double>{0, 1, 0, 1}), Image(2, 2, std::vector<double>{1, 1, 0, 0})};
  const InputNorm n = fit_input_norm({&imgs[0], &imgs[1]});
  CHECK(n.mean == 0.5);
  CHECK(n.scale == doctest::Approx(2.0).epsilon(1e-12));

  Model m = Model::build(ArchId::mini_inception, 0, {1, 64, 64});
  CHECK_THROWS_AS(m.set_input_norm({0.0, 0.0}), Error);
  CHECK_THROWS_AS(m.set_input_norm({NAN, 1.0}), Error);
  m.set_input_norm({0.1, 3.0});
  CHECK(m.input_norm().mean == static_cast<double>(0.1f));
}

TEST_CASE("model backward returns the raw-input gradient") {
  for (ArchId arch : kAllArchs) {
    CAPTURE(to_string(arch));
    Model m = Model::build(arch, 4, {1, 16, 16});
    m.set_input_norm({0.3, 2.0});
    // Small nonzero biases keep hidden ReLUs off exact zeros.
    Rng rng(8);
    for (auto& p : m.params())
      if (p.value->rank() == 1)
        for (auto& v : p.value->data()) v = rng.uniform(-0.1, 0.1);
    Tensor x({2, 1, 16, 16});
    for (auto& v : x.data()) v = rng.uniform();
    const Tensor c({2, 2}, std::vector{0.7, -0.2, -0.5, 0.9});
    auto loss = [&](const Tensor& in) {
      const Tensor y = m.forward(in, Mode::eval);
      double l = 0;
      for (std::size_t i = 0; i < y.size(); ++i) l += c[i] * y[i];
      return l;
    };
    m.zero_grad();
    m.forward(x, Mode::eval);
    const Tensor dx = m.backward(c);
    std::size_t compared = 0;
    for (std::size_t i = 0; i < x.size(); i += 7) {
      auto diff = [&](double eps) {
        Tensor up = x, down = x;
        up[i] += eps;
        down[i] -= eps;
        return (loss(up) - loss(down)) / (2 * eps);
      };
      const double n1 = diff(1e-5), n2 = diff(5e-6);
      if (std::abs(n1 - n2) > 1e-3 * std::max(std::abs(n1), 1e-6)) continue;  // hidden kink
      CHECK(dx[i] == doctest::Approx(n1).epsilon(1e-4).scale(1e-2));
      ++compared;
    }
    CHECK(compared > 60);
  }
}
