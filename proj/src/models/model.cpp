#include "scz/model.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "scz/error.hpp"
#include "scz/image_io.hpp"
#include "scz/rng.hpp"

namespace scz {
namespace {

Sequential custom_cnn(const InputSpec& in, std::uint64_t seed) {
  if (in.height % 8 != 0 || in.width % 8 != 0) {
    throw Error(Errc::shape_mismatch, "custom_cnn needs canvas dims divisible by 8");
  }
  Sequential s;
  const std::size_t widths[] = {16, 32, 64};
  std::size_t channels = in.channels;
  for (int i = 0; i < 3; ++i) {
    const std::string n = std::to_string(i + 1);
    s.add("conv" + n, std::make_unique<Conv2d>(channels, widths[i], 3, Conv2dSpec{1, 1, 1}));
    s.add("relu" + n, std::make_unique<Relu>());
    s.add("pool" + n, std::make_unique<MaxPool>(MaxPool::halving()));
    channels = widths[i];
  }
  s.add("flatten", std::make_unique<Flatten>());
  s.add("fc1", std::make_unique<Dense>(channels * (in.height / 8) * (in.width / 8), 128));
  s.add("relu4", std::make_unique<Relu>());
  s.add("dropout", std::make_unique<Dropout>(0.5, mix_seed(seed, 0xD0)));
  s.add("fc2", std::make_unique<Dense>(128, kClassCount));
  return s;
}

Sequential mini_inception(const InputSpec& in) {
  if (in.height % 8 != 0 || in.width % 8 != 0) {
    throw Error(Errc::shape_mismatch, "mini_inception needs canvas dims divisible by 8");
  }
  Sequential s;
  s.add("stem", std::make_unique<Conv2d>(in.channels, 16, 3, Conv2dSpec{2, 1, 1}));
  s.add("stem_relu", std::make_unique<Relu>());
  s.add("pool1", std::make_unique<MaxPool>(MaxPool::halving()));
  s.add("inception1", std::make_unique<InceptionBlock>(16, 8));
  s.add("pool2", std::make_unique<MaxPool>(MaxPool::halving()));
  s.add("inception2", std::make_unique<InceptionBlock>(32, 8));
  s.add("gap", std::make_unique<GlobalAvgPool>());
  s.add("fc", std::make_unique<Dense>(32, kClassCount));
  return s;
}

Sequential mini_effnet(const InputSpec& in) {
  Sequential s;
  s.add("stem", std::make_unique<Conv2d>(in.channels, 16, 3, Conv2dSpec{2, 1, 1}));
  s.add("stem_relu", std::make_unique<Relu>());
  s.add("mbconv1", std::make_unique<MBConvBlock>(16, 24, 4, 2, 4));
  s.add("mbconv2", std::make_unique<MBConvBlock>(24, 24, 4, 1, 4));
  s.add("gap", std::make_unique<GlobalAvgPool>());
  s.add("fc", std::make_unique<Dense>(24, kClassCount));
  return s;
}

float to_f32(double v) { return static_cast<float>(v); }

constexpr std::string_view kInputNormName = "input_norm";

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }
  std::span<const std::uint8_t> view() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(Errc::schema_mismatch, "model file ends inside a record");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(ArchId arch) {
  switch (arch) {
    case ArchId::custom_cnn: return "custom_cnn";
    case ArchId::mini_inception: return "mini_inception";
    case ArchId::mini_effnet: return "mini_effnet";
  }
  return "custom_cnn";
}

ArchId parse_arch(std::string_view name) {
  for (ArchId a : kAllArchs) {
    if (to_string(a) == name) return a;
  }
  throw Error(Errc::bad_config, "unknown architecture '" + std::string(name) + "'");
}

Model Model::build(ArchId arch, std::uint64_t seed, InputSpec input) {
  if (input.channels != 1 || input.height == 0 || input.width == 0) {
    throw Error(Errc::shape_mismatch, "models take one-channel, non-empty inputs");
  }
  Sequential net;
  switch (arch) {
    case ArchId::custom_cnn: net = custom_cnn(input, seed); break;
    case ArchId::mini_inception: net = mini_inception(input); break;
    case ArchId::mini_effnet: net = mini_effnet(input); break;
  }
  const Shape out = net.output_shape({1, input.channels, input.height, input.width});
  if (out != Shape{1, static_cast<std::size_t>(kClassCount)}) {
    throw Error(Errc::shape_mismatch, "architecture does not reduce to class logits");
  }
  Model m(arch, input, std::move(net));
  std::uint64_t stream = 0;
  auto params = m.params();
  // The logit layer starts small so the untrained model sits near p = 0.5.
  const Tensor* logit_weights = params.size() >= 2 ? params[params.size() - 2].value : nullptr;
  for (auto& p : params) {
    Tensor& t = *p.value;
    Rng rng(seed, stream++);
    if (p.name.ends_with(".bias")) {
      t.fill(0.0);
      continue;
    }
    const double fan_in = static_cast<double>(t.size() / t.dim(0));
    const double limit = std::sqrt(6.0 / fan_in) * (&t == logit_weights ? 0.1 : 1.0);
    for (auto& v : t.data()) v = rng.uniform(-limit, limit);
  }
  m.round_weights_to_float();
  return m;
}

void Model::set_input_norm(const InputNorm& norm) {
  if (!std::isfinite(norm.mean) || !std::isfinite(norm.scale) || !(norm.scale > 0.0)) {
    throw Error(Errc::bad_config, "input standardization needs a finite mean and a positive scale");
  }
  // The volatile store keeps the rounding: g++ 11 at -O3 folds a pair of
  // double->float->double round trips into a plain copy.
  volatile float mean = to_f32(norm.mean);
  volatile float scale = to_f32(norm.scale);
  norm_ = {static_cast<double>(mean), static_cast<double>(scale)};
}

Tensor Model::standardize(const Tensor& batch) const {
  require_shape(batch, {batch.rank() == 4 ? batch.dim(0) : 0, input_.channels, input_.height, input_.width},
                "model input");
  Tensor x = batch;
  for (auto& v : x.data()) v = (v - norm_.mean) * norm_.scale;
  return x;
}

Tensor Model::infer(const Tensor& batch) const { return net_.infer(standardize(batch)); }

Tensor Model::forward(const Tensor& batch, Mode mode) {
  require_finite(batch, "model input");
  return net_.forward(standardize(batch), mode);
}

Tensor Model::backward(const Tensor& grad_logits) {
  Tensor g = net_.backward(grad_logits);
  for (auto& v : g.data()) v *= norm_.scale;
  return g;
}

std::vector<std::pair<std::string, Tensor>> Model::named_weights() const {
  std::vector<std::pair<std::string, Tensor>> out;
  // params() needs a mutable network but only pointers are read here.
  for (auto& p : const_cast<Sequential&>(net_).params()) out.emplace_back(p.name, *p.value);
  return out;
}

std::vector<Tensor> Model::weights() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_weights()) out.push_back(std::move(t));
  return out;
}

void Model::set_weights(const std::vector<Tensor>& values) {
  auto ps = params();
  if (ps.size() != values.size()) throw Error(Errc::schema_mismatch, "weight count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    require_shape(values[i], ps[i].value->shape(), ps[i].name);
    *ps[i].value = values[i];
  }
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_weights()) n += t.size();
  return n;
}

void Model::round_weights_to_float() {
  for (auto& p : params()) {
    for (auto& v : p.value->data()) v = static_cast<double>(to_f32(v));
  }
}

InputNorm fit_input_norm(const std::vector<const Image*>& images) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const Image* img : images) {
    for (double v : img->values()) {
      sum += v;
      sq += v * v;
    }
    n += img->values().size();
  }
  if (n == 0) throw Error(Errc::empty_image, "cannot fit input standardization without pixels");
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
  const double sd = std::sqrt(var);
  return {mean, sd > 1e-12 ? 1.0 / sd : 1.0};
}

Label label_for(double p_patient) { return p_patient >= 0.5 ? Label::patient : Label::control; }

Tensor images_to_batch(const std::vector<const Image*>& images) {
  if (images.empty()) throw Error(Errc::shape_mismatch, "empty image batch");
  const auto w = static_cast<std::size_t>(images.front()->width());
  const auto h = static_cast<std::size_t>(images.front()->height());
  Tensor batch({images.size(), 1, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = *images[i];
    if (static_cast<std::size_t>(img.width()) != w || static_cast<std::size_t>(img.height()) != h) {
      throw Error(Errc::shape_mismatch, "images in a batch must share dimensions");
    }
    std::copy(img.values().begin(), img.values().end(), batch.ptr() + i * w * h);
  }
  return batch;
}

std::vector<Prediction> predict_batch(const Model& model, const std::vector<const Image*>& images) {
  for (const Image* img : images) {
    if (static_cast<std::size_t>(img->width()) != model.input_spec().width ||
        static_cast<std::size_t>(img->height()) != model.input_spec().height) {
      throw Error(Errc::shape_mismatch, "image " + std::to_string(img->width()) + "x" +
                                            std::to_string(img->height()) + " does not match model input");
    }
  }
  const Tensor probs = softmax(model.infer(images_to_batch(images)));
  std::vector<Prediction> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out[i].p_control = probs[2 * i];
    out[i].p_patient = probs[2 * i + 1];
    out[i].label = label_for(out[i].p_patient);
  }
  return out;
}

Prediction predict(const Model& model, const Image& img) { return predict_batch(model, {&img}).front(); }

// -- serialization -------------------------------------------------------------

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string checksum_hex(std::uint32_t crc) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return buf;
}

std::vector<std::uint8_t> encode_model(const Model& model) {
  ByteWriter w;
  w.raw("SCZM");
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(model.arch()));
  w.u32(static_cast<std::uint32_t>(model.input_spec().channels));
  w.u32(static_cast<std::uint32_t>(model.input_spec().height));
  w.u32(static_cast<std::uint32_t>(model.input_spec().width));
  auto tensors = model.named_weights();
  Tensor norm({2});
  norm[0] = model.input_norm().mean;
  norm[1] = model.input_norm().scale;
  tensors.insert(tensors.begin(), {std::string(kInputNormName), norm});
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f32(to_f32(v));
  }
  w.u32(crc32_of(w.view()));
  return w.take();
}

LoadedModel decode_model(std::span<const std::uint8_t> bytes, std::optional<ArchId> expected) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "SCZM", 4) != 0) {
    throw Error(Errc::bad_magic, "not a model file (missing SCZM magic)");
  }
  // Checksum before version, so a damaged version field reads as corruption.
  if (bytes.size() < 12) throw Error(Errc::crc_mismatch, "model file too short for a checksum");
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4));
  const std::uint32_t stored = tail.u32();
  if (crc32_of(body) != stored) throw Error(Errc::crc_mismatch, "model file checksum mismatch");
  ByteReader header(bytes.subspan(4));
  const std::uint32_t version = header.u32();
  if (version != kModelFormatVersion) {
    throw Error(Errc::unsupported_version, "model format version " + std::to_string(version) + " is not supported");
  }

  ByteReader r(body.subspan(8));
  const std::uint32_t arch_code = r.u32();
  if (arch_code < 1 || arch_code > 3) throw Error(Errc::schema_mismatch, "unknown architecture code");
  const auto arch = static_cast<ArchId>(arch_code);
  if (expected && *expected != arch) {
    throw Error(Errc::schema_mismatch, "model file holds " + std::string(to_string(arch)) + ", expected " +
                                           std::string(to_string(*expected)));
  }
  InputSpec input;
  input.channels = r.u32();
  input.height = r.u32();
  input.width = r.u32();
  Model model = Model::build(arch, 0, input);
  auto params = model.params();
  const std::uint32_t count = r.u32();
  if (count != params.size() + 1) {
    throw Error(Errc::schema_mismatch, "tensor count differs from architecture schema");
  }
  Tensor norm({2});
  params.insert(params.begin(), ParamRef{std::string(kInputNormName), &norm, nullptr});
  for (auto& p : params) {
    const std::string name = r.str(r.u32());
    if (name != p.name) throw Error(Errc::schema_mismatch, "expected tensor '" + p.name + "', found '" + name + "'");
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    if (shape != p.value->shape()) {
      throw Error(Errc::schema_mismatch, "tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                                             shape_str(p.value->shape()));
    }
    for (auto& v : p.value->data()) {
      v = static_cast<double>(r.f32());
      if (!std::isfinite(v)) throw Error(Errc::non_finite, "tensor '" + name + "' holds a non-finite value");
    }
  }
  if (r.remaining() != 0) throw Error(Errc::schema_mismatch, "trailing bytes after the last tensor");
  try {
    model.set_input_norm({norm[0], norm[1]});
  } catch (const Error& e) {
    throw Error(Errc::schema_mismatch, e.what());
  }
  return {std::move(model), stored};
}

std::uint32_t save_model(const Model& model, const std::filesystem::path& path) {
  const auto bytes = encode_model(model);
  write_file_bytes(path, bytes);
  ByteReader tail(std::span<const std::uint8_t>(bytes).last(4));
  return tail.u32();
}

LoadedModel load_model(const std::filesystem::path& path, std::optional<ArchId> expected) {
  return decode_model(read_file_bytes(path), expected);
}

}  // namespace scz
