#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scz/image.hpp"
#include "scz/label.hpp"
#include "scz/layers.hpp"

namespace scz {

enum class ArchId : std::uint32_t { custom_cnn = 1, mini_inception = 2, mini_effnet = 3 };

std::string_view to_string(ArchId arch);
ArchId parse_arch(std::string_view name);
inline constexpr ArchId kAllArchs[] = {ArchId::custom_cnn, ArchId::mini_inception, ArchId::mini_effnet};

struct InputSpec {
  std::size_t channels = 1;
  std::size_t height = 128;
  std::size_t width = 128;

  bool operator==(const InputSpec&) const = default;
};

// Fixed affine input standardization, (x - mean) * scale, applied before the
// network. Fitted on the training images (not trained by the optimizer) and
// stored in the model file next to the weights.
struct InputNorm {
  double mean = 0.0;
  double scale = 1.0;

  bool operator==(const InputNorm&) const = default;
};

// Pixel mean and reciprocal standard deviation over all images.
InputNorm fit_input_norm(const std::vector<const Image*>& images);

// One of the three classifier networks: a [B,1,H,W] batch maps to [B,2]
// logits (index 0 = control, 1 = patient).
//
// Parameters are kept exactly representable as binary32 (they are rounded
// after initialization and after every optimizer step), so a model survives
// the float32 file format without any change.
class Model {
 public:
  // He-uniform weights and zero biases, seeded per parameter tensor.
  // Errc::shape_mismatch when the canvas cannot feed the architecture.
  static Model build(ArchId arch, std::uint64_t seed, InputSpec input = {});

  ArchId arch() const { return arch_; }
  const InputSpec& input_spec() const { return input_; }
  const InputNorm& input_norm() const { return norm_; }
  // Rounds both values to binary32; Errc::bad_config unless finite with scale > 0.
  void set_input_norm(const InputNorm& norm);

  // Eval mode, no caching; safe from several threads at once.
  Tensor infer(const Tensor& batch) const;

  Tensor forward(const Tensor& batch, Mode mode);
  // Returns the gradient with respect to the raw (unstandardized) batch.
  Tensor backward(const Tensor& grad_logits);
  void zero_grad() { net_.zero_grad(); }

  std::vector<ParamRef> params() { return net_.params(); }
  std::vector<std::pair<std::string, Tensor>> named_weights() const;
  std::vector<Tensor> weights() const;
  void set_weights(const std::vector<Tensor>& values);
  std::size_t parameter_count() const;

  void round_weights_to_float();

  const Sequential& network() const { return net_; }

 private:
  Model(ArchId arch, InputSpec input, Sequential net) : arch_(arch), input_(input), net_(std::move(net)) {}

  Tensor standardize(const Tensor& batch) const;

  ArchId arch_;
  InputSpec input_;
  InputNorm norm_;
  Sequential net_;
};

struct Prediction {
  double p_control = 0.5;
  double p_patient = 0.5;
  Label label = Label::patient;
};

// Patient iff p_patient >= 0.5; a tie labels patient.
Label label_for(double p_patient);

// Packs same-sized images into a [B,1,H,W] batch.
Tensor images_to_batch(const std::vector<const Image*>& images);

// Errc::shape_mismatch unless the image matches the model's input size.
Prediction predict(const Model& model, const Image& img);
std::vector<Prediction> predict_batch(const Model& model, const std::vector<const Image*>& images);

// -- model file ------------------------------------------------------------
//
// Little-endian layout:
//   "SCZM" | u32 version=1 | u32 arch | u32 channels | u32 height | u32 width
//   | u32 tensor_count | tensor_count x { u32 name_len | name | u32 rank
//   | u32 dims[rank] | f32 values[prod(dims)] } | u32 CRC-32 of all preceding bytes

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> encode_model(const Model& model);

struct LoadedModel {
  Model model;
  std::uint32_t checksum;  // the file's trailing CRC-32
};

// Errors, checked in this order: bad_magic, crc_mismatch, unsupported_version,
// schema_mismatch (tensor list differs from the architecture's, or arch != expected).
LoadedModel decode_model(std::span<const std::uint8_t> bytes, std::optional<ArchId> expected = std::nullopt);

std::uint32_t save_model(const Model& model, const std::filesystem::path& path);
LoadedModel load_model(const std::filesystem::path& path, std::optional<ArchId> expected = std::nullopt);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);
std::string checksum_hex(std::uint32_t crc);

}  // namespace scz
