#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scz/rng.hpp"
#include "scz/tensor.hpp"

namespace scz {

enum class Mode { train, eval };

// A trainable tensor and its gradient accumulator, owned by a layer.
struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

// Layers work on batched tensors: [B,C,H,W] for spatial layers, [B,N] for
// dense ones. forward() caches what backward() needs, so one instance must
// not be trained from several threads. infer() is const, caches nothing, and
// is safe to call concurrently.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string_view kind() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;

  virtual Tensor infer(const Tensor& x) const = 0;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  // Accumulates parameter gradients and returns d(loss)/d(input).
  // Errc::no_cached_forward when called before forward().
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual std::vector<ParamRef> params() { return {}; }

  // Makes stochastic layers reuse their last random draw, so repeated
  // forwards see the same function (finite-difference checks need this).
  virtual void freeze_randomness(bool) {}

  void zero_grad();
};

using LayerPtr = std::unique_ptr<Layer>;

// -- primitive ops ----------------------------------------------------------

struct Conv2dSpec {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

// Cross-correlation (no kernel flip) plus bias. input [C_in,H,W] or
// [B,C_in,H,W]; weights [C_out, C_in/groups, k, k]; bias [C_out].
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, Conv2dSpec spec = {});

struct Conv2dGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out,
                            Conv2dSpec spec = {});

// -- layers -----------------------------------------------------------------

class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Conv2dSpec spec = {});

  std::string_view kind() const override { return "conv2d"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> params() override;

  const Conv2dSpec& spec() const { return spec_; }
  Tensor& weights() { return weights_; }
  Tensor& bias() { return bias_; }

 private:
  Conv2dSpec spec_;
  Tensor weights_, bias_, grad_weights_, grad_bias_;
  std::optional<Tensor> input_;
};

// Max over window x window patches. The 2x2/stride-2 form is "maxpool2" and
// requires even spatial dims; ties route the gradient to the first maximum
// in row-major order.
class MaxPool final : public Layer {
 public:
  static MaxPool halving() { return MaxPool(2, 2, 0); }
  // 3x3, stride 1, padded by 1: keeps spatial size.
  static MaxPool same3x3() { return MaxPool(3, 1, 1); }

  std::string_view kind() const override { return window_ == 2 && stride_ == 2 ? "maxpool2" : "maxpool3x3"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  MaxPool(int window, int stride, int padding) : window_(window), stride_(stride), padding_(padding) {}
  Tensor run(const Tensor& x, std::vector<std::size_t>* argmax) const;

  int window_, stride_, padding_;
  std::optional<Shape> input_shape_;
  std::vector<std::size_t> argmax_;
};

class Relu final : public Layer {
 public:
  std::string_view kind() const override { return "relu"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::optional<Tensor> output_;
};

// y = x W^T + b with W [out, in].
class Dense final : public Layer {
 public:
  Dense(std::size_t in_features, std::size_t out_features);

  std::string_view kind() const override { return "dense"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> params() override;

  Tensor& weights() { return weights_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weights_, bias_, grad_weights_, grad_bias_;
  std::optional<Tensor> input_;
};

class Flatten final : public Layer {
 public:
  std::string_view kind() const override { return "flatten"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::optional<Shape> input_shape_;
};

// [B,C,H,W] -> [B,C]
class GlobalAvgPool final : public Layer {
 public:
  std::string_view kind() const override { return "global_avg_pool"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::optional<Shape> input_shape_;
};

// Inverted dropout: in training each element survives with probability
// 1 - rate and is scaled by 1 / (1 - rate). Identity in eval mode.
class Dropout final : public Layer {
 public:
  Dropout(double rate, std::uint64_t seed);

  std::string_view kind() const override { return "dropout"; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor infer(const Tensor& x) const override { return x; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  void freeze_randomness(bool frozen) override { frozen_ = frozen; }

  double rate() const { return rate_; }

 private:
  double rate_;
  Rng rng_;
  bool frozen_ = false;
  bool has_forward_ = false;
  std::vector<double> mask_;
};

// Channel gate: y[b,c,h,w] = x[b,c,h,w] * sigmoid(s[b,c]). Takes two inputs
// so it sits outside the single-input Layer contract.
class SigmoidGate {
 public:
  std::string_view kind() const { return "sigmoid_gate"; }
  Tensor infer(const Tensor& x, const Tensor& s) const;
  Tensor forward(const Tensor& x, const Tensor& s);
  // Returns (d/dx, d/ds).
  std::pair<Tensor, Tensor> backward(const Tensor& grad_out);

 private:
  std::optional<Tensor> x_;
  std::optional<Tensor> gate_;
};

// Named chain of layers; itself a Layer so blocks can nest.
class Sequential final : public Layer {
 public:
  Sequential() = default;

  Sequential& add(std::string name, LayerPtr layer);

  std::string_view kind() const override { return "sequential"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> params() override;
  void freeze_randomness(bool frozen) override;

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i].second; }
  const Layer& layer(std::size_t i) const { return *layers_[i].second; }
  const std::string& name(std::size_t i) const { return layers_[i].first; }

 private:
  std::vector<std::pair<std::string, LayerPtr>> layers_;
};

// Concatenates along the channel axis of [B,C,H,W] tensors.
Tensor concat_channels(const std::vector<Tensor>& parts);

// Four parallel branches over one input, channel-concatenated:
// 1x1 conv, 3x3 conv, 5x5 conv, and 3x3 max-pool followed by a 1x1 conv;
// each conv is followed by ReLU.
class InceptionBlock final : public Layer {
 public:
  InceptionBlock(std::size_t in_channels, std::size_t branch_channels);

  std::string_view kind() const override { return "inception_block"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> params() override;

  std::size_t out_channels() const { return 4 * branch_channels_; }

 private:
  std::size_t branch_channels_;
  std::vector<std::pair<std::string, Sequential>> branches_;
  bool has_forward_ = false;
};

// Inverted bottleneck: 1x1 expand + ReLU, 3x3 depthwise + ReLU,
// squeeze-excitation gate, linear 1x1 projection, and an identity shortcut
// when input and output shapes agree.
class MBConvBlock final : public Layer {
 public:
  MBConvBlock(std::size_t in_channels, std::size_t out_channels, std::size_t expand_ratio, int stride,
              std::size_t se_reduction);

  std::string_view kind() const override { return "mbconv_block"; }
  Shape output_shape(const Shape& input) const override;
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamRef> params() override;

  bool has_residual() const { return residual_; }

 private:
  bool residual_;
  Sequential expand_, depthwise_, squeeze_, project_;
  SigmoidGate gate_;
  bool has_forward_ = false;
};

// Numerically stable softmax over the last axis of [B,K].
Tensor softmax(const Tensor& logits);

}  // namespace scz
