#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "npdet/rng.hpp"
#include "npdet/tensor.hpp"

namespace npdet {

enum class Mode { train, infer };
enum class Activation { none, relu };

struct BatchNormConfig {
  double epsilon = 1e-5;
  // Weight of the current batch in the running-statistic update.
  double momentum = 0.1;
};

// Convolution followed by optional batch normalization and activation.
struct ConvLayer {
  Tensor kernel;  // (out, in, kh, kw)
  Tensor bias;    // (out)
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool has_bn = false;
  Tensor bn_scale;
  Tensor bn_shift;
  Tensor bn_running_mean;
  Tensor bn_running_var;
  BatchNormConfig bn;
  Activation activation = Activation::none;

  // Zero kernel and bias, BN scale 1 / shift 0, running mean 0 / var 1.
  static ConvLayer create(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size,
                          std::size_t stride, std::size_t padding, bool batch_norm, Activation activation);

  std::size_t in_channels() const { return kernel.dim(1); }
  std::size_t out_channels() const { return kernel.dim(0); }
  std::size_t kernel_height() const { return kernel.dim(2); }
  std::size_t kernel_width() const { return kernel.dim(3); }
  std::size_t learnable_count() const;

  // He-normal kernel; bias zero.
  void initialize(Rng& rng);
};

struct ConvCache {
  Tensor input;
  Tensor normalized;  // BN x-hat, empty without BN
  Tensor activated;   // post-activation output (for the ReLU mask)
  std::vector<double> inv_std;
  Mode mode = Mode::train;
};

struct ConvGrads {
  Tensor kernel;
  Tensor bias;
  Tensor bn_scale;  // empty without BN
  Tensor bn_shift;
};

struct ConvBackward {
  Tensor grad_input;
  ConvGrads grads;
};

// Train mode normalizes with batch statistics and updates the running
// statistics in `layer`; infer mode uses the running statistics.
std::pair<Tensor, ConvCache> conv_forward(ConvLayer& layer, const Tensor& input, Mode mode);
ConvBackward conv_backward(const ConvLayer& layer, const ConvCache& cache, const Tensor& grad_output);

struct MaxPoolCache {
  Shape input_shape;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

// Ties resolve to the first maximum in row-major window order.
std::pair<Tensor, MaxPoolCache> maxpool_forward(const Tensor& input, std::size_t size, std::size_t stride);
Tensor maxpool_backward(const MaxPoolCache& cache, const Tensor& grad_output);

struct FcLayer {
  Tensor weights;  // (out, in)
  Tensor bias;     // (out)

  static FcLayer create(std::size_t in_features, std::size_t out_features);
  std::size_t in_features() const { return weights.dim(1); }
  std::size_t out_features() const { return weights.dim(0); }
  std::size_t learnable_count() const { return weights.size() + bias.size(); }
  void initialize(Rng& rng);
};

struct FcCache {
  Tensor input;  // flattened (N, in)
  Shape input_shape;
};

struct FcBackward {
  Tensor grad_input;  // original input shape
  Tensor grad_weights;
  Tensor grad_bias;
};

// Input of any rank whose trailing dimensions flatten to in_features.
// Output is (N, out).
std::pair<Tensor, FcCache> fc_forward(const FcLayer& layer, const Tensor& input);
FcBackward fc_backward(const FcLayer& layer, const FcCache& cache, const Tensor& grad_output);

// Row-wise softmax of an (N, K) or (K) tensor, max-subtracted.
Tensor softmax(const Tensor& logits);
// Vector-Jacobian product of softmax given its output.
Tensor softmax_backward(const Tensor& probabilities, const Tensor& grad_output);

struct SoftmaxLoss {
  double loss = 0.0;  // mean over samples of -log p[label]
  Tensor grad_logits;
  Tensor probabilities;
};

// `logits` is (N, K) or (K) with one label per sample.
SoftmaxLoss softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

// Two 3x3 convs (BN+ReLU, then BN) plus a shortcut, followed by ReLU. The
// shortcut is the identity unless the block changes channels or stride, in
// which case it is a 1x1 projection with BN.
struct ResidualBlock {
  ConvLayer conv1;
  ConvLayer conv2;
  std::optional<ConvLayer> projection;

  static ResidualBlock create(std::size_t in_channels, std::size_t out_channels, std::size_t stride);
  std::size_t learnable_count() const;
  void initialize(Rng& rng);
};

struct ResidualCache {
  ConvCache conv1;
  ConvCache conv2;
  std::optional<ConvCache> projection;
  Tensor output;
};

struct ResidualGrads {
  ConvGrads conv1;
  ConvGrads conv2;
  std::optional<ConvGrads> projection;
};

struct ResidualBackward {
  Tensor grad_input;
  ResidualGrads grads;
};

std::pair<Tensor, ResidualCache> residual_forward(ResidualBlock& block, const Tensor& input, Mode mode);
ResidualBackward residual_backward(const ResidualBlock& block, const ResidualCache& cache, const Tensor& grad_output);

}  // namespace npdet
