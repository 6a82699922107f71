#include "npdet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "npdet/error.hpp"
#include "npdet/geometry.hpp"
#include "npdet/kernels.hpp"

namespace npdet {

namespace {

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + ": expected NCHW tensor, got " + shape_string(t.shape()));
  }
}

kernels::Conv2dShape conv_geometry(const ConvLayer& layer, const Tensor& input) {
  require_rank4(input, "conv_forward");
  if (input.dim(1) != layer.in_channels()) {
    throw ShapeError("conv_forward: input has " + std::to_string(input.dim(1)) + " channels, kernel expects " +
                     std::to_string(layer.in_channels()));
  }
  return kernels::Conv2dShape::make(input.dim(0), input.dim(1), input.dim(2), input.dim(3), layer.out_channels(),
                                    layer.kernel_height(), layer.kernel_width(), layer.stride, layer.padding);
}

void he_normal(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.values()) v = stddev * rng.normal();
}

}  // namespace

ConvLayer ConvLayer::create(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size,
                            std::size_t stride, std::size_t padding, bool batch_norm, Activation activation) {
  if (in_channels == 0 || out_channels == 0 || kernel_size == 0 || stride == 0) {
    throw ConfigError("conv layer dimensions must be positive");
  }
  ConvLayer layer;
  layer.kernel = Tensor({out_channels, in_channels, kernel_size, kernel_size});
  layer.bias = Tensor({out_channels});
  layer.stride = stride;
  layer.padding = padding;
  layer.has_bn = batch_norm;
  layer.activation = activation;
  if (batch_norm) {
    layer.bn_scale = Tensor({out_channels}, 1.0);
    layer.bn_shift = Tensor({out_channels}, 0.0);
    layer.bn_running_mean = Tensor({out_channels}, 0.0);
    layer.bn_running_var = Tensor({out_channels}, 1.0);
  }
  return layer;
}

std::size_t ConvLayer::learnable_count() const {
  return kernel.size() + bias.size() + (has_bn ? 2 * out_channels() : 0);
}

void ConvLayer::initialize(Rng& rng) {
  he_normal(kernel, in_channels() * kernel_height() * kernel_width(), rng);
  bias.fill(0.0);
}

std::pair<Tensor, ConvCache> conv_forward(ConvLayer& layer, const Tensor& input, Mode mode) {
  const auto geo = conv_geometry(layer, input);
  Tensor output({geo.batch, geo.out_channels, geo.out_height, geo.out_width});
  kernels::conv2d_forward(geo, input.values(), layer.kernel.values(), layer.bias.values(), output.values());

  ConvCache cache;
  cache.mode = mode;
  cache.input = input;

  const std::size_t plane = geo.out_height * geo.out_width;
  const std::size_t channels = geo.out_channels;
  if (layer.has_bn) {
    cache.normalized = Tensor(output.shape());
    cache.inv_std.assign(channels, 0.0);
    const double count = static_cast<double>(geo.batch * plane);
    const double eps = layer.bn.epsilon;
    const double momentum = layer.bn.momentum;
#pragma omp parallel for schedule(static)
    for (long cl = 0; cl < static_cast<long>(channels); ++cl) {
      const auto c = static_cast<std::size_t>(cl);
      double mean = 0.0;
      double var = 0.0;
      if (mode == Mode::train) {
        for (std::size_t n = 0; n < geo.batch; ++n) {
          const double* z = output.data() + (n * channels + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) mean += z[i];
        }
        mean /= count;
        for (std::size_t n = 0; n < geo.batch; ++n) {
          const double* z = output.data() + (n * channels + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) var += (z[i] - mean) * (z[i] - mean);
        }
        var /= count;
        const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
        layer.bn_running_mean[c] = (1.0 - momentum) * layer.bn_running_mean[c] + momentum * mean;
        layer.bn_running_var[c] = (1.0 - momentum) * layer.bn_running_var[c] + momentum * unbiased;
      } else {
        mean = layer.bn_running_mean[c];
        var = layer.bn_running_var[c];
      }
      const double inv_std = 1.0 / std::sqrt(var + eps);
      cache.inv_std[c] = inv_std;
      const double gamma = layer.bn_scale[c];
      const double beta = layer.bn_shift[c];
      for (std::size_t n = 0; n < geo.batch; ++n) {
        double* z = output.data() + (n * channels + c) * plane;
        double* xhat = cache.normalized.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          xhat[i] = (z[i] - mean) * inv_std;
          z[i] = gamma * xhat[i] + beta;
        }
      }
    }
  }
  if (layer.activation == Activation::relu) {
    for (double& v : output.values()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  }
  cache.activated = output;
  return {std::move(output), std::move(cache)};
}

ConvBackward conv_backward(const ConvLayer& layer, const ConvCache& cache, const Tensor& grad_output) {
  require_same_shape(grad_output, cache.activated, "conv_backward grad_output");
  const auto geo = conv_geometry(layer, cache.input);
  const std::size_t plane = geo.out_height * geo.out_width;
  const std::size_t channels = geo.out_channels;

  Tensor grad = grad_output;
  if (layer.activation == Activation::relu) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (!(cache.activated[i] > 0.0)) grad[i] = 0.0;
    }
  }

  ConvBackward result;
  if (layer.has_bn) {
    result.grads.bn_scale = Tensor({channels});
    result.grads.bn_shift = Tensor({channels});
    const double count = static_cast<double>(geo.batch * plane);
#pragma omp parallel for schedule(static)
    for (long cl = 0; cl < static_cast<long>(channels); ++cl) {
      const auto c = static_cast<std::size_t>(cl);
      double dgamma = 0.0;
      double dbeta = 0.0;
      for (std::size_t n = 0; n < geo.batch; ++n) {
        const double* g = grad.data() + (n * channels + c) * plane;
        const double* xhat = cache.normalized.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          dgamma += g[i] * xhat[i];
          dbeta += g[i];
        }
      }
      result.grads.bn_scale[c] = dgamma;
      result.grads.bn_shift[c] = dbeta;
      const double scale = layer.bn_scale[c] * cache.inv_std[c];
      for (std::size_t n = 0; n < geo.batch; ++n) {
        double* g = grad.data() + (n * channels + c) * plane;
        const double* xhat = cache.normalized.data() + (n * channels + c) * plane;
        if (cache.mode == Mode::train) {
          for (std::size_t i = 0; i < plane; ++i) {
            g[i] = scale / count * (count * g[i] - dbeta - xhat[i] * dgamma);
          }
        } else {
          for (std::size_t i = 0; i < plane; ++i) g[i] *= scale;
        }
      }
    }
  }

  result.grads.kernel = Tensor(layer.kernel.shape());
  result.grads.bias = Tensor(layer.bias.shape());
  kernels::conv2d_backward_kernel(geo, cache.input.values(), grad.values(), result.grads.kernel.values(),
                                  result.grads.bias.values());
  result.grad_input = Tensor(cache.input.shape());
  kernels::conv2d_backward_input(geo, grad.values(), layer.kernel.values(), result.grad_input.values());
  return result;
}

std::pair<Tensor, MaxPoolCache> maxpool_forward(const Tensor& input, std::size_t size, std::size_t stride) {
  require_rank4(input, "maxpool_forward");
  if (size == 0 || stride == 0) throw ShapeError("maxpool: size and stride must be positive");
  const std::size_t batch = input.dim(0);
  const std::size_t channels = input.dim(1);
  const std::size_t height = input.dim(2);
  const std::size_t width = input.dim(3);
  const auto k = static_cast<long>(size);
  const auto s = static_cast<long>(stride);
  const std::size_t out_h = output_extent({static_cast<long>(height), k, 0, s});
  const std::size_t out_w = output_extent({static_cast<long>(width), k, 0, s});

  Tensor output({batch, channels, out_h, out_w});
  MaxPoolCache cache;
  cache.input_shape = input.shape();
  cache.argmax.assign(output.size(), 0);
  const long planes = static_cast<long>(batch * channels);
#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < planes; ++pl) {
    const auto p = static_cast<std::size_t>(pl);
    const std::size_t in_base = p * height * width;
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      for (std::size_t ow = 0; ow < out_w; ++ow) {
        std::size_t best = in_base + (oh * stride) * width + ow * stride;
        double best_value = input[best];
        for (std::size_t kh = 0; kh < size; ++kh) {
          for (std::size_t kw = 0; kw < size; ++kw) {
            const std::size_t idx = in_base + (oh * stride + kh) * width + ow * stride + kw;
            if (input[idx] > best_value || std::isnan(input[idx])) {
              best_value = input[idx];
              best = idx;
            }
          }
        }
        const std::size_t out_idx = (p * out_h + oh) * out_w + ow;
        output[out_idx] = best_value;
        cache.argmax[out_idx] = best;
      }
    }
  }
  return {std::move(output), std::move(cache)};
}

Tensor maxpool_backward(const MaxPoolCache& cache, const Tensor& grad_output) {
  if (grad_output.size() != cache.argmax.size()) {
    throw ShapeError("maxpool_backward: gradient has " + std::to_string(grad_output.size()) +
                     " elements, cache expects " + std::to_string(cache.argmax.size()));
  }
  Tensor grad_input(cache.input_shape);
  for (std::size_t i = 0; i < cache.argmax.size(); ++i) grad_input[cache.argmax[i]] += grad_output[i];
  return grad_input;
}

FcLayer FcLayer::create(std::size_t in_features, std::size_t out_features) {
  if (in_features == 0 || out_features == 0) throw ConfigError("fully connected layer dimensions must be positive");
  return {Tensor({out_features, in_features}), Tensor({out_features})};
}

void FcLayer::initialize(Rng& rng) {
  he_normal(weights, in_features(), rng);
  bias.fill(0.0);
}

std::pair<Tensor, FcCache> fc_forward(const FcLayer& layer, const Tensor& input) {
  const std::size_t batch = input.rank() <= 1 ? 1 : input.dim(0);
  const std::size_t in = layer.in_features();
  const std::size_t out = layer.out_features();
  if (batch == 0 || input.size() != batch * in) {
    throw ShapeError("fc_forward: input " + shape_string(input.shape()) + " does not flatten to " +
                     std::to_string(in) + " features per sample");
  }
  FcCache cache;
  cache.input_shape = input.shape();
  cache.input = input;
  cache.input.reshape({batch, in});

  Tensor output({batch, out});
  for (std::size_t n = 0; n < batch; ++n) {
    const double* x = cache.input.data() + n * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* w = layer.weights.data() + o * in;
      double sum = layer.bias[o];
      for (std::size_t i = 0; i < in; ++i) sum += w[i] * x[i];
      output[n * out + o] = sum;
    }
  }
  return {std::move(output), std::move(cache)};
}

FcBackward fc_backward(const FcLayer& layer, const FcCache& cache, const Tensor& grad_output) {
  const std::size_t batch = cache.input.dim(0);
  const std::size_t in = layer.in_features();
  const std::size_t out = layer.out_features();
  if (grad_output.size() != batch * out) {
    throw ShapeError("fc_backward: gradient " + shape_string(grad_output.shape()) + " does not match output " +
                     std::to_string(batch) + "x" + std::to_string(out));
  }
  FcBackward result{Tensor({batch, in}), Tensor(layer.weights.shape()), Tensor(layer.bias.shape())};
  for (std::size_t n = 0; n < batch; ++n) {
    const double* x = cache.input.data() + n * in;
    double* gx = result.grad_input.data() + n * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = grad_output[n * out + o];
      const double* w = layer.weights.data() + o * in;
      double* gw = result.grad_weights.data() + o * in;
      result.grad_bias[o] += g;
      for (std::size_t i = 0; i < in; ++i) {
        gw[i] += g * x[i];
        gx[i] += g * w[i];
      }
    }
  }
  result.grad_input.reshape(cache.input_shape);
  return result;
}

namespace {

std::pair<std::size_t, std::size_t> rows_and_classes(const Tensor& t, const char* what) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  if (t.rank() == 4 && t.dim(2) == 1 && t.dim(3) == 1) return {t.dim(0), t.dim(1)};
  throw ShapeError(std::string(what) + ": expected (N, K) logits, got " + shape_string(t.shape()));
}

}  // namespace

Tensor softmax(const Tensor& logits) {
  const auto [rows, classes] = rows_and_classes(logits, "softmax");
  Tensor probs(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * classes;
    double* p = probs.data() + r * classes;
    const double peak = *std::max_element(z, z + classes);
    double total = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      p[k] = std::exp(z[k] - peak);
      total += p[k];
    }
    for (std::size_t k = 0; k < classes; ++k) p[k] /= total;
  }
  return probs;
}

Tensor softmax_backward(const Tensor& probabilities, const Tensor& grad_output) {
  require_same_shape(probabilities, grad_output, "softmax_backward");
  const auto [rows, classes] = rows_and_classes(probabilities, "softmax_backward");
  Tensor grad(probabilities.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = probabilities.data() + r * classes;
    const double* g = grad_output.data() + r * classes;
    double dot = 0.0;
    for (std::size_t k = 0; k < classes; ++k) dot += p[k] * g[k];
    for (std::size_t k = 0; k < classes; ++k) grad[r * classes + k] = p[k] * (g[k] - dot);
  }
  return grad;
}

SoftmaxLoss softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  const auto [rows, classes] = rows_and_classes(logits, "softmax_cross_entropy");
  if (labels.size() != rows) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " samples");
  }
  SoftmaxLoss result;
  result.probabilities = softmax(logits);
  result.grad_logits = result.probabilities;
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= classes) {
      throw ConfigError("label " + std::to_string(labels[r]) + " out of range for " + std::to_string(classes) +
                        " classes");
    }
    const double* z = logits.data() + r * classes;
    const double peak = *std::max_element(z, z + classes);
    double total = 0.0;
    for (std::size_t k = 0; k < classes; ++k) total += std::exp(z[k] - peak);
    // log-sum-exp form keeps -log p finite for saturated logits.
    result.loss += (std::log(total) + peak - z[labels[r]]) * inv_rows;
    double* g = result.grad_logits.data() + r * classes;
    g[labels[r]] -= 1.0;
    for (std::size_t k = 0; k < classes; ++k) g[k] *= inv_rows;
  }
  return result;
}

ResidualBlock ResidualBlock::create(std::size_t in_channels, std::size_t out_channels, std::size_t stride) {
  ResidualBlock block;
  block.conv1 = ConvLayer::create(in_channels, out_channels, 3, stride, 1, true, Activation::relu);
  block.conv2 = ConvLayer::create(out_channels, out_channels, 3, 1, 1, true, Activation::none);
  if (in_channels != out_channels || stride != 1) {
    block.projection = ConvLayer::create(in_channels, out_channels, 1, stride, 0, true, Activation::none);
  }
  return block;
}

std::size_t ResidualBlock::learnable_count() const {
  return conv1.learnable_count() + conv2.learnable_count() + (projection ? projection->learnable_count() : 0);
}

void ResidualBlock::initialize(Rng& rng) {
  conv1.initialize(rng);
  conv2.initialize(rng);
  if (projection) projection->initialize(rng);
}

std::pair<Tensor, ResidualCache> residual_forward(ResidualBlock& block, const Tensor& input, Mode mode) {
  ResidualCache cache;
  auto [a, c1] = conv_forward(block.conv1, input, mode);
  auto [b, c2] = conv_forward(block.conv2, a, mode);
  cache.conv1 = std::move(c1);
  cache.conv2 = std::move(c2);
  Tensor output = std::move(b);
  if (block.projection) {
    auto [s, cp] = conv_forward(*block.projection, input, mode);
    cache.projection = std::move(cp);
    for (std::size_t i = 0; i < output.size(); ++i) output[i] += s[i];
  } else {
    require_same_shape(output, input, "residual shortcut");
    for (std::size_t i = 0; i < output.size(); ++i) output[i] += input[i];
  }
  for (double& v : output.values()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  cache.output = output;
  return {std::move(output), std::move(cache)};
}

ResidualBackward residual_backward(const ResidualBlock& block, const ResidualCache& cache,
                                   const Tensor& grad_output) {
  require_same_shape(grad_output, cache.output, "residual_backward grad_output");
  Tensor grad = grad_output;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(cache.output[i] > 0.0)) grad[i] = 0.0;
  }
  ResidualBackward result;
  ConvBackward b2 = conv_backward(block.conv2, cache.conv2, grad);
  ConvBackward b1 = conv_backward(block.conv1, cache.conv1, b2.grad_input);
  result.grads.conv1 = std::move(b1.grads);
  result.grads.conv2 = std::move(b2.grads);
  result.grad_input = std::move(b1.grad_input);
  if (block.projection) {
    ConvBackward bp = conv_backward(*block.projection, *cache.projection, grad);
    for (std::size_t i = 0; i < result.grad_input.size(); ++i) result.grad_input[i] += bp.grad_input[i];
    result.grads.projection = std::move(bp.grads);
  } else {
    for (std::size_t i = 0; i < result.grad_input.size(); ++i) result.grad_input[i] += grad[i];
  }
  return result;
}

}  // namespace npdet
