#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "npdet/layers.hpp"
#include "npdet/rng.hpp"
#include "npdet/tensor.hpp"

namespace npdet {

struct Shape3 {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& s);  // "HxWxC", the layout of the design tables

struct ConvSpec {
  std::string name;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool batch_norm = true;
  Activation activation = Activation::relu;
};

struct MaxPoolSpec {
  std::string name;
  std::size_t size = 2;
  std::size_t stride = 2;
};

struct FullyConnectedSpec {
  std::string name;
  std::size_t out_features = 1;
};

struct SoftmaxSpec {
  std::string name;
};

struct ResidualBlockSpec {
  std::string name;
  std::size_t out_channels = 1;
  std::size_t stride = 1;
};

using LayerSpec = std::variant<ConvSpec, MaxPoolSpec, FullyConnectedSpec, SoftmaxSpec, ResidualBlockSpec>;

const std::string& layer_name(const LayerSpec& layer);
std::string_view layer_kind(const LayerSpec& layer);

struct NetworkSpec {
  std::string name;
  Shape3 input;
  std::vector<LayerSpec> layers;
};

// Output shape of every layer, in order, without allocating tensors. Throws
// ShapeError naming the first inconsistent layer.
std::vector<Shape3> infer_shapes(const NetworkSpec& spec);

struct LayerParameterCount {
  std::string name;
  std::string kind;
  std::size_t count = 0;
};

struct ParameterReport {
  std::vector<LayerParameterCount> layers;
  std::size_t total = 0;
};

// Kernel, bias and BN scale/shift; pooling and softmax contribute zero.
ParameterReport count_parameters(const NetworkSpec& spec);

// A NetworkSpec with instantiated parameters, gradients and the caches of the
// last forward pass.
class Network {
 public:
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const noexcept { return spec_; }
  const std::vector<Shape3>& shapes() const noexcept { return shapes_; }

  void initialize(Rng& rng);

  // Runs layers in order, through `stop_after` when given, and returns the
  // last output. Activations stay addressable by layer name until the next
  // call. Throws ShapeError with the offending layer name.
  Tensor forward(const Tensor& batch, Mode mode, std::optional<std::string_view> stop_after = std::nullopt);

  // Back-propagates from the last layer run by forward(); accumulates into the
  // parameter gradients and returns the gradient w.r.t. the input batch.
  Tensor backward(const Tensor& grad_output);

  const Tensor& activation(std::string_view layer) const;
  std::optional<std::size_t> layer_index(std::string_view layer) const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> gradients() const;
  void zero_grad();

  // Learnable tensors plus BN running statistics, in a fixed order.
  std::vector<Tensor*> state_tensors();
  std::vector<const Tensor*> state_tensors() const;

  std::size_t parameter_count() const;

  // Direct access to layer parameters, for tests and tooling.
  ConvLayer& conv(std::string_view layer);
  FcLayer& fully_connected(std::string_view layer);
  ResidualBlock& residual(std::string_view layer);

 private:
  struct ConvState {
    ConvLayer layer;
    ConvGrads grads;
    ConvCache cache;
  };
  struct PoolState {
    MaxPoolCache cache;
  };
  struct FcState {
    FcLayer layer;
    FcLayer grads;
    FcCache cache;
  };
  struct SoftmaxState {
    Tensor probabilities;
  };
  struct ResidualState {
    ResidualBlock block;
    ResidualGrads grads;
    ResidualCache cache;
  };
  using State = std::variant<ConvState, PoolState, FcState, SoftmaxState, ResidualState>;

  NetworkSpec spec_;
  std::vector<Shape3> shapes_;
  std::vector<State> states_;
  std::vector<Tensor> activations_;
  std::size_t executed_ = 0;
  bool have_cache_ = false;
};

// Free-function form of Network::forward.
inline Tensor forward_network(Network& network, const Tensor& batch, Mode mode) {
  return network.forward(batch, mode);
}

}  // namespace npdet
