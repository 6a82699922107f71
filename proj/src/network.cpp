#include "npdet/network.hpp"

#include <string>

#include "npdet/error.hpp"
#include "npdet/geometry.hpp"

namespace npdet {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::size_t extent(std::size_t in, std::size_t kernel, std::size_t padding, std::size_t stride) {
  return output_extent({static_cast<long>(in), static_cast<long>(kernel), static_cast<long>(padding),
                        static_cast<long>(stride)});
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void add_into(ConvGrads& dst, const ConvGrads& src) {
  add_into(dst.kernel, src.kernel);
  add_into(dst.bias, src.bias);
  if (!dst.bn_scale.empty()) {
    add_into(dst.bn_scale, src.bn_scale);
    add_into(dst.bn_shift, src.bn_shift);
  }
}

ConvGrads zero_grads_for(const ConvLayer& layer) {
  ConvGrads g{Tensor(layer.kernel.shape()), Tensor(layer.bias.shape()), {}, {}};
  if (layer.has_bn) {
    g.bn_scale = Tensor(layer.bn_scale.shape());
    g.bn_shift = Tensor(layer.bn_shift.shape());
  }
  return g;
}

void zero(ConvGrads& g) {
  g.kernel.fill(0.0);
  g.bias.fill(0.0);
  g.bn_scale.fill(0.0);
  g.bn_shift.fill(0.0);
}

void push_params(std::vector<Tensor*>& out, ConvLayer& layer) {
  out.push_back(&layer.kernel);
  out.push_back(&layer.bias);
  if (layer.has_bn) {
    out.push_back(&layer.bn_scale);
    out.push_back(&layer.bn_shift);
  }
}

void push_grads(std::vector<const Tensor*>& out, const ConvGrads& g) {
  out.push_back(&g.kernel);
  out.push_back(&g.bias);
  if (!g.bn_scale.empty()) {
    out.push_back(&g.bn_scale);
    out.push_back(&g.bn_shift);
  }
}

template <class Layer, class Out>
void push_state(Out& out, Layer& layer) {
  out.push_back(&layer.kernel);
  out.push_back(&layer.bias);
  if (layer.has_bn) {
    out.push_back(&layer.bn_scale);
    out.push_back(&layer.bn_shift);
    out.push_back(&layer.bn_running_mean);
    out.push_back(&layer.bn_running_var);
  }
}

}  // namespace

std::string to_string(const Shape3& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

const std::string& layer_name(const LayerSpec& layer) {
  return std::visit([](const auto& l) -> const std::string& { return l.name; }, layer);
}

std::string_view layer_kind(const LayerSpec& layer) {
  return std::visit(Overloaded{[](const ConvSpec&) { return std::string_view("conv"); },
                               [](const MaxPoolSpec&) { return std::string_view("maxpool"); },
                               [](const FullyConnectedSpec&) { return std::string_view("fc"); },
                               [](const SoftmaxSpec&) { return std::string_view("softmax"); },
                               [](const ResidualBlockSpec&) { return std::string_view("residual"); }},
                    layer);
}

std::vector<Shape3> infer_shapes(const NetworkSpec& spec) {
  if (spec.input.channels == 0 || spec.input.height == 0 || spec.input.width == 0) {
    throw ShapeError("network '" + spec.name + "': input shape must be positive");
  }
  std::vector<Shape3> shapes;
  shapes.reserve(spec.layers.size());
  Shape3 current = spec.input;
  for (const LayerSpec& layer : spec.layers) {
    try {
      current = std::visit(
          Overloaded{
              [&](const ConvSpec& c) {
                return Shape3{c.out_channels, extent(current.height, c.kernel, c.padding, c.stride),
                              extent(current.width, c.kernel, c.padding, c.stride)};
              },
              [&](const MaxPoolSpec& p) {
                return Shape3{current.channels, extent(current.height, p.size, 0, p.stride),
                              extent(current.width, p.size, 0, p.stride)};
              },
              [&](const FullyConnectedSpec& f) { return Shape3{f.out_features, 1, 1}; },
              [&](const SoftmaxSpec&) { return current; },
              [&](const ResidualBlockSpec& r) {
                return Shape3{r.out_channels, extent(current.height, 3, 1, r.stride),
                              extent(current.width, 3, 1, r.stride)};
              }},
          layer);
    } catch (const ShapeError& e) {
      throw ShapeError("layer '" + layer_name(layer) + "': " + e.what());
    }
    shapes.push_back(current);
  }
  return shapes;
}

ParameterReport count_parameters(const NetworkSpec& spec) {
  const std::vector<Shape3> shapes = infer_shapes(spec);
  ParameterReport report;
  Shape3 in = spec.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    const std::size_t count = std::visit(
        Overloaded{[&](const ConvSpec& c) {
                     return c.out_channels * (in.channels * c.kernel * c.kernel + 1) +
                            (c.batch_norm ? 2 * c.out_channels : 0);
                   },
                   [&](const MaxPoolSpec&) { return std::size_t{0}; },
                   [&](const FullyConnectedSpec& f) {
                     const std::size_t features = in.channels * in.height * in.width;
                     return features * f.out_features + f.out_features;
                   },
                   [&](const SoftmaxSpec&) { return std::size_t{0}; },
                   [&](const ResidualBlockSpec& r) {
                     std::size_t n = r.out_channels * (in.channels * 9 + 1) + 2 * r.out_channels;
                     n += r.out_channels * (r.out_channels * 9 + 1) + 2 * r.out_channels;
                     if (in.channels != r.out_channels || r.stride != 1) {
                       n += r.out_channels * (in.channels + 1) + 2 * r.out_channels;
                     }
                     return n;
                   }},
        layer);
    report.layers.push_back({layer_name(layer), std::string(layer_kind(layer)), count});
    report.total += count;
    in = shapes[i];
  }
  return report;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)), shapes_(infer_shapes(spec_)) {
  Shape3 in = spec_.input;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    states_.push_back(std::visit(
        Overloaded{[&](const ConvSpec& c) -> State {
                     ConvState s;
                     s.layer = ConvLayer::create(in.channels, c.out_channels, c.kernel, c.stride, c.padding,
                                                 c.batch_norm, c.activation);
                     s.grads = zero_grads_for(s.layer);
                     return s;
                   },
                   [&](const MaxPoolSpec&) -> State { return PoolState{}; },
                   [&](const FullyConnectedSpec& f) -> State {
                     FcState s;
                     s.layer = FcLayer::create(in.channels * in.height * in.width, f.out_features);
                     s.grads = FcLayer::create(s.layer.in_features(), s.layer.out_features());
                     return s;
                   },
                   [&](const SoftmaxSpec&) -> State { return SoftmaxState{}; },
                   [&](const ResidualBlockSpec& r) -> State {
                     ResidualState s;
                     s.block = ResidualBlock::create(in.channels, r.out_channels, r.stride);
                     s.grads.conv1 = zero_grads_for(s.block.conv1);
                     s.grads.conv2 = zero_grads_for(s.block.conv2);
                     if (s.block.projection) s.grads.projection = zero_grads_for(*s.block.projection);
                     return s;
                   }},
        spec_.layers[i]));
    in = shapes_[i];
  }
  activations_.resize(states_.size());
}

void Network::initialize(Rng& rng) {
  for (State& state : states_) {
    std::visit(Overloaded{[&](ConvState& s) { s.layer.initialize(rng); }, [&](PoolState&) {},
                          [&](FcState& s) { s.layer.initialize(rng); }, [&](SoftmaxState&) {},
                          [&](ResidualState& s) { s.block.initialize(rng); }},
               state);
  }
}

Tensor Network::forward(const Tensor& batch, Mode mode, std::optional<std::string_view> stop_after) {
  if (batch.rank() != 4 || batch.dim(1) != spec_.input.channels || batch.dim(2) != spec_.input.height ||
      batch.dim(3) != spec_.input.width || batch.dim(0) == 0) {
    throw ShapeError("network '" + spec_.name + "': input " + shape_string(batch.shape()) + " does not match (N, " +
                     std::to_string(spec_.input.channels) + ", " + std::to_string(spec_.input.height) + ", " +
                     std::to_string(spec_.input.width) + ")");
  }
  std::size_t last = states_.size();
  if (stop_after) {
    const auto idx = layer_index(*stop_after);
    if (!idx) throw ConfigError("network '" + spec_.name + "' has no layer '" + std::string(*stop_after) + "'");
    last = *idx + 1;
  }
  have_cache_ = false;
  const Tensor* current = &batch;
  for (std::size_t i = 0; i < last; ++i) {
    try {
      activations_[i] = std::visit(
          Overloaded{[&](ConvState& s) {
                       auto [out, cache] = conv_forward(s.layer, *current, mode);
                       s.cache = std::move(cache);
                       return out;
                     },
                     [&](PoolState& s) {
                       const auto& p = std::get<MaxPoolSpec>(spec_.layers[i]);
                       auto [out, cache] = maxpool_forward(*current, p.size, p.stride);
                       s.cache = std::move(cache);
                       return out;
                     },
                     [&](FcState& s) {
                       auto [out, cache] = fc_forward(s.layer, *current);
                       s.cache = std::move(cache);
                       out.reshape({out.dim(0), out.dim(1), 1, 1});
                       return out;
                     },
                     [&](SoftmaxState& s) {
                       if (current->rank() != 4 || current->dim(2) != 1 || current->dim(3) != 1) {
                         throw ShapeError("softmax expects (N, K, 1, 1) input, got " +
                                          shape_string(current->shape()));
                       }
                       s.probabilities = softmax(*current);
                       return s.probabilities;
                     },
                     [&](ResidualState& s) {
                       auto [out, cache] = residual_forward(s.block, *current, mode);
                       s.cache = std::move(cache);
                       return out;
                     }},
          states_[i]);
    } catch (const ShapeError& e) {
      throw ShapeError("layer '" + layer_name(spec_.layers[i]) + "': " + e.what());
    }
    current = &activations_[i];
  }
  executed_ = last;
  have_cache_ = true;
  return last == 0 ? batch : activations_[last - 1];
}

Tensor Network::backward(const Tensor& grad_output) {
  if (!have_cache_) throw Error("Network::backward called without a preceding forward pass");
  Tensor grad = grad_output;
  for (std::size_t i = executed_; i-- > 0;) {
    try {
      grad = std::visit(Overloaded{[&](ConvState& s) {
                                     ConvBackward b = conv_backward(s.layer, s.cache, grad);
                                     add_into(s.grads, b.grads);
                                     return std::move(b.grad_input);
                                   },
                                   [&](PoolState& s) { return maxpool_backward(s.cache, grad); },
                                   [&](FcState& s) {
                                     FcBackward b = fc_backward(s.layer, s.cache, grad);
                                     add_into(s.grads.weights, b.grad_weights);
                                     add_into(s.grads.bias, b.grad_bias);
                                     return std::move(b.grad_input);
                                   },
                                   [&](SoftmaxState& s) { return softmax_backward(s.probabilities, grad); },
                                   [&](ResidualState& s) {
                                     ResidualBackward b = residual_backward(s.block, s.cache, grad);
                                     add_into(s.grads.conv1, b.grads.conv1);
                                     add_into(s.grads.conv2, b.grads.conv2);
                                     if (b.grads.projection) add_into(*s.grads.projection, *b.grads.projection);
                                     return std::move(b.grad_input);
                                   }},
                        states_[i]);
    } catch (const ShapeError& e) {
      throw ShapeError("layer '" + layer_name(spec_.layers[i]) + "' backward: " + e.what());
    }
  }
  return grad;
}

const Tensor& Network::activation(std::string_view layer) const {
  const auto idx = layer_index(layer);
  if (!idx || *idx >= executed_ || !have_cache_) {
    throw ConfigError("no activation recorded for layer '" + std::string(layer) + "'");
  }
  return activations_[*idx];
}

std::optional<std::size_t> Network::layer_index(std::string_view layer) const {
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    if (layer_name(spec_.layers[i]) == layer) return i;
  }
  return std::nullopt;
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  for (State& state : states_) {
    std::visit(Overloaded{[&](ConvState& s) { push_params(out, s.layer); }, [&](PoolState&) {},
                          [&](FcState& s) {
                            out.push_back(&s.layer.weights);
                            out.push_back(&s.layer.bias);
                          },
                          [&](SoftmaxState&) {},
                          [&](ResidualState& s) {
                            push_params(out, s.block.conv1);
                            push_params(out, s.block.conv2);
                            if (s.block.projection) push_params(out, *s.block.projection);
                          }},
               state);
  }
  return out;
}

std::vector<const Tensor*> Network::gradients() const {
  std::vector<const Tensor*> out;
  for (const State& state : states_) {
    std::visit(Overloaded{[&](const ConvState& s) { push_grads(out, s.grads); }, [&](const PoolState&) {},
                          [&](const FcState& s) {
                            out.push_back(&s.grads.weights);
                            out.push_back(&s.grads.bias);
                          },
                          [&](const SoftmaxState&) {},
                          [&](const ResidualState& s) {
                            push_grads(out, s.grads.conv1);
                            push_grads(out, s.grads.conv2);
                            if (s.grads.projection) push_grads(out, *s.grads.projection);
                          }},
               state);
  }
  return out;
}

void Network::zero_grad() {
  for (State& state : states_) {
    std::visit(Overloaded{[&](ConvState& s) { zero(s.grads); }, [&](PoolState&) {},
                          [&](FcState& s) {
                            s.grads.weights.fill(0.0);
                            s.grads.bias.fill(0.0);
                          },
                          [&](SoftmaxState&) {},
                          [&](ResidualState& s) {
                            zero(s.grads.conv1);
                            zero(s.grads.conv2);
                            if (s.grads.projection) zero(*s.grads.projection);
                          }},
               state);
  }
}

std::vector<Tensor*> Network::state_tensors() {
  std::vector<Tensor*> out;
  for (State& state : states_) {
    std::visit(Overloaded{[&](ConvState& s) { push_state(out, s.layer); }, [&](PoolState&) {},
                          [&](FcState& s) {
                            out.push_back(&s.layer.weights);
                            out.push_back(&s.layer.bias);
                          },
                          [&](SoftmaxState&) {},
                          [&](ResidualState& s) {
                            push_state(out, s.block.conv1);
                            push_state(out, s.block.conv2);
                            if (s.block.projection) push_state(out, *s.block.projection);
                          }},
               state);
  }
  return out;
}

std::vector<const Tensor*> Network::state_tensors() const {
  std::vector<const Tensor*> out;
  for (Tensor* t : const_cast<Network*>(this)->state_tensors()) out.push_back(t);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (Tensor* t : const_cast<Network*>(this)->parameters()) total += t->size();
  return total;
}

ConvLayer& Network::conv(std::string_view layer) {
  const auto idx = layer_index(layer);
  if (!idx || !std::holds_alternative<ConvState>(states_[*idx])) {
    throw ConfigError("no conv layer named '" + std::string(layer) + "'");
  }
  return std::get<ConvState>(states_[*idx]).layer;
}

FcLayer& Network::fully_connected(std::string_view layer) {
  const auto idx = layer_index(layer);
  if (!idx || !std::holds_alternative<FcState>(states_[*idx])) {
    throw ConfigError("no fully connected layer named '" + std::string(layer) + "'");
  }
  return std::get<FcState>(states_[*idx]).layer;
}

ResidualBlock& Network::residual(std::string_view layer) {
  const auto idx = layer_index(layer);
  if (!idx || !std::holds_alternative<ResidualState>(states_[*idx])) {
    throw ConfigError("no residual block named '" + std::string(layer) + "'");
  }
  return std::get<ResidualState>(states_[*idx]).block;
}

}  // namespace npdet
