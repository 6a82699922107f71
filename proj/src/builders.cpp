#include "npdet/builders.hpp"

#include <bit>
#include <string>

#include "npdet/error.hpp"

namespace npdet {

NetworkSpec build_classifier(const ClassifierConfig& config) {
  if (config.num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  if (config.stage_widths.empty()) throw ConfigError("classifier needs at least one stage");
  NetworkSpec spec;
  spec.name = "classifier";
  spec.input = {config.input_channels, config.input_size, config.input_size};

  std::size_t conv_index = 0;
  std::size_t size = config.input_size;
  auto conv5 = [&](std::size_t width) {
    spec.layers.emplace_back(ConvSpec{"conv" + std::to_string(++conv_index), width, 5, 1, 0, true, Activation::relu});
    if (size < 5) throw ConfigError("classifier input " + std::to_string(config.input_size) + " too small for depth");
    size -= 4;
  };
  for (std::size_t s = 0; s < config.stage_widths.size(); ++s) {
    conv5(config.stage_widths[s]);
    conv5(config.stage_widths[s]);
    spec.layers.emplace_back(MaxPoolSpec{"pool" + std::to_string(s + 1), 2, 2});
    size /= 2;
  }
  conv5(config.penultimate_width);
  if (size < 1) throw ConfigError("classifier input too small");
  spec.layers.emplace_back(
      ConvSpec{"conv" + std::to_string(++conv_index), config.final_width, size, 1, 0, true, Activation::relu});
  spec.layers.emplace_back(FullyConnectedSpec{"fc", config.num_classes});
  spec.layers.emplace_back(SoftmaxSpec{"softmax"});
  infer_shapes(spec);
  return spec;
}

NetworkSpec build_classifier(std::size_t num_classes) {
  ClassifierConfig config;
  config.num_classes = num_classes;
  return build_classifier(config);
}

void BackboneConfig::validate() const {
  if (stage_widths.empty() || stage_widths.size() != blocks_per_stage.size()) {
    throw ConfigError("backbone needs one block count per stage width");
  }
  for (std::size_t i = 0; i < stage_widths.size(); ++i) {
    if (stage_widths[i] == 0 || blocks_per_stage[i] == 0) throw ConfigError("backbone widths and blocks must be positive");
  }
  if (downsample_factor == 0 || !std::has_single_bit(downsample_factor)) {
    throw ConfigError("downsample factor must be a power of two");
  }
  const auto steps = static_cast<std::size_t>(std::countr_zero(downsample_factor));
  if (steps > stage_widths.size()) {
    throw ConfigError("downsample factor " + std::to_string(downsample_factor) + " needs more than " +
                      std::to_string(stage_widths.size()) + " stride-2 steps");
  }
  if (input_size == 0 || input_size % downsample_factor != 0) {
    throw ConfigError("input size " + std::to_string(input_size) + " is not divisible by downsample factor " +
                      std::to_string(downsample_factor));
  }
}

NetworkSpec build_backbone(const BackboneConfig& config) {
  config.validate();
  const auto steps = static_cast<std::size_t>(std::countr_zero(config.downsample_factor));
  NetworkSpec spec;
  spec.name = "backbone";
  spec.input = {config.input_channels, config.input_size, config.input_size};
  spec.layers.emplace_back(
      ConvSpec{"stem", config.stage_widths[0], 3, steps >= 1 ? std::size_t{2} : std::size_t{1}, 1, true, Activation::relu});
  for (std::size_t s = 0; s < config.stage_widths.size(); ++s) {
    for (std::size_t b = 0; b < config.blocks_per_stage[s]; ++b) {
      const bool downsample = b == 0 && s >= 1 && s < steps;
      spec.layers.emplace_back(ResidualBlockSpec{"stage" + std::to_string(s + 1) + "_block" + std::to_string(b + 1),
                                                 config.stage_widths[s], downsample ? std::size_t{2} : std::size_t{1}});
    }
  }
  const auto shapes = infer_shapes(spec);
  if (shapes.back().height != config.grid_size()) {
    throw ShapeError("backbone grid " + std::to_string(shapes.back().height) + " differs from expected " +
                     std::to_string(config.grid_size()));
  }
  return spec;
}

DetectionHead build_detection_head(std::size_t num_classes, std::size_t num_anchors) {
  if (num_classes < 1 || num_anchors < 1) throw ConfigError("detection head needs C >= 1 and A >= 1");
  DetectionHead head;
  head.spec.num_classes = num_classes;
  head.spec.num_anchors = num_anchors;
  head.spec.filters = (num_classes + 5) * num_anchors;
  head.conv = ConvSpec{"head", head.spec.filters, 1, 1, 0, false, Activation::none};
  return head;
}

DetectorSpec build_detector(const BackboneConfig& backbone, std::size_t num_classes, std::size_t num_anchors,
                            const std::string& tap) {
  NetworkSpec net = build_backbone(backbone);
  if (!tap.empty()) {
    std::size_t keep = 0;
    while (keep < net.layers.size() && layer_name(net.layers[keep]) != tap) ++keep;
    if (keep == net.layers.size()) throw ConfigError("backbone has no layer '" + tap + "' to tap");
    net.layers.resize(keep + 1);
  }
  DetectionHead head = build_detection_head(num_classes, num_anchors);
  net.name = "detector";
  net.layers.emplace_back(head.conv);
  const auto shapes = infer_shapes(net);
  if (shapes.back().height != shapes.back().width) throw ShapeError("detector grid must be square");
  head.spec.grid_size = shapes.back().height;
  return {std::move(net), head.spec};
}

}  // namespace npdet
