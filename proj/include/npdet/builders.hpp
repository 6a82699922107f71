#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "npdet/network.hpp"

namespace npdet {

// Plate classifier: pairs of 5x5 valid convolutions (BN+ReLU) each followed by
// 2x2/2 max pooling, one more 5x5 conv, a conv whose kernel spans the remaining
// map (1x1 output), then FC and softmax. The defaults reproduce the published
// 224x224 design exactly (2,634,729 learnable parameters for 9 classes).
struct ClassifierConfig {
  std::size_t input_size = 224;
  std::size_t input_channels = 3;
  std::vector<std::size_t> stage_widths = {32, 64, 96, 128};
  std::size_t penultimate_width = 256;
  std::size_t final_width = 512;
  std::size_t num_classes = 9;
};

NetworkSpec build_classifier(const ClassifierConfig& config);
NetworkSpec build_classifier(std::size_t num_classes);

// Residual feature extractor: a 3x3 stem then one stage per width. Each
// stride-2 step halves the map; stem first, then the first block of each
// later stage, until log2(downsample_factor) steps are used.
struct BackboneConfig {
  std::size_t input_size = 224;
  std::size_t input_channels = 3;
  std::vector<std::size_t> stage_widths = {16, 32, 64, 128};
  std::vector<std::size_t> blocks_per_stage = {1, 1, 1, 1};
  std::size_t downsample_factor = 16;

  std::size_t grid_size() const { return input_size / downsample_factor; }
  void validate() const;
};

NetworkSpec build_backbone(const BackboneConfig& config);

struct DetectionHeadSpec {
  std::size_t num_classes = 1;
  std::size_t num_anchors = 1;
  std::size_t grid_size = 1;
  std::size_t filters = 6;  // (num_classes + 5) * num_anchors

  std::size_t channels_per_anchor() const { return num_classes + 5; }
};

struct DetectionHead {
  DetectionHeadSpec spec;
  ConvSpec conv;  // 1x1, stride 1, no BN, no activation
};

DetectionHead build_detection_head(std::size_t num_classes, std::size_t num_anchors);

struct DetectorSpec {
  NetworkSpec network;
  DetectionHeadSpec head;
};

// Backbone truncated after `tap` (empty: last layer) with the head appended.
DetectorSpec build_detector(const BackboneConfig& backbone, std::size_t num_classes, std::size_t num_anchors,
                            const std::string& tap = {});

}  // namespace npdet
