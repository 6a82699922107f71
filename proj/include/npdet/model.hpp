#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "npdet/anchors.hpp"
#include "npdet/builders.hpp"
#include "npdet/checkpoint.hpp"
#include "npdet/config.hpp"
#include "npdet/detection.hpp"
#include "npdet/image.hpp"
#include "npdet/network.hpp"

namespace npdet {

enum class ModelKind { classifier, detector };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

// Everything needed to rebuild a network; also the text stored in checkpoints.
struct ModelConfig {
  ModelKind kind = ModelKind::classifier;
  ClassifierConfig classifier;
  BackboneConfig backbone;
  PyramidConfig pyramid = default_pyramid();
  std::size_t detector_classes = 1;
  std::string head_tap;
  std::vector<std::string> class_names;

  // Keys: model, input_size, stage_widths, penultimate_width, final_width,
  // blocks_per_stage, downsample, head_tap, anchor_bases (HxW list),
  // anchor_levels, anchor_scale, num_classes, class_names.
  static ModelConfig from_config(const KeyValueConfig& config);
  KeyValueConfig to_config() const;

  std::size_t input_size() const;
  std::size_t num_classes() const;
};

// anchor_bases (HxW list), anchor_levels and anchor_scale over the defaults.
PyramidConfig pyramid_from_config(const KeyValueConfig& config);
std::vector<BoxSize> parse_box_sizes(const std::vector<std::string>& items);

struct Model {
  ModelConfig config;
  Network network;
  AnchorSet anchors;         // detector only
  DetectionHeadSpec head;    // detector only

  explicit Model(ModelConfig cfg);
};

Model build_model(const ModelConfig& config);

CheckpointData model_checkpoint(const Model& model);
// Rebuilds the network from the stored config; throws CheckpointError when
// the stored tensors do not fit it.
Model model_from_checkpoint(const CheckpointData& data);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

// (1, 3, S, S) network input for a letterboxed image.
Tensor image_batch(const Image& image, std::size_t input_size, LetterboxTransform* transform = nullptr);

// Letterbox, forward, decode, suppress, and map back to image coordinates.
std::vector<Detection> detect(Model& model, const Image& image, double conf_threshold, double nms_threshold,
                              std::size_t max_detections = 100);

// Class probabilities for a plate region of `image`.
std::vector<double> classify(Model& model, const Image& image, const Box& region);

}  // namespace npdet
