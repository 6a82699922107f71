#include "npdet/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "npdet/error.hpp"

namespace npdet {

std::string to_string(ModelKind kind) { return kind == ModelKind::classifier ? "classifier" : "detector"; }

ModelKind parse_model_kind(const std::string& text) {
  if (text == "classifier") return ModelKind::classifier;
  if (text == "detector") return ModelKind::detector;
  throw ConfigError("model must be 'classifier' or 'detector', got '" + text + "'");
}

namespace {

std::string join_sizes(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

std::vector<BoxSize> parse_box_sizes(const std::vector<std::string>& items) {
  std::vector<BoxSize> out;
  for (const std::string& item : items) {
    const auto x = item.find('x');
    if (x == std::string::npos) throw ConfigError("anchor size '" + item + "' is not HxW");
    try {
      std::size_t used_h = 0;
      std::size_t used_w = 0;
      const std::string hs = item.substr(0, x);
      const std::string ws = item.substr(x + 1);
      BoxSize b{std::stod(hs, &used_h), std::stod(ws, &used_w)};
      if (used_h != hs.size() || used_w != ws.size()) throw std::invalid_argument(item);
      out.push_back(b);
    } catch (const std::logic_error&) {
      throw ConfigError("anchor size '" + item + "' is not HxW");
    }
  }
  return out;
}

PyramidConfig pyramid_from_config(const KeyValueConfig& kv) {
  PyramidConfig pyramid = default_pyramid();
  if (kv.has("anchor_bases")) pyramid.base_sizes = parse_box_sizes(kv.get_list("anchor_bases", {}));
  pyramid.num_levels = kv.get_size("anchor_levels", pyramid.num_levels);
  pyramid.scale = kv.get_double("anchor_scale", pyramid.scale);
  return pyramid;
}

ModelConfig ModelConfig::from_config(const KeyValueConfig& kv) {
  ModelConfig cfg;
  cfg.kind = parse_model_kind(kv.get_string("model", "classifier"));
  cfg.class_names = kv.get_list("class_names", {});
  if (cfg.kind == ModelKind::classifier) {
    ClassifierConfig& c = cfg.classifier;
    c.input_size = kv.get_size("input_size", c.input_size);
    c.stage_widths = kv.get_sizes("stage_widths", c.stage_widths);
    c.penultimate_width = kv.get_size("penultimate_width", c.penultimate_width);
    c.final_width = kv.get_size("final_width", c.final_width);
    c.num_classes = kv.get_size("num_classes", cfg.class_names.empty() ? c.num_classes : cfg.class_names.size());
  } else {
    BackboneConfig& b = cfg.backbone;
    b.input_size = kv.get_size("input_size", b.input_size);
    b.stage_widths = kv.get_sizes("stage_widths", b.stage_widths);
    b.blocks_per_stage = kv.get_sizes("blocks_per_stage", std::vector<std::size_t>(b.stage_widths.size(), 1));
    b.downsample_factor = kv.get_size("downsample", b.downsample_factor);
    cfg.head_tap = kv.get_string("head_tap", "");
    cfg.detector_classes =
        kv.get_size("num_classes", cfg.class_names.empty() ? cfg.detector_classes : cfg.class_names.size());
    cfg.pyramid = pyramid_from_config(kv);
  }
  if (!cfg.class_names.empty() && cfg.class_names.size() != cfg.num_classes()) {
    throw ConfigError("class_names lists " + std::to_string(cfg.class_names.size()) + " names for " +
                      std::to_string(cfg.num_classes()) + " classes");
  }
  return cfg;
}

KeyValueConfig ModelConfig::to_config() const {
  KeyValueConfig kv;
  kv.set("model", to_string(kind));
  if (kind == ModelKind::classifier) {
    kv.set("input_size", std::to_string(classifier.input_size));
    kv.set("stage_widths", join_sizes(classifier.stage_widths));
    kv.set("penultimate_width", std::to_string(classifier.penultimate_width));
    kv.set("final_width", std::to_string(classifier.final_width));
  } else {
    kv.set("input_size", std::to_string(backbone.input_size));
    kv.set("stage_widths", join_sizes(backbone.stage_widths));
    kv.set("blocks_per_stage", join_sizes(backbone.blocks_per_stage));
    kv.set("downsample", std::to_string(backbone.downsample_factor));
    if (!head_tap.empty()) kv.set("head_tap", head_tap);
    std::string bases;
    for (const BoxSize& b : pyramid.base_sizes) {
      bases += (bases.empty() ? "" : ",") + format_double(b.height) + "x" + format_double(b.width);
    }
    kv.set("anchor_bases", bases);
    kv.set("anchor_levels", std::to_string(pyramid.num_levels));
    kv.set("anchor_scale", format_double(pyramid.scale));
  }
  kv.set("num_classes", std::to_string(num_classes()));
  if (!class_names.empty()) {
    std::string names;
    for (const auto& n : class_names) names += (names.empty() ? "" : ",") + n;
    kv.set("class_names", names);
  }
  return kv;
}

std::size_t ModelConfig::input_size() const {
  return kind == ModelKind::classifier ? classifier.input_size : backbone.input_size;
}

std::size_t ModelConfig::num_classes() const {
  return kind == ModelKind::classifier ? classifier.num_classes : detector_classes;
}

namespace {

struct Built {
  NetworkSpec spec;
  AnchorSet anchors;
  DetectionHeadSpec head;
};

Built build_parts(const ModelConfig& cfg) {
  Built b;
  if (cfg.kind == ModelKind::classifier) {
    b.spec = build_classifier(cfg.classifier);
    return b;
  }
  b.anchors = generate_pyramid(cfg.pyramid);
  DetectorSpec det = build_detector(cfg.backbone, cfg.detector_classes, b.anchors.size(), cfg.head_tap);
  b.spec = std::move(det.network);
  b.head = det.head;
  return b;
}

}  // namespace

Model::Model(ModelConfig cfg) : config(std::move(cfg)), network(build_parts(config).spec) {
  Built b = build_parts(config);
  anchors = std::move(b.anchors);
  head = b.head;
}

Model build_model(const ModelConfig& config) { return Model(config); }

CheckpointData model_checkpoint(const Model& model) {
  CheckpointData data;
  data.config_text = model.config.to_config().to_text();
  for (const Tensor* t : model.network.state_tensors()) {
    std::vector<float> blob(t->size());
    for (std::size_t i = 0; i < blob.size(); ++i) blob[i] = static_cast<float>((*t)[i]);
    data.blobs.push_back(std::move(blob));
  }
  return data;
}

Model model_from_checkpoint(const CheckpointData& data) {
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_config(KeyValueConfig::parse(data.config_text));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  Model model(cfg);
  auto tensors = model.network.state_tensors();
  if (tensors.size() != data.blobs.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(data.blobs.size()) + " tensors, network expects " +
                          std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i]->size() != data.blobs[i].size()) {
      throw CheckpointError("checkpoint tensor " + std::to_string(i) + " has " +
                            std::to_string(data.blobs[i].size()) + " values, expected " +
                            std::to_string(tensors[i]->size()));
    }
    for (std::size_t j = 0; j < data.blobs[i].size(); ++j) (*tensors[i])[j] = data.blobs[i][j];
  }
  return model;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_checkpoint_file(model_checkpoint(model), path);
}

Model load_model(const std::filesystem::path& path) { return model_from_checkpoint(read_checkpoint_file(path)); }

Tensor image_batch(const Image& image, std::size_t input_size, LetterboxTransform* transform) {
  auto [boxed, t] = letterbox(image, input_size);
  if (transform) *transform = t;
  Tensor batch({1, 3, input_size, input_size});
  image_to_tensor(boxed, batch, 0);
  return batch;
}

std::vector<Detection> detect(Model& model, const Image& image, double conf_threshold, double nms_threshold,
                              std::size_t max_detections) {
  if (model.config.kind != ModelKind::detector) throw ConfigError("detect needs a detector model");
  LetterboxTransform transform;
  const std::size_t size = model.config.input_size();
  const Tensor raw = model.network.forward(image_batch(image, size, &transform), Mode::infer);
  auto decoded =
      decode_predictions(raw, model.head, model.anchors, static_cast<double>(size), conf_threshold);
  auto kept = nms(decoded, nms_threshold);
  if (kept.size() > max_detections) kept.resize(max_detections);
  for (Detection& d : kept) {
    const Box b = transform.to_original(d.box());
    d.cx = b.center_x();
    d.cy = b.center_y();
    d.w = b.width();
    d.h = b.height();
  }
  return kept;
}

std::vector<double> classify(Model& model, const Image& image, const Box& region) {
  if (model.config.kind != ModelKind::classifier) throw ConfigError("classify needs a classifier model");
  const Tensor probs = model.network.forward(image_batch(crop(image, region), model.config.input_size()), Mode::infer);
  return {probs.data(), probs.data() + probs.size()};
}

}  // namespace npdet
