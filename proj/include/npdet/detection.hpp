#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "npdet/anchors.hpp"
#include "npdet/box.hpp"
#include "npdet/builders.hpp"
#include "npdet/tensor.hpp"

namespace npdet {

struct GroundTruthBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  std::size_t class_id = 0;

  Box box() const { return Box::from_center(cx, cy, w, h); }
};

// Channel layout shared by targets and raw head output, per anchor:
// objectness, tx, ty, tw, th, then one entry per class.
inline constexpr std::size_t kObjectness = 0;
inline constexpr std::size_t kTx = 1;
inline constexpr std::size_t kTy = 2;
inline constexpr std::size_t kTw = 3;
inline constexpr std::size_t kTh = 4;
inline constexpr std::size_t kFirstClass = 5;

struct TargetGrid {
  std::size_t num_anchors = 0;
  std::size_t num_classes = 0;
  std::size_t grid_size = 0;
  Tensor values;                     // (A, 5 + C, S, S)
  std::size_t collisions = 0;        // boxes dropped by the larger-area rule

  bool responsible(std::size_t anchor, std::size_t row, std::size_t col) const;
  double value(std::size_t anchor, std::size_t channel, std::size_t row, std::size_t col) const;
  std::size_t responsible_count() const;
};

// Each box goes to the cell holding its center and to its best size-matched
// anchor. tx, ty are the center's fractional offsets in that cell; tw, th the
// log ratio to the anchor size. When two boxes claim the same (anchor, cell)
// the larger-area box is kept. Throws ConfigError for a center outside the
// image or a class id >= num_classes.
TargetGrid encode_targets(std::span<const GroundTruthBox> boxes, std::size_t grid_size, const AnchorSet& anchors,
                          std::size_t num_classes, double image_size);

struct Detection {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
  double confidence = 0.0;  // sigmoid(objectness)
  std::vector<double> class_probs;
  std::size_t class_id = 0;
  double score = 0.0;  // confidence * max class probability

  Box box() const { return Box::from_center(cx, cy, w, h); }
};

// cx = (col + sigmoid(tx)) * cell, w = anchor_w * exp(tw), confidence =
// sigmoid(to), class probabilities softmax. Emits cells in row-major order,
// anchors minor, keeping score >= conf_threshold. `raw` is (A·(5+C), S, S) or
// that with a leading batch of one; any other channel count is rejected.
std::vector<Detection> decode_predictions(const Tensor& raw, const DetectionHeadSpec& head, const AnchorSet& anchors,
                                          double image_size, double conf_threshold);

// Greedy suppression by descending score (stable); a detection is dropped
// when its IOU with a kept detection of the same class exceeds the threshold.
std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold);

struct YoloLossConfig {
  double lambda_coord = 5.0;
  double lambda_noobj = 0.5;
  double lambda_obj = 1.0;
  double lambda_class = 1.0;
};

struct YoloLoss {
  double loss = 0.0;
  Tensor grad_raw;
};

// Sum-of-squares detection loss over one sample.
YoloLoss yolo_loss(const Tensor& raw, const TargetGrid& target, const YoloLossConfig& config = {});

// `raw` is (N, A·(5+C), S, S); losses and gradients of the samples are summed.
YoloLoss yolo_loss_batch(const Tensor& raw, std::span<const TargetGrid> targets, const YoloLossConfig& config = {});

double sigmoid(double x);

// `image,cx,cy,w,h,score,class_id`, six decimals.
void write_detection_csv_header(std::ostream& out);
void write_detection_csv_rows(std::ostream& out, const std::string& image, std::span<const Detection> detections);

}  // namespace npdet
