#include "npdet/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "npdet/error.hpp"

namespace npdet {

namespace {

struct GridDims {
  std::size_t anchors;
  std::size_t per_anchor;
  std::size_t grid;
};

GridDims raw_dims(const Tensor& raw, const DetectionHeadSpec& head) {
  std::size_t channels = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  if (raw.rank() == 3) {
    channels = raw.dim(0);
    rows = raw.dim(1);
    cols = raw.dim(2);
  } else if (raw.rank() == 4 && raw.dim(0) == 1) {
    channels = raw.dim(1);
    rows = raw.dim(2);
    cols = raw.dim(3);
  } else {
    throw ShapeError("head output must be (C, S, S) or (1, C, S, S), got " + shape_string(raw.shape()));
  }
  const std::size_t expected = (head.num_classes + 5) * head.num_anchors;
  if (channels != expected) {
    throw ShapeError("head output has " + std::to_string(channels) + " channels, (C + 5) x A = " +
                     std::to_string(expected));
  }
  if (rows != cols || rows != head.grid_size) {
    throw ShapeError("head output grid " + std::to_string(rows) + "x" + std::to_string(cols) + " vs S = " +
                     std::to_string(head.grid_size));
  }
  return {head.num_anchors, head.num_classes + 5, rows};
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

bool TargetGrid::responsible(std::size_t anchor, std::size_t row, std::size_t col) const {
  return value(anchor, kObjectness, row, col) > 0.5;
}

double TargetGrid::value(std::size_t anchor, std::size_t channel, std::size_t row, std::size_t col) const {
  return values.at(anchor, channel, row, col);
}

std::size_t TargetGrid::responsible_count() const {
  std::size_t n = 0;
  for (std::size_t a = 0; a < num_anchors; ++a) {
    for (std::size_t r = 0; r < grid_size; ++r) {
      for (std::size_t c = 0; c < grid_size; ++c) n += responsible(a, r, c) ? 1 : 0;
    }
  }
  return n;
}

TargetGrid encode_targets(std::span<const GroundTruthBox> boxes, std::size_t grid_size, const AnchorSet& anchors,
                          std::size_t num_classes, double image_size) {
  if (grid_size == 0 || num_classes == 0 || anchors.size() == 0) {
    throw ConfigError("encode_targets: grid, classes and anchors must be non-empty");
  }
  if (!(image_size > 0.0)) throw ConfigError("encode_targets: image size must be positive");
  TargetGrid target;
  target.num_anchors = anchors.size();
  target.num_classes = num_classes;
  target.grid_size = grid_size;
  target.values = Tensor({anchors.size(), num_classes + 5, grid_size, grid_size});
  std::vector<double> owner_area(anchors.size() * grid_size * grid_size, 0.0);
  const double cell = image_size / static_cast<double>(grid_size);

  for (const GroundTruthBox& box : boxes) {
    if (!(box.cx >= 0.0 && box.cx < image_size && box.cy >= 0.0 && box.cy < image_size)) {
      throw ConfigError("encode_targets: box center (" + std::to_string(box.cx) + ", " + std::to_string(box.cy) +
                        ") outside the image");
    }
    if (!(box.w > 0.0 && box.h > 0.0)) throw ConfigError("encode_targets: box size must be positive");
    if (box.class_id >= num_classes) throw ConfigError("encode_targets: class id out of range");

    const double gx = box.cx / cell;
    const double gy = box.cy / cell;
    const auto col = std::min(grid_size - 1, static_cast<std::size_t>(gx));
    const auto row = std::min(grid_size - 1, static_cast<std::size_t>(gy));
    const AnchorMatch match = best_anchor({box.h, box.w}, anchors);
    const std::size_t a = match.index;
    const double area = box.w * box.h;
    double& owner = owner_area[(a * grid_size + row) * grid_size + col];
    if (owner > 0.0) {
      ++target.collisions;
      if (area <= owner) continue;
    }
    owner = area;
    const BoxSize& anchor = anchors[a];
    target.values.at(a, kObjectness, row, col) = 1.0;
    target.values.at(a, kTx, row, col) = std::clamp(gx - static_cast<double>(col), 0.0, std::nextafter(1.0, 0.0));
    target.values.at(a, kTy, row, col) = std::clamp(gy - static_cast<double>(row), 0.0, std::nextafter(1.0, 0.0));
    target.values.at(a, kTw, row, col) = std::log(box.w / anchor.width);
    target.values.at(a, kTh, row, col) = std::log(box.h / anchor.height);
    for (std::size_t c = 0; c < num_classes; ++c) {
      target.values.at(a, kFirstClass + c, row, col) = c == box.class_id ? 1.0 : 0.0;
    }
  }
  return target;
}

std::vector<Detection> decode_predictions(const Tensor& raw, const DetectionHeadSpec& head, const AnchorSet& anchors,
                                          double image_size, double conf_threshold) {
  const GridDims dims = raw_dims(raw, head);
  if (anchors.size() != dims.anchors) {
    throw ShapeError("decode: " + std::to_string(anchors.size()) + " anchors for a head with " +
                     std::to_string(dims.anchors));
  }
  const std::size_t S = dims.grid;
  const std::size_t C = head.num_classes;
  const double cell = image_size / static_cast<double>(S);
  const double* data = raw.data();
  auto at = [&](std::size_t a, std::size_t k, std::size_t r, std::size_t c) {
    return data[((a * dims.per_anchor + k) * S + r) * S + c];
  };

  std::vector<Detection> out;
  for (std::size_t r = 0; r < S; ++r) {
    for (std::size_t c = 0; c < S; ++c) {
      for (std::size_t a = 0; a < dims.anchors; ++a) {
        Detection d;
        d.confidence = sigmoid(at(a, kObjectness, r, c));
        d.class_probs.resize(C);
        double peak = at(a, kFirstClass, r, c);
        for (std::size_t k = 1; k < C; ++k) peak = std::max(peak, at(a, kFirstClass + k, r, c));
        double total = 0.0;
        for (std::size_t k = 0; k < C; ++k) {
          d.class_probs[k] = std::exp(at(a, kFirstClass + k, r, c) - peak);
          total += d.class_probs[k];
        }
        for (double& p : d.class_probs) p /= total;
        d.class_id = static_cast<std::size_t>(
            std::max_element(d.class_probs.begin(), d.class_probs.end()) - d.class_probs.begin());
        d.score = d.confidence * d.class_probs[d.class_id];
        if (!(d.score >= conf_threshold)) continue;
        d.cx = (static_cast<double>(c) + sigmoid(at(a, kTx, r, c))) * cell;
        d.cy = (static_cast<double>(r) + sigmoid(at(a, kTy, r, c))) * cell;
        d.w = anchors[a].width * std::exp(at(a, kTw, r, c));
        d.h = anchors[a].height * std::exp(at(a, kTh, r, c));
        out.push_back(std::move(d));
      }
    }
  }
  return out;
}

std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return detections[a].score > detections[b].score; });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& d = detections[idx];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == d.class_id && iou(k.box(), d.box()) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

namespace {

double sample_loss(const double* raw, double* grad, const TargetGrid& target, const YoloLossConfig& cfg) {
  const std::size_t A = target.num_anchors;
  const std::size_t C = target.num_classes;
  const std::size_t S = target.grid_size;
  const std::size_t per = C + 5;
  const std::size_t plane = S * S;
  std::vector<double> probs(C);
  double loss = 0.0;
  for (std::size_t a = 0; a < A; ++a) {
    for (std::size_t cell = 0; cell < plane; ++cell) {
      auto idx = [&](std::size_t k) { return (a * per + k) * plane + cell; };
      auto tgt = [&](std::size_t k) { return target.values[(a * per + k) * plane + cell]; };
      const double so = sigmoid(raw[idx(kObjectness)]);
      if (!(tgt(kObjectness) > 0.5)) {
        loss += cfg.lambda_noobj * so * so;
        grad[idx(kObjectness)] = 2.0 * cfg.lambda_noobj * so * so * (1.0 - so);
        continue;
      }
      loss += cfg.lambda_obj * (so - 1.0) * (so - 1.0);
      grad[idx(kObjectness)] = 2.0 * cfg.lambda_obj * (so - 1.0) * so * (1.0 - so);
      for (std::size_t k : {kTx, kTy}) {
        const double s = sigmoid(raw[idx(k)]);
        const double diff = s - tgt(k);
        loss += cfg.lambda_coord * diff * diff;
        grad[idx(k)] = 2.0 * cfg.lambda_coord * diff * s * (1.0 - s);
      }
      for (std::size_t k : {kTw, kTh}) {
        const double diff = raw[idx(k)] - tgt(k);
        loss += cfg.lambda_coord * diff * diff;
        grad[idx(k)] = 2.0 * cfg.lambda_coord * diff;
      }
      double peak = raw[idx(kFirstClass)];
      for (std::size_t k = 1; k < C; ++k) peak = std::max(peak, raw[idx(kFirstClass + k)]);
      double total = 0.0;
      for (std::size_t k = 0; k < C; ++k) {
        probs[k] = std::exp(raw[idx(kFirstClass + k)] - peak);
        total += probs[k];
      }
      double weighted = 0.0;
      for (std::size_t k = 0; k < C; ++k) {
        probs[k] /= total;
        const double diff = probs[k] - tgt(kFirstClass + k);
        loss += cfg.lambda_class * diff * diff;
        weighted += diff * probs[k];
      }
      for (std::size_t k = 0; k < C; ++k) {
        const double diff = probs[k] - tgt(kFirstClass + k);
        grad[idx(kFirstClass + k)] = 2.0 * cfg.lambda_class * probs[k] * (diff - weighted);
      }
    }
  }
  return loss;
}

}  // namespace

YoloLoss yolo_loss(const Tensor& raw, const TargetGrid& target, const YoloLossConfig& config) {
  DetectionHeadSpec head{target.num_classes, target.num_anchors, target.grid_size,
                         (target.num_classes + 5) * target.num_anchors};
  raw_dims(raw, head);
  YoloLoss result;
  result.grad_raw = Tensor(raw.shape());
  result.loss = sample_loss(raw.data(), result.grad_raw.data(), target, config);
  return result;
}

YoloLoss yolo_loss_batch(const Tensor& raw, std::span<const TargetGrid> targets, const YoloLossConfig& config) {
  if (raw.rank() != 4 || raw.dim(0) != targets.size()) {
    throw ShapeError("yolo_loss_batch: raw " + shape_string(raw.shape()) + " for " + std::to_string(targets.size()) +
                     " targets");
  }
  YoloLoss result;
  result.grad_raw = Tensor(raw.shape());
  const std::size_t per_sample = raw.size() / targets.size();
  for (std::size_t n = 0; n < targets.size(); ++n) {
    const TargetGrid& t = targets[n];
    if (per_sample != t.values.size()) throw ShapeError("yolo_loss_batch: target grid does not match head output");
    result.loss += sample_loss(raw.data() + n * per_sample, result.grad_raw.data() + n * per_sample, t, config);
  }
  return result;
}

void write_detection_csv_header(std::ostream& out) { out << "image,cx,cy,w,h,score,class_id\n"; }

void write_detection_csv_rows(std::ostream& out, const std::string& image, std::span<const Detection> detections) {
  char buffer[256];
  for (const Detection& d : detections) {
    std::snprintf(buffer, sizeof(buffer), ",%.6f,%.6f,%.6f,%.6f,%.6f,%zu\n", d.cx, d.cy, d.w, d.h, d.score,
                  d.class_id);
    out << image << buffer;
  }
}

}  // namespace npdet
