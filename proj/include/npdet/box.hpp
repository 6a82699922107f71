#pragma once

namespace npdet {

// Axis-aligned box in corner form, pixels.
struct Box {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  static Box from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
  static Box from_corner(double x, double y, double w, double h) { return {x, y, x + w, y + h}; }

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double center_x() const { return 0.5 * (x0 + x1); }
  double center_y() const { return 0.5 * (y0 + y1); }
  double area() const { return width() > 0.0 && height() > 0.0 ? width() * height() : 0.0; }

  friend bool operator==(const Box&, const Box&) = default;
};

// Intersection over union in [0, 1]. A zero-area box has IOU 0 with
// everything, itself included.
double iou(const Box& a, const Box& b);

}  // namespace npdet
