#pragma once

#include <cstddef>

namespace npdet {

// One spatial axis of a sliding-window operator.
struct AxisGeometry {
  long in = 1;
  long kernel = 1;
  long padding = 0;
  long stride = 1;
};

struct ShapeSpec {
  AxisGeometry width;
  AxisGeometry height;
};

struct Extent2 {
  std::size_t width = 0;
  std::size_t height = 0;
  friend bool operator==(const Extent2&, const Extent2&) = default;
};

// floor((in - kernel + 2 * padding) / stride) + 1. Trailing pixels that do not
// fill a whole window are dropped. Throws ShapeError when the kernel is larger
// than the padded input or a parameter is out of range.
std::size_t output_extent(const AxisGeometry& axis);
Extent2 output_shape(const ShapeSpec& spec);

}  // namespace npdet
