#include "npdet/geometry.hpp"

#include <string>

#include "npdet/error.hpp"

namespace npdet {

std::size_t output_extent(const AxisGeometry& axis) {
  if (axis.kernel < 1 || axis.stride < 1 || axis.padding < 0 || axis.in < 1) {
    throw ShapeError("invalid window geometry: in=" + std::to_string(axis.in) + " kernel=" +
                     std::to_string(axis.kernel) + " padding=" + std::to_string(axis.padding) +
                     " stride=" + std::to_string(axis.stride));
  }
  const long numerator = axis.in - axis.kernel + 2 * axis.padding;
  if (numerator < 0) {
    throw ShapeError("kernel " + std::to_string(axis.kernel) + " larger than padded input " +
                     std::to_string(axis.in + 2 * axis.padding));
  }
  return static_cast<std::size_t>(numerator / axis.stride + 1);
}

Extent2 output_shape(const ShapeSpec& spec) {
  return {output_extent(spec.width), output_extent(spec.height)};
}

}  // namespace npdet
