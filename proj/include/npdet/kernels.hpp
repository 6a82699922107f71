#pragma once

#include <cstddef>
#include <span>

namespace npdet::kernels {

// Geometry of a batched NCHW convolution with square stride/padding.
struct Conv2dShape {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_height = 1;
  std::size_t in_width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_height = 1;
  std::size_t kernel_width = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t out_height = 1;
  std::size_t out_width = 1;

  // Fills out_height/out_width from the input geometry; throws ShapeError.
  static Conv2dShape make(std::size_t batch, std::size_t in_channels, std::size_t in_height, std::size_t in_width,
                          std::size_t out_channels, std::size_t kernel_height, std::size_t kernel_width,
                          std::size_t stride, std::size_t padding);

  std::size_t input_size() const { return batch * in_channels * in_height * in_width; }
  std::size_t output_size() const { return batch * out_channels * out_height * out_width; }
  std::size_t kernel_size() const { return out_channels * in_channels * kernel_height * kernel_width; }
};

// OpenMP kernels. Work is split over (sample, channel) planes so every output
// element is produced by one thread in a fixed order: results do not depend on
// the thread count.
//
// `bias` may be empty. Outputs are overwritten, not accumulated.
void conv2d_forward(const Conv2dShape& shape, std::span<const double> input, std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> output);
void conv2d_backward_input(const Conv2dShape& shape, std::span<const double> grad_output,
                           std::span<const double> kernel, std::span<double> grad_input);
// `grad_bias` may be empty.
void conv2d_backward_kernel(const Conv2dShape& shape, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_kernel,
                            std::span<double> grad_bias);

// Serial direct-summation versions. Slow and obviously correct; used as the
// oracle for the parallel kernels and as the benchmark baseline.
namespace reference {
void conv2d_forward(const Conv2dShape& shape, std::span<const double> input, std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> output);
void conv2d_backward_input(const Conv2dShape& shape, std::span<const double> grad_output,
                           std::span<const double> kernel, std::span<double> grad_input);
void conv2d_backward_kernel(const Conv2dShape& shape, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_kernel,
                            std::span<double> grad_bias);
}  // namespace reference

}  // namespace npdet::kernels
