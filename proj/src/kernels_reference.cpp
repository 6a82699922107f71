#include <cstddef>

#include "npdet/error.hpp"
#include "npdet/geometry.hpp"
#include "npdet/kernels.hpp"

namespace npdet::kernels {

Conv2dShape Conv2dShape::make(std::size_t batch, std::size_t in_channels, std::size_t in_height,
                              std::size_t in_width, std::size_t out_channels, std::size_t kernel_height,
                              std::size_t kernel_width, std::size_t stride, std::size_t padding) {
  Conv2dShape s;
  s.batch = batch;
  s.in_channels = in_channels;
  s.in_height = in_height;
  s.in_width = in_width;
  s.out_channels = out_channels;
  s.kernel_height = kernel_height;
  s.kernel_width = kernel_width;
  s.stride = stride;
  s.padding = padding;
  const auto p = static_cast<long>(padding);
  const auto st = static_cast<long>(stride);
  s.out_height = output_extent({static_cast<long>(in_height), static_cast<long>(kernel_height), p, st});
  s.out_width = output_extent({static_cast<long>(in_width), static_cast<long>(kernel_width), p, st});
  return s;
}

namespace reference {

namespace {

void check(const Conv2dShape& s, std::size_t input, std::size_t kernel, std::size_t output) {
  if (input != s.input_size() || kernel != s.kernel_size() || output != s.output_size()) {
    throw ShapeError("reference conv2d: buffer sizes do not match geometry");
  }
}

}  // namespace

void conv2d_forward(const Conv2dShape& s, std::span<const double> input, std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> output) {
  check(s, input.size(), kernel.size(), output.size());
  const long pad = static_cast<long>(s.padding);
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
      for (std::size_t oh = 0; oh < s.out_height; ++oh) {
        for (std::size_t ow = 0; ow < s.out_width; ++ow) {
          double sum = bias.empty() ? 0.0 : bias[oc];
          for (std::size_t ic = 0; ic < s.in_channels; ++ic) {
            for (std::size_t kh = 0; kh < s.kernel_height; ++kh) {
              for (std::size_t kw = 0; kw < s.kernel_width; ++kw) {
                const long ih = static_cast<long>(oh * s.stride + kh) - pad;
                const long iw = static_cast<long>(ow * s.stride + kw) - pad;
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(s.in_height) ||
                    iw >= static_cast<long>(s.in_width)) {
                  continue;
                }
                const double x =
                    input[((n * s.in_channels + ic) * s.in_height + static_cast<std::size_t>(ih)) * s.in_width +
                          static_cast<std::size_t>(iw)];
                const double w =
                    kernel[((oc * s.in_channels + ic) * s.kernel_height + kh) * s.kernel_width + kw];
                sum += w * x;
              }
            }
          }
          output[((n * s.out_channels + oc) * s.out_height + oh) * s.out_width + ow] = sum;
        }
      }
    }
  }
}

void conv2d_backward_input(const Conv2dShape& s, std::span<const double> grad_output,
                           std::span<const double> kernel, std::span<double> grad_input) {
  check(s, grad_input.size(), kernel.size(), grad_output.size());
  const long pad = static_cast<long>(s.padding);
  const long stride = static_cast<long>(s.stride);
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t ic = 0; ic < s.in_channels; ++ic) {
      for (std::size_t ih = 0; ih < s.in_height; ++ih) {
        for (std::size_t iw = 0; iw < s.in_width; ++iw) {
          double sum = 0.0;
          for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
            for (std::size_t kh = 0; kh < s.kernel_height; ++kh) {
              for (std::size_t kw = 0; kw < s.kernel_width; ++kw) {
                const long th = static_cast<long>(ih) + pad - static_cast<long>(kh);
                const long tw = static_cast<long>(iw) + pad - static_cast<long>(kw);
                if (th < 0 || tw < 0 || th % stride != 0 || tw % stride != 0) continue;
                const long oh = th / stride;
                const long ow = tw / stride;
                if (oh >= static_cast<long>(s.out_height) || ow >= static_cast<long>(s.out_width)) continue;
                sum += kernel[((oc * s.in_channels + ic) * s.kernel_height + kh) * s.kernel_width + kw] *
                       grad_output[((n * s.out_channels + oc) * s.out_height + static_cast<std::size_t>(oh)) *
                                       s.out_width +
                                   static_cast<std::size_t>(ow)];
              }
            }
          }
          grad_input[((n * s.in_channels + ic) * s.in_height + ih) * s.in_width + iw] = sum;
        }
      }
    }
  }
}

void conv2d_backward_kernel(const Conv2dShape& s, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_kernel,
                            std::span<double> grad_bias) {
  check(s, input.size(), grad_kernel.size(), grad_output.size());
  const long pad = static_cast<long>(s.padding);
  for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
    for (std::size_t ic = 0; ic < s.in_channels; ++ic) {
      for (std::size_t kh = 0; kh < s.kernel_height; ++kh) {
        for (std::size_t kw = 0; kw < s.kernel_width; ++kw) {
          double sum = 0.0;
          for (std::size_t n = 0; n < s.batch; ++n) {
            for (std::size_t oh = 0; oh < s.out_height; ++oh) {
              for (std::size_t ow = 0; ow < s.out_width; ++ow) {
                const long ih = static_cast<long>(oh * s.stride + kh) - pad;
                const long iw = static_cast<long>(ow * s.stride + kw) - pad;
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(s.in_height) ||
                    iw >= static_cast<long>(s.in_width)) {
                  continue;
                }
                sum += grad_output[((n * s.out_channels + oc) * s.out_height + oh) * s.out_width + ow] *
                       input[((n * s.in_channels + ic) * s.in_height + static_cast<std::size_t>(ih)) * s.in_width +
                             static_cast<std::size_t>(iw)];
              }
            }
          }
          grad_kernel[((oc * s.in_channels + ic) * s.kernel_height + kh) * s.kernel_width + kw] = sum;
        }
      }
    }
    if (!grad_bias.empty()) {
      double sum = 0.0;
      for (std::size_t n = 0; n < s.batch; ++n) {
        for (std::size_t i = 0; i < s.out_height * s.out_width; ++i) {
          sum += grad_output[(n * s.out_channels + oc) * s.out_height * s.out_width + i];
        }
      }
      grad_bias[oc] = sum;
    }
  }
}

}  // namespace reference
}  // namespace npdet::kernels
