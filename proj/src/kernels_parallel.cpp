#include <algorithm>
#include <cstddef>

#include "npdet/error.hpp"
#include "npdet/kernels.hpp"

namespace npdet::kernels {

namespace {

// Output positions [lo, hi) whose window tap `k` lands inside the input.
struct Range {
  std::size_t lo;
  std::size_t hi;
};

Range valid_outputs(std::size_t k, std::size_t pad, std::size_t stride, std::size_t in, std::size_t out) {
  const long kl = static_cast<long>(k);
  const long pl = static_cast<long>(pad);
  const long sl = static_cast<long>(stride);
  long lo = 0;
  if (pl > kl) lo = (pl - kl + sl - 1) / sl;
  const long last_in = static_cast<long>(in) - 1 + pl - kl;
  if (last_in < 0) return {0, 0};
  long hi = last_in / sl + 1;
  hi = std::min(hi, static_cast<long>(out));
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

void check(const Conv2dShape& s, std::size_t input, std::size_t kernel, std::size_t output) {
  if (input != s.input_size() || kernel != s.kernel_size() || output != s.output_size()) {
    throw ShapeError("conv2d: buffer sizes do not match geometry");
  }
}

}  // namespace

void conv2d_forward(const Conv2dShape& s, std::span<const double> input, std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> output) {
  check(s, input.size(), kernel.size(), output.size());
  const std::size_t in_plane = s.in_height * s.in_width;
  const std::size_t out_plane = s.out_height * s.out_width;
  const std::size_t taps = s.kernel_height * s.kernel_width;
  // Keep a block of output rows resident while every tap is applied.
  const std::size_t rows_per_tile = std::max<std::size_t>(1, 2048 / std::max<std::size_t>(1, s.out_width));
  const long planes = static_cast<long>(s.batch * s.out_channels);

#pragma omp parallel for schedule(static)
  for (long plane = 0; plane < planes; ++plane) {
    const std::size_t n = static_cast<std::size_t>(plane) / s.out_channels;
    const std::size_t oc = static_cast<std::size_t>(plane) % s.out_channels;
    double* out = output.data() + static_cast<std::size_t>(plane) * out_plane;
    std::fill(out, out + out_plane, bias.empty() ? 0.0 : bias[oc]);

    for (std::size_t r0 = 0; r0 < s.out_height; r0 += rows_per_tile) {
      const std::size_t r1 = std::min(s.out_height, r0 + rows_per_tile);
      for (std::size_t ic = 0; ic < s.in_channels; ++ic) {
        const double* in = input.data() + (n * s.in_channels + ic) * in_plane;
        const double* w = kernel.data() + (oc * s.in_channels + ic) * taps;
        for (std::size_t kh = 0; kh < s.kernel_height; ++kh) {
          const Range rows = valid_outputs(kh, s.padding, s.stride, s.in_height, s.out_height);
          const std::size_t oh_lo = std::max(rows.lo, r0);
          const std::size_t oh_hi = std::min(rows.hi, r1);
          for (std::size_t kw = 0; kw < s.kernel_width; ++kw) {
            const double weight = w[kh * s.kernel_width + kw];
            const Range cols = valid_outputs(kw, s.padding, s.stride, s.in_width, s.out_width);
            for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
              const std::size_t ih = oh * s.stride + kh - s.padding;
              const double* in_row = in + ih * s.in_width;
              double* out_row = out + oh * s.out_width;
              if (s.stride == 1) {
                for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) out_row[ow] += weight * in_row[ow + kw - s.padding];
              } else {
                for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) {
                  out_row[ow] += weight * in_row[ow * s.stride + kw - s.padding];
                }
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const Conv2dShape& s, std::span<const double> grad_output,
                           std::span<const double> kernel, std::span<double> grad_input) {
  check(s, grad_input.size(), kernel.size(), grad_output.size());
  const std::size_t in_plane = s.in_height * s.in_width;
  const std::size_t out_plane = s.out_height * s.out_width;
  const std::size_t taps = s.kernel_height * s.kernel_width;
  const long planes = static_cast<long>(s.batch * s.in_channels);

#pragma omp parallel for schedule(static)
  for (long plane = 0; plane < planes; ++plane) {
    const std::size_t n = static_cast<std::size_t>(plane) / s.in_channels;
    const std::size_t ic = static_cast<std::size_t>(plane) % s.in_channels;
    double* gin = grad_input.data() + static_cast<std::size_t>(plane) * in_plane;
    std::fill(gin, gin + in_plane, 0.0);
    for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
      const double* gout = grad_output.data() + (n * s.out_channels + oc) * out_plane;
      const double* w = kernel.data() + (oc * s.in_channels + ic) * taps;
      for (std::size_t kh = 0; kh < s.kernel_height; ++kh) {
        const Range rows = valid_outputs(kh, s.padding, s.stride, s.in_height, s.out_height);
        for (std::size_t kw = 0; kw < s.kernel_width; ++kw) {
          const double weight = w[kh * s.kernel_width + kw];
          const Range cols = valid_outputs(kw, s.padding, s.stride, s.in_width, s.out_width);
          for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
            const std::size_t ih = oh * s.stride + kh - s.padding;
            double* gin_row = gin + ih * s.in_width;
            const double* gout_row = gout + oh * s.out_width;
            if (s.stride == 1) {
              for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) gin_row[ow + kw - s.padding] += weight * gout_row[ow];
            } else {
              for (std::size_t ow = cols.lo; ow < cols.hi; ++ow) {
                gin_row[ow * s.stride + kw - s.padding] += weight * gout_row[ow];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_kernel(const Conv2dShape& s, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_kernel,
                            std::span<double> grad_bias) {
  check(s, input.size(), grad_kernel.size(), grad_output.size());
  const std::size_t in_plane = s.in_height * s.in_width;
  const std::size_t out_plane = s.out_height * s.out_width;
  const long out_channels = static_cast<long>(s.out_channels);

#pragma omp parallel for schedule(static)
  for (long ocl = 0; ocl < out_channels; ++ocl) {
    const auto oc = static_cast<std::size_t>(ocl);
    for (std::size_t ic = 0; ic < s.in_channels; ++ic) {
      for (std::size_t kh = 0; kh < s.kernel_height; ++kh) {
        const Range rows = valid_outputs(kh, s.padding, s.stride, s.in_height, s.out_height);
        for (std::size_t kw = 0; kw < s.kernel_width; ++kw) {
          const Range cols = valid_outputs(kw, s.padding, s.stride, s.in_width, s.out_width);
          double acc[4] = {0.0, 0.0, 0.0, 0.0};
          for (std::size_t n = 0; n < s.batch; ++n) {
            const double* gout = grad_output.data() + (n * s.out_channels + oc) * out_plane;
            const double* in = input.data() + (n * s.in_channels + ic) * in_plane;
            for (std::size_t oh = rows.lo; oh < rows.hi; ++oh) {
              const std::size_t ih = oh * s.stride + kh - s.padding;
              const double* gout_row = gout + oh * s.out_width;
              std::size_t ow = cols.lo;
              if (s.stride == 1) {
                // Unsigned wrap of `base` cancels once ow >= cols.lo is added.
                const std::size_t base = ih * s.in_width + kw - s.padding;
                for (; ow + 4 <= cols.hi; ow += 4) {
                  acc[0] += gout_row[ow] * in[base + ow];
                  acc[1] += gout_row[ow + 1] * in[base + ow + 1];
                  acc[2] += gout_row[ow + 2] * in[base + ow + 2];
                  acc[3] += gout_row[ow + 3] * in[base + ow + 3];
                }
              }
              const double* in_base = in + ih * s.in_width;
              for (; ow < cols.hi; ++ow) acc[0] += gout_row[ow] * in_base[ow * s.stride + kw - s.padding];
            }
          }
          grad_kernel[((oc * s.in_channels + ic) * s.kernel_height + kh) * s.kernel_width + kw] =
              (acc[0] + acc[1]) + (acc[2] + acc[3]);
        }
      }
    }
    if (!grad_bias.empty()) {
      double sum = 0.0;
      for (std::size_t n = 0; n < s.batch; ++n) {
        const double* gout = grad_output.data() + (n * s.out_channels + oc) * out_plane;
        for (std::size_t i = 0; i < out_plane; ++i) sum += gout[i];
      }
      grad_bias[oc] = sum;
    }
  }
}

}  // namespace npdet::kernels
