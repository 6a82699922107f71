#include <gtest/gtest.h>
#include <omp.h>

#include <vector>

#include "npdet/error.hpp"
#include "npdet/kernels.hpp"
#include "npdet/rng.hpp"

namespace npdet::kernels {
namespace {

std::vector<double> random_values(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1, 1);
  return v;
}

Conv2dShape random_shape(Rng& rng) {
  for (;;) {
    const auto k = static_cast<std::size_t>(rng.integer(1, 5));
    const auto pad = static_cast<std::size_t>(rng.integer(0, 3));
    const auto h = static_cast<std::size_t>(rng.integer(1, 13));
    const auto w = static_cast<std::size_t>(rng.integer(1, 13));
    if (h + 2 * pad < k || w + 2 * pad < k) continue;
    return Conv2dShape::make(static_cast<std::size_t>(rng.integer(1, 3)), static_cast<std::size_t>(rng.integer(1, 4)),
                             h, w, static_cast<std::size_t>(rng.integer(1, 4)), k, k,
                             static_cast<std::size_t>(rng.integer(1, 3)), pad);
  }
}

TEST(Conv2dShape, ComputesOutputExtent) {
  const Conv2dShape s = Conv2dShape::make(2, 3, 224, 224, 32, 5, 5, 1, 0);
  EXPECT_EQ(s.out_height, 220u);
  EXPECT_EQ(s.out_width, 220u);
  EXPECT_EQ(s.kernel_size(), 32u * 3 * 25);
  EXPECT_THROW(Conv2dShape::make(1, 1, 2, 2, 1, 5, 5, 1, 0), ShapeError);
}

TEST(ReferenceConv, OnesKernelOverOnes) {
  const Conv2dShape s = Conv2dShape::make(1, 1, 3, 3, 1, 2, 2, 1, 0);
  std::vector<double> in(9, 1.0), k(4, 1.0), out(4, -1.0);
  reference::conv2d_forward(s, in, k, {}, out);
  EXPECT_EQ(out, std::vector<double>(4, 4.0));
}

TEST(ReferenceConv, PaddingContributesZeros) {
  // 3x3 ones, 3x3 ones kernel, pad 1: corner windows see 4 ones, edges 6, center 9.
  const Conv2dShape s = Conv2dShape::make(1, 1, 3, 3, 1, 3, 3, 1, 1);
  std::vector<double> in(9, 1.0), k(9, 1.0), out(9);
  reference::conv2d_forward(s, in, k, {}, out);
  EXPECT_EQ(out, (std::vector<double>{4, 6, 4, 6, 9, 6, 4, 6, 4}));
}

TEST(ParallelConv, ForwardMatchesReferenceExactly) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Conv2dShape s = random_shape(rng);
    const auto in = random_values(s.input_size(), rng);
    const auto k = random_values(s.kernel_size(), rng);
    const auto b = random_values(s.out_channels, rng);
    std::vector<double> expected(s.output_size()), actual(s.output_size(), 7.0);
    reference::conv2d_forward(s, in, k, b, expected);
    conv2d_forward(s, in, k, b, actual);
    ASSERT_EQ(actual, expected) << "trial " << trial;
  }
}

TEST(ParallelConv, BackwardInputMatchesReferenceExactly) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const Conv2dShape s = random_shape(rng);
    const auto g = random_values(s.output_size(), rng);
    const auto k = random_values(s.kernel_size(), rng);
    std::vector<double> expected(s.input_size()), actual(s.input_size(), 7.0);
    reference::conv2d_backward_input(s, g, k, expected);
    conv2d_backward_input(s, g, k, actual);
    ASSERT_EQ(actual, expected) << "trial " << trial;
  }
}

TEST(ParallelConv, BackwardKernelMatchesReference) {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const Conv2dShape s = random_shape(rng);
    const auto in = random_values(s.input_size(), rng);
    const auto g = random_values(s.output_size(), rng);
    std::vector<double> ek(s.kernel_size()), eb(s.out_channels), ak(s.kernel_size(), 7.0), ab(s.out_channels, 7.0);
    reference::conv2d_backward_kernel(s, in, g, ek, eb);
    conv2d_backward_kernel(s, in, g, ak, ab);
    for (std::size_t i = 0; i < ek.size(); ++i) ASSERT_NEAR(ak[i], ek[i], 1e-12) << "trial " << trial;
    for (std::size_t i = 0; i < eb.size(); ++i) ASSERT_NEAR(ab[i], eb[i], 1e-12) << "trial " << trial;
  }
}

TEST(ParallelConv, BiasMayBeOmitted) {
  Rng rng(14);
  const Conv2dShape s = Conv2dShape::make(1, 2, 5, 5, 3, 3, 3, 1, 1);
  const auto in = random_values(s.input_size(), rng);
  const auto k = random_values(s.kernel_size(), rng);
  std::vector<double> with_zero(s.output_size()), without(s.output_size());
  conv2d_forward(s, in, k, std::vector<double>(3, 0.0), with_zero);
  conv2d_forward(s, in, k, {}, without);
  EXPECT_EQ(with_zero, without);
  std::vector<double> gk(s.kernel_size());
  conv2d_backward_kernel(s, in, without, gk, {});
}

TEST(ParallelConv, ResultsIndependentOfThreadCount) {
  Rng rng(15);
  const Conv2dShape s = Conv2dShape::make(3, 4, 17, 19, 5, 3, 3, 2, 1);
  const auto in = random_values(s.input_size(), rng);
  const auto k = random_values(s.kernel_size(), rng);
  const auto g = random_values(s.output_size(), rng);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<double> out(s.output_size()), gi(s.input_size()), gk(s.kernel_size()), gb(s.out_channels);
    conv2d_forward(s, in, k, {}, out);
    conv2d_backward_input(s, g, k, gi);
    conv2d_backward_kernel(s, in, g, gk, gb);
    out.insert(out.end(), gi.begin(), gi.end());
    out.insert(out.end(), gk.begin(), gk.end());
    out.insert(out.end(), gb.begin(), gb.end());
    return out;
  };
  const int saved = omp_get_max_threads();
  const auto one = run(1);
  const auto four = run(4);
  omp_set_num_threads(saved);
  EXPECT_EQ(one, four);
}

TEST(ParallelConv, RejectsWrongBufferSizes) {
  const Conv2dShape s = Conv2dShape::make(1, 1, 4, 4, 1, 3, 3, 1, 0);
  std::vector<double> in(16), k(9), out(4), small(3);
  EXPECT_THROW(conv2d_forward(s, in, k, {}, small), ShapeError);
  EXPECT_THROW(conv2d_forward(s, small, k, {}, out), ShapeError);
}

}  // namespace
}  // namespace npdet::kernels
