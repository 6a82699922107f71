#include <gtest/gtest.h>

#include "npdet/error.hpp"
#include "npdet/geometry.hpp"
#include "npdet/tensor.hpp"

namespace npdet {
namespace {

TEST(Tensor, SizeIsProductOfShape) {
  Tensor t({2, 3, 4, 5});
  EXPECT_EQ(t.size(), 120u);
  EXPECT_EQ(t.rank(), 4u);
  EXPECT_EQ(shape_string(t.shape()), "2x3x4x5");
}

TEST(Tensor, RowMajorIndexing) {
  Tensor t({2, 2, 2, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  EXPECT_EQ(t.at(1, 0, 1, 2), 1 * 12 + 0 * 6 + 1 * 3 + 2);
}

TEST(Tensor, ReshapeKeepsDataAndRejectsSizeChange) {
  Tensor t({2, 6}, 1.5);
  t.reshape({3, 4});
  EXPECT_EQ(t.dim(0), 3u);
  EXPECT_EQ(t[11], 1.5);
  EXPECT_THROW(t.reshape({5}), ShapeError);
}

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, FiniteCheck) {
  Tensor t({3});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
}

TEST(OutputShape, TableRows) {
  EXPECT_EQ(output_extent({224, 5, 0, 1}), 220u);
  EXPECT_EQ(output_extent({13, 2, 0, 2}), 6u);
  EXPECT_EQ(output_extent({216, 2, 0, 2}), 108u);
}

TEST(OutputShape, IdentityKernel) {
  for (long n = 1; n < 300; n += 7) EXPECT_EQ(output_extent({n, 1, 0, 1}), static_cast<std::size_t>(n));
}

TEST(OutputShape, PaddingAndStride) {
  EXPECT_EQ(output_extent({224, 3, 1, 2}), 112u);
  EXPECT_EQ(output_extent({7, 3, 1, 2}), 4u);
  const Extent2 e = output_shape({{10, 3, 0, 1}, {6, 2, 0, 2}});
  EXPECT_EQ(e, (Extent2{8, 3}));
}

TEST(OutputShape, RejectsKernelLargerThanPaddedInput) {
  EXPECT_THROW(output_extent({4, 7, 1, 1}), ShapeError);
  EXPECT_THROW(output_extent({4, 0, 0, 1}), ShapeError);
  EXPECT_THROW(output_extent({4, 2, 0, 0}), ShapeError);
  EXPECT_THROW(output_extent({4, 2, -1, 1}), ShapeError);
}

// floor((in - k + 2p) / s) + 1 against explicit window enumeration.
TEST(OutputShape, MatchesWindowCount) {
  for (long in = 1; in <= 12; ++in) {
    for (long k = 1; k <= 5; ++k) {
      for (long p = 0; p <= 2; ++p) {
        for (long s = 1; s <= 3; ++s) {
          if (in + 2 * p < k) continue;
          long windows = 0;
          for (long start = -p; start + k <= in + p; start += s) ++windows;
          EXPECT_EQ(output_extent({in, k, p, s}), static_cast<std::size_t>(windows));
        }
      }
    }
  }
}

}  // namespace
}  // namespace npdet
