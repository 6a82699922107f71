#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "npdet/anchors.hpp"
#include "npdet/box.hpp"
#include "npdet/error.hpp"
#include "npdet/rng.hpp"

namespace npdet {
namespace {

TEST(Pyramid, DefaultHasNinetyAnchorsInBaseMajorOrder) {
  const AnchorSet set = generate_pyramid(default_pyramid());
  ASSERT_EQ(set.size(), 90u);
  const std::vector<BoxSize> bases = {{10, 10}, {10, 20}, {10, 30}, {10, 40}, {10, 50}, {30, 14}};
  for (std::size_t i = 0; i < bases.size(); ++i) {
    for (std::size_t k = 0; k < 15; ++k) {
      const BoxSize& a = set[i * 15 + k];
      const double f = std::pow(1.3, static_cast<double>(k));
      EXPECT_LE(std::abs(a.height - bases[i].height * f), 1e-12 * bases[i].height * f);
      EXPECT_LE(std::abs(a.width - bases[i].width * f), 1e-12 * bases[i].width * f);
    }
  }
}

TEST(Pyramid, SecondLevelOfTenByTen) {
  const AnchorSet set = generate_pyramid({{{10, 10}}, 3, 1.3});
  EXPECT_NEAR(set[2].height, 16.9, 1e-12);
  EXPECT_NEAR(set[2].width, 16.9, 1e-12);
}

TEST(Pyramid, SingleLevelIsTheBase) {
  const AnchorSet set = generate_pyramid({{{7, 21}}, 1, 1.3});
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set[0], (BoxSize{7, 21}));
}

TEST(Pyramid, CountLawOverRandomConfigs) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    PyramidConfig cfg;
    const auto bases = rng.integer(1, 8);
    for (std::int64_t b = 0; b < bases; ++b) cfg.base_sizes.push_back({rng.uniform(1, 50), rng.uniform(1, 50)});
    cfg.num_levels = static_cast<std::size_t>(rng.integer(1, 20));
    cfg.scale = rng.uniform(1.05, 3.0);
    EXPECT_EQ(generate_pyramid(cfg).size(), cfg.base_sizes.size() * cfg.num_levels);
  }
}

TEST(Pyramid, RejectsInvalidConfig) {
  EXPECT_THROW(generate_pyramid({{}, 3, 1.3}), ConfigError);
  EXPECT_THROW(generate_pyramid({{{10, 10}}, 0, 1.3}), ConfigError);
  EXPECT_THROW(generate_pyramid({{{10, 10}}, 3, 1.0}), ConfigError);
  EXPECT_THROW(generate_pyramid({{{0, 10}}, 3, 1.3}), ConfigError);
}

TEST(Iou, RectangleArithmetic) {
  const Box a{0, 0, 10, 10};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, {20, 20, 30, 30}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, {5, 0, 15, 10}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou(a, {10, 0, 20, 10}), 0.0);
}

TEST(Iou, ZeroAreaBoxMatchesNothing) {
  const Box flat{3, 3, 3, 9};
  EXPECT_EQ(iou(flat, flat), 0.0);
  EXPECT_EQ(iou(flat, {0, 0, 10, 10}), 0.0);
}

TEST(Iou, SymmetricBoundedAndReflexive) {
  Rng rng(2);
  auto random_box = [&] {
    const double x = rng.uniform(-20, 20), y = rng.uniform(-20, 20);
    return Box::from_corner(x, y, rng.uniform(0.1, 30), rng.uniform(0.1, 30));
  };
  for (int i = 0; i < 10000; ++i) {
    const Box a = random_box(), b = random_box();
    const double ab = iou(a, b);
    EXPECT_EQ(ab, iou(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_NEAR(iou(a, a), 1.0, 1e-15);
  }
}

TEST(BestAnchor, ExactAnchorWins) {
  const AnchorSet set = generate_pyramid(default_pyramid());
  const AnchorMatch m = best_anchor(set[37], set);
  EXPECT_EQ(m.index, 37u);
  EXPECT_DOUBLE_EQ(m.iou, 1.0);
}

TEST(BestAnchor, ContainmentRatio) {
  const AnchorSet set{{{10, 10}, {16.9, 16.9}}, {}};
  const AnchorMatch m = best_anchor({13, 13}, set);
  EXPECT_EQ(m.index, 0u);
  EXPECT_NEAR(m.iou, 100.0 / 169.0, 1e-12);
}

TEST(BestAnchor, ScaledCopyGivesInverseSquare) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const BoxSize anchor{rng.uniform(2, 40), rng.uniform(2, 40)};
    const double s = rng.uniform(1.0, 5.0);
    const AnchorSet set{{anchor}, {}};
    EXPECT_NEAR(best_anchor({anchor.height * s, anchor.width * s}, set).iou, 1.0 / (s * s), 1e-12);
  }
}

TEST(BestAnchor, TieGoesToLowestIndex) {
  const AnchorSet set{{{10, 20}, {20, 10}}, {}};
  EXPECT_EQ(best_anchor({10, 10}, set).index, 0u);
  EXPECT_THROW(best_anchor({10, 10}, AnchorSet{}), Error);
}

TEST(Coverage, AnchorSizedBoxesGiveUnitIou) {
  const AnchorSet set = generate_pyramid(default_pyramid());
  const CoverageReport r = coverage_stats(set.anchors, set);
  EXPECT_DOUBLE_EQ(r.min_best_iou, 1.0);
  EXPECT_DOUBLE_EQ(r.mean_best_iou, 1.0);
  EXPECT_EQ(r.histogram.back(), 90u);
}

// Boxes 1.3x the largest square anchor have no larger neighbour.
TEST(Coverage, ScaledTopLevelGivesInverseSquare) {
  const AnchorSet set = generate_pyramid(default_pyramid());
  const BoxSize& top = set[14];
  const std::vector<BoxSize> boxes(4, BoxSize{top.height * 1.3, top.width * 1.3});
  const CoverageReport r = coverage_stats(boxes, set);
  EXPECT_NEAR(r.min_best_iou, 1.0 / 1.69, 1e-12);
  EXPECT_NEAR(r.mean_best_iou, 1.0 / 1.69, 1e-12);
}

TEST(Coverage, PyramidCompletenessBound) {
  const PyramidConfig cfg = default_pyramid();
  const AnchorSet set = generate_pyramid(cfg);
  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    const BoxSize& base = cfg.base_sizes[static_cast<std::size_t>(rng.integer(0, 5))];
    const double f = std::pow(cfg.scale, rng.uniform(0.0, 14.0));
    EXPECT_GE(best_anchor({base.height * f, base.width * f}, set).iou, 1.0 / (cfg.scale * cfg.scale));
  }
}

TEST(Coverage, AddingAnchorNeverLowersBestIou) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    AnchorSet set;
    for (int i = 0; i < 5; ++i) set.anchors.push_back({rng.uniform(5, 60), rng.uniform(5, 60)});
    AnchorSet bigger = set;
    bigger.anchors.push_back({rng.uniform(5, 60), rng.uniform(5, 60)});
    const BoxSize box{rng.uniform(5, 60), rng.uniform(5, 60)};
    EXPECT_GE(best_anchor(box, bigger).iou, best_anchor(box, set).iou);
  }
}

TEST(Coverage, SyntheticSizesAboveHalf) {
  const AnchorSet set = generate_pyramid(default_pyramid());
  Rng rng(6);
  std::vector<BoxSize> boxes;
  for (int i = 0; i < 1000; ++i) {
    const double w = rng.log_uniform(10, 670);
    const double h = std::clamp(w / rng.uniform(1.2, 4.5), 10.0, w);
    boxes.push_back({h, w});
  }
  EXPECT_GE(coverage_stats(boxes, set).min_best_iou, 0.5);
}

TEST(Coverage, EmptyInputRejected) {
  EXPECT_THROW(coverage_stats({}, generate_pyramid(default_pyramid())), ConfigError);
}

TEST(Coverage, CsvFormats) {
  const AnchorSet set{{{10, 10}, {20, 40}}, {}};
  const std::vector<BoxSize> boxes = {{10, 10}};
  std::ostringstream cov, anc;
  write_coverage_csv(coverage_stats(boxes, set), cov);
  write_anchor_csv(set, anc);
  EXPECT_EQ(cov.str().substr(0, cov.str().find('\n')), "box_h,box_w,best_anchor_index,best_iou");
  EXPECT_NE(cov.str().find("min,mean"), std::string::npos);
  EXPECT_EQ(anc.str().substr(0, anc.str().find('\n')), "index,height,width");
}

}  // namespace
}  // namespace npdet
