#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "npdet/error.hpp"
#include "npdet/evaluation.hpp"
#include "trials.hpp"

namespace npdet {
namespace {

Box unit(double x) { return Box::from_corner(x, 0, 10, 10); }

TEST(Match, ExactDetectionsAreAllTruePositives) {
  const std::vector<Box> gts = {unit(0), unit(20), unit(40)};
  std::vector<ScoredBox> dets;
  for (const Box& b : gts) dets.push_back({b, 0.9});
  const MatchOutcome m = match_detections(dets, gts);
  EXPECT_EQ(m.tp, 3u);
  EXPECT_EQ(m.fp, 0u);
  EXPECT_EQ(m.fn, 0u);
}

TEST(Match, NoDetectionsMissEverything) {
  const std::vector<Box> gts = {unit(0), unit(20)};
  const MatchOutcome m = match_detections({}, gts);
  EXPECT_EQ(m.fn, 2u);
  EXPECT_EQ(m.tp, 0u);
}

TEST(Match, DuplicateDetectionIsFalsePositive) {
  const std::vector<Box> gts = {unit(0)};
  const std::vector<ScoredBox> dets = {{unit(1), 0.8}, {unit(0), 0.9}};
  const MatchOutcome m = match_detections(dets, gts);
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.order, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(m.true_positive, (std::vector<bool>{true, false}));
}

TEST(Match, InclusiveThreshold) {
  // IOU exactly 0.5: overlap 10x10 of union 200 would be 1/3, so use 50 / 100.
  const std::vector<Box> gts = {Box{0, 0, 10, 10}};
  const std::vector<ScoredBox> dets = {{Box{0, 0, 10, 5}, 0.9}};
  EXPECT_EQ(match_detections(dets, gts, 0.5).tp, 1u);
}

TEST(Match, CountsAreConserved) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const ImageResult scene = testing::random_scene(seed, 8, 5);
    const MatchOutcome m = match_detections(scene.detections, scene.ground_truth);
    EXPECT_EQ(m.tp + m.fn, scene.ground_truth.size());
    EXPECT_EQ(m.tp + m.fp, scene.detections.size());
  }
}

TEST(PrecisionRecall, Substitution) {
  MatchOutcome m;
  m.tp = 3;
  m.fp = 1;
  EXPECT_DOUBLE_EQ(precision(m), 0.75);
  EXPECT_DOUBLE_EQ(recall(m), 1.0);
  EXPECT_DOUBLE_EQ(precision(MatchOutcome{}), 1.0);
  EXPECT_DOUBLE_EQ(recall(MatchOutcome{}), 1.0);
}

TEST(AveragePrecision, PerfectAndAllWrong) {
  ImageResult perfect{{{unit(0), 0.9}, {unit(20), 0.5}}, {unit(0), unit(20)}};
  EXPECT_DOUBLE_EQ(average_precision(std::vector<ImageResult>{perfect}).ap, 1.0);
  ImageResult wrong{{{unit(100), 0.9}, {unit(200), 0.5}}, {unit(0), unit(20)}};
  EXPECT_DOUBLE_EQ(average_precision(std::vector<ImageResult>{wrong}).ap, 0.0);
}

TEST(AveragePrecision, TpFpTpOverTwoTruths) {
  ImageResult r{{{unit(0), 0.9}, {unit(100), 0.8}, {unit(20), 0.7}}, {unit(0), unit(20)}};
  const std::vector<ImageResult> images = {r};
  const double ap = average_precision(images).ap;
  EXPECT_NEAR(ap, testing::brute_force_ap(images), 1e-12);
  // Envelope (0,1) (0.5,1) (0.5,2/3) (1,2/3).
  EXPECT_NEAR(ap, 5.0 / 6.0, 1e-12);
}

TEST(AveragePrecision, NoGroundTruthIsUndefined) {
  ImageResult r{{{unit(0), 0.9}}, {}};
  EXPECT_THROW(average_precision(std::vector<ImageResult>{r}), UndefinedMetricError);
}

TEST(AveragePrecision, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    std::vector<ImageResult> images;
    for (std::uint64_t k = 0; k < 1 + seed % 3; ++k) images.push_back(testing::random_scene(seed * 7 + k, 6, 4));
    EXPECT_NEAR(average_precision(images).ap, testing::brute_force_ap(images), 1e-12) << seed;
  }
}

TEST(AveragePrecision, BoundedAndInvariantUnderMonotoneScores) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    std::vector<ImageResult> images = {testing::random_scene(seed, 6, 4)};
    const double ap = average_precision(images).ap;
    EXPECT_GE(ap, 0.0);
    EXPECT_LE(ap, 1.0);
    for (ScoredBox& d : images[0].detections) d.score = std::exp(3.0 * d.score) - 7.0;
    EXPECT_NEAR(average_precision(images).ap, ap, 1e-12);
  }
}

TEST(AveragePrecision, RaisingThresholdNeverRaisesRecall) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const std::vector<ImageResult> images = {testing::random_scene(seed, 6, 4), testing::random_scene(seed + 999, 6, 4)};
    double previous = 2.0;
    for (double t = 0.0; t <= 1.0; t += 0.05) {
      const double r = recall(match_at_threshold(images, t));
      EXPECT_LE(r, previous);
      previous = r;
    }
  }
}

TEST(Accuracy, Counts) {
  std::vector<std::size_t> truth(120, 1), predicted(120, 1);
  EXPECT_DOUBLE_EQ(classification_accuracy(predicted, truth), 1.0);
  predicted[17] = 0;
  EXPECT_DOUBLE_EQ(classification_accuracy(predicted, truth), 119.0 / 120.0);
  std::fill(predicted.begin(), predicted.end(), 2);
  EXPECT_DOUBLE_EQ(classification_accuracy(predicted, truth), 0.0);
  EXPECT_THROW(classification_accuracy({}, {}), ConfigError);
  EXPECT_THROW(classification_accuracy(std::vector<std::size_t>{1}, truth), ConfigError);
}

TEST(GroupReport, SingleGroupEqualsPooled) {
  std::vector<GroupedImage> images;
  for (std::uint64_t s = 0; s < 5; ++s) images.push_back({"IND", testing::random_scene(s, 6, 4)});
  const EvalReport r = per_group_report(images);
  ASSERT_EQ(r.groups.size(), 1u);
  EXPECT_EQ(r.groups[0].ap, r.pooled.ap);
  EXPECT_EQ(r.groups[0].precision, r.pooled.precision);
  EXPECT_EQ(r.groups[0].recall, r.pooled.recall);
}

TEST(GroupReport, IdenticalGroupsHaveIdenticalAp) {
  std::vector<GroupedImage> images;
  for (std::uint64_t s = 0; s < 4; ++s) {
    images.push_back({"A", testing::random_scene(s, 6, 4)});
    images.push_back({"B", testing::random_scene(s, 6, 4)});
  }
  const EvalReport r = per_group_report(images);
  ASSERT_EQ(r.groups.size(), 2u);
  EXPECT_EQ(r.groups[0].group, "A");
  EXPECT_EQ(r.groups[0].ap, r.groups[1].ap);
}

TEST(GroupReport, ThreeGroupsMatchOraclePerGroup) {
  const std::vector<std::string> names = {"EU", "USA", "KSA"};
  std::vector<GroupedImage> images;
  std::vector<std::vector<ImageResult>> by_group(3);
  for (std::uint64_t s = 0; s < 30; ++s) {
    const ImageResult scene = testing::random_scene(s + 500, 6, 4);
    images.push_back({names[s % 3], scene});
    by_group[s % 3].push_back(scene);
  }
  const EvalReport r = per_group_report(images);
  ASSERT_EQ(r.groups.size(), 3u);
  for (std::size_t g = 0; g < 3; ++g) {
    EXPECT_EQ(r.groups[g].group, names[g]);
    ASSERT_TRUE(r.groups[g].ap.has_value());
    EXPECT_NEAR(*r.groups[g].ap, testing::brute_force_ap(by_group[g]), 1e-12);
  }
}

TEST(GroupReport, GroupWithoutTruthIsUndefinedNotZero) {
  std::vector<GroupedImage> images = {{"A", testing::random_scene(1, 6, 4)},
                                      {"empty", ImageResult{{{unit(0), 0.9}}, {}}}};
  const EvalReport r = per_group_report(images);
  EXPECT_FALSE(r.groups[1].ap.has_value());
  EXPECT_EQ(r.undefined_groups, (std::vector<std::string>{"empty"}));
  EXPECT_TRUE(r.pooled.ap.has_value());
}

TEST(GroupReport, CsvLayout) {
  std::vector<GroupedImage> images = {{"A", ImageResult{{{unit(0), 0.9}}, {unit(0)}}}};
  std::ostringstream out;
  write_report_csv(per_group_report(images), out);
  const std::string text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "group,ap,precision,recall");
  EXPECT_NE(text.find("\npooled,"), std::string::npos);
  std::ostringstream curve;
  write_pr_curve_csv(per_group_report(images).pooled_curve, curve);
  EXPECT_EQ(curve.str().substr(0, curve.str().find('\n')), "threshold,recall,precision");
  std::ostringstream svg;
  write_pr_curve_svg(per_group_report(images).pooled_curve, svg);
  EXPECT_NE(svg.str().find("<polyline"), std::string::npos);
}

}  // namespace
}  // namespace npdet
