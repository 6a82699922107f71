#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npdet/box.hpp"

namespace npdet {

struct ScoredBox {
  Box box;
  double score = 0.0;
};

struct MatchOutcome {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::vector<std::size_t> order;  // detection indices by descending score
  std::vector<bool> true_positive; // flag per entry of `order`
};

// Greedy one-to-one matching by descending score (stable for ties). A
// detection is a TP when its best still-unmatched ground truth has
// IOU >= iou_threshold.
MatchOutcome match_detections(std::span<const ScoredBox> detections, std::span<const Box> ground_truth,
                              double iou_threshold = 0.5);

// TP / (TP + FP) and TP / (TP + FN); both are 1 when the denominator is 0.
double precision(const MatchOutcome& outcome);
double recall(const MatchOutcome& outcome);

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;
  double score_threshold = 0.0;
};

struct ImageResult {
  std::vector<ScoredBox> detections;
  std::vector<Box> ground_truth;
};

struct ApResult {
  double ap = 0.0;
  std::vector<PRPoint> curve;  // one point per distinct score, recall non-decreasing
};

// Area under the precision/recall curve over a set of images. Points are
// taken at every distinct detection score; precision is replaced by its
// running maximum from the right, and the curve, anchored at recall 0, is
// integrated with the trapezoid rule. Throws UndefinedMetricError when there
// is no ground truth.
ApResult average_precision(std::span<const ImageResult> images, double iou_threshold = 0.5);

// Summed match counts over images using detections with score >= threshold.
MatchOutcome match_at_threshold(std::span<const ImageResult> images, double score_threshold,
                                double iou_threshold = 0.5);

// Fraction of exact matches; throws ConfigError on empty or unequal input.
double classification_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

struct GroupedImage {
  std::string group;
  ImageResult result;
};

struct GroupMetrics {
  std::string group;
  std::optional<double> ap;  // empty when the group has no ground truth
  double precision = 0.0;
  double recall = 0.0;
  std::size_t ground_truth = 0;
  std::size_t detections = 0;
};

struct EvalReport {
  std::vector<GroupMetrics> groups;  // first-appearance order
  GroupMetrics pooled;               // groups with ground truth only
  std::vector<PRPoint> pooled_curve;
  std::vector<std::string> undefined_groups;
  std::optional<double> classification_accuracy;
};

// Per-group and pooled AP plus precision/recall at `score_threshold`.
EvalReport per_group_report(std::span<const GroupedImage> images, double score_threshold = 0.5,
                            double iou_threshold = 0.5);

// `group,ap,precision,recall` including a final `pooled` row.
void write_report_csv(const EvalReport& report, std::ostream& out);
// Two-row table: group names, then AP percentages.
void write_report_table(const EvalReport& report, std::ostream& out);
// `threshold,recall,precision`
void write_pr_curve_csv(std::span<const PRPoint> curve, std::ostream& out);
// Single polyline on unit axes.
void write_pr_curve_svg(std::span<const PRPoint> curve, std::ostream& out);

}  // namespace npdet
