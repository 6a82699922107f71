#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

namespace npdet {

struct BoxSize {
  double height = 0.0;
  double width = 0.0;
  friend bool operator==(const BoxSize&, const BoxSize&) = default;
};

struct PyramidConfig {
  std::vector<BoxSize> base_sizes;
  std::size_t num_levels = 1;
  double scale = 2.0;
};

// Six minimum plate sizes (h x w) 10x10 .. 10x50 and 30x14, 15 levels, scale
// 1.3: 90 anchors.
PyramidConfig default_pyramid();

struct AnchorSet {
  std::vector<BoxSize> anchors;  // base index major, level minor
  PyramidConfig provenance;

  std::size_t size() const { return anchors.size(); }
  const BoxSize& operator[](std::size_t i) const { return anchors[i]; }
};

// Anchor (i, k) = base_sizes[i] * scale^k. Throws ConfigError for an empty
// base list, a non-positive base, zero levels, or scale <= 1.
AnchorSet generate_pyramid(const PyramidConfig& config);

// IOU of two sizes placed on a common center: min-overlap over union.
double size_iou(const BoxSize& a, const BoxSize& b);

struct AnchorMatch {
  std::size_t index = 0;
  double iou = 0.0;
};

// Highest size IOU; ties go to the lowest index. Throws on an empty set.
AnchorMatch best_anchor(const BoxSize& box, const AnchorSet& anchors);

struct CoverageAssignment {
  BoxSize box;
  AnchorMatch match;
};

struct CoverageReport {
  double min_best_iou = 0.0;
  double mean_best_iou = 0.0;
  std::vector<std::size_t> histogram;  // 10 equal bins over [0, 1]
  std::vector<CoverageAssignment> assignments;
};

// Throws ConfigError on an empty box list.
CoverageReport coverage_stats(std::span<const BoxSize> boxes, const AnchorSet& anchors);

// `box_h,box_w,best_anchor_index,best_iou` rows, then a `min,mean` summary.
void write_coverage_csv(const CoverageReport& report, std::ostream& out);
// `index,height,width`
void write_anchor_csv(const AnchorSet& anchors, std::ostream& out);

}  // namespace npdet
