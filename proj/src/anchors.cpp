#include "npdet/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "npdet/error.hpp"

namespace npdet {

PyramidConfig default_pyramid() {
  return {{{10, 10}, {10, 20}, {10, 30}, {10, 40}, {10, 50}, {30, 14}}, 15, 1.3};
}

AnchorSet generate_pyramid(const PyramidConfig& config) {
  if (config.base_sizes.empty()) throw ConfigError("anchor pyramid needs at least one base size");
  if (config.num_levels < 1) throw ConfigError("anchor pyramid needs at least one level");
  if (!(config.scale > 1.0)) throw ConfigError("anchor pyramid scale must exceed 1");
  AnchorSet set;
  set.provenance = config;
  set.anchors.reserve(config.base_sizes.size() * config.num_levels);
  for (const BoxSize& base : config.base_sizes) {
    if (!(base.height > 0.0 && base.width > 0.0)) throw ConfigError("anchor base sizes must be positive");
    for (std::size_t k = 0; k < config.num_levels; ++k) {
      const double factor = std::pow(config.scale, static_cast<double>(k));
      set.anchors.push_back({base.height * factor, base.width * factor});
    }
  }
  return set;
}

double size_iou(const BoxSize& a, const BoxSize& b) {
  const double area_a = a.height * a.width;
  const double area_b = b.height * b.width;
  if (!(area_a > 0.0) || !(area_b > 0.0)) return 0.0;
  const double inter = std::min(a.height, b.height) * std::min(a.width, b.width);
  return inter / (area_a + area_b - inter);
}

AnchorMatch best_anchor(const BoxSize& box, const AnchorSet& anchors) {
  if (anchors.anchors.empty()) throw ConfigError("best_anchor: empty anchor set");
  AnchorMatch best{0, size_iou(box, anchors[0])};
  for (std::size_t i = 1; i < anchors.size(); ++i) {
    const double v = size_iou(box, anchors[i]);
    if (v > best.iou * (1.0 + 1e-12)) best = {i, v};  // ties keep the lower index
  }
  return best;
}

CoverageReport coverage_stats(std::span<const BoxSize> boxes, const AnchorSet& anchors) {
  if (boxes.empty()) throw ConfigError("coverage_stats: no boxes");
  CoverageReport report;
  report.histogram.assign(10, 0);
  report.min_best_iou = 1.0;
  double total = 0.0;
  for (const BoxSize& box : boxes) {
    const AnchorMatch m = best_anchor(box, anchors);
    report.assignments.push_back({box, m});
    report.min_best_iou = std::min(report.min_best_iou, m.iou);
    total += m.iou;
    const auto bin = std::min<std::size_t>(9, static_cast<std::size_t>(m.iou * 10.0));
    ++report.histogram[bin];
  }
  report.mean_best_iou = std::min(1.0, total / static_cast<double>(boxes.size()));
  // Rounding can push the mean a hair below an all-equal min.
  report.mean_best_iou = std::max(report.mean_best_iou, report.min_best_iou);
  return report;
}

void write_coverage_csv(const CoverageReport& report, std::ostream& out) {
  const auto flags = out.flags();
  const auto precision = out.precision(9);
  out << "box_h,box_w,best_anchor_index,best_iou\n";
  for (const auto& a : report.assignments) {
    out << a.box.height << ',' << a.box.width << ',' << a.match.index << ',' << a.match.iou << '\n';
  }
  out << "min,mean\n" << report.min_best_iou << ',' << report.mean_best_iou << '\n';
  out.flags(flags);
  out.precision(precision);
}

void write_anchor_csv(const AnchorSet& anchors, std::ostream& out) {
  const auto precision = out.precision(12);
  out << "index,height,width\n";
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    out << i << ',' << anchors[i].height << ',' << anchors[i].width << '\n';
  }
  out.precision(precision);
}

}  // namespace npdet
