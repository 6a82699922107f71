#include "npdet/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "npdet/error.hpp"

namespace npdet {

MatchOutcome match_detections(std::span<const ScoredBox> detections, std::span<const Box> ground_truth,
                              double iou_threshold) {
  MatchOutcome out;
  out.order.resize(detections.size());
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](std::size_t a, std::size_t b) { return detections[a].score > detections[b].score; });
  std::vector<bool> taken(ground_truth.size(), false);
  for (std::size_t idx : out.order) {
    double best = -1.0;
    std::size_t best_gt = ground_truth.size();
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(detections[idx].box, ground_truth[g]);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    const bool hit = best_gt < ground_truth.size() && best >= iou_threshold;
    if (hit) {
      taken[best_gt] = true;
      ++out.tp;
    } else {
      ++out.fp;
    }
    out.true_positive.push_back(hit);
  }
  out.fn = ground_truth.size() - out.tp;
  return out;
}

double precision(const MatchOutcome& o) {
  const std::size_t denom = o.tp + o.fp;
  return denom == 0 ? 1.0 : static_cast<double>(o.tp) / static_cast<double>(denom);
}

double recall(const MatchOutcome& o) {
  const std::size_t denom = o.tp + o.fn;
  return denom == 0 ? 1.0 : static_cast<double>(o.tp) / static_cast<double>(denom);
}

ApResult average_precision(std::span<const ImageResult> images, double iou_threshold) {
  struct Flagged {
    double score;
    bool tp;
  };
  std::vector<Flagged> flagged;
  std::size_t total_gt = 0;
  for (const ImageResult& img : images) {
    total_gt += img.ground_truth.size();
    const MatchOutcome m = match_detections(img.detections, img.ground_truth, iou_threshold);
    // Re-emit in input order so the global stable sort breaks ties by input order.
    std::vector<bool> tp_by_index(img.detections.size(), false);
    for (std::size_t i = 0; i < m.order.size(); ++i) tp_by_index[m.order[i]] = m.true_positive[i];
    for (std::size_t i = 0; i < img.detections.size(); ++i) flagged.push_back({img.detections[i].score, tp_by_index[i]});
  }
  if (total_gt == 0) throw UndefinedMetricError("AP undefined: no ground-truth boxes");
  std::stable_sort(flagged.begin(), flagged.end(), [](const Flagged& a, const Flagged& b) { return a.score > b.score; });

  ApResult result;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < flagged.size(); ++i) {
    (flagged[i].tp ? tp : fp) += 1;
    const bool last_of_score = i + 1 == flagged.size() || flagged[i + 1].score != flagged[i].score;
    if (!last_of_score) continue;
    result.curve.push_back({static_cast<double>(tp) / static_cast<double>(total_gt),
                            static_cast<double>(tp) / static_cast<double>(tp + fp), flagged[i].score});
  }
  if (result.curve.empty()) return result;

  std::vector<double> envelope(result.curve.size());
  double running = 0.0;
  for (std::size_t i = result.curve.size(); i-- > 0;) {
    running = std::max(running, result.curve[i].precision);
    envelope[i] = running;
  }
  double area = 0.0;
  double prev_recall = 0.0;
  double prev_precision = envelope.front();
  for (std::size_t i = 0; i < result.curve.size(); ++i) {
    area += (result.curve[i].recall - prev_recall) * 0.5 * (envelope[i] + prev_precision);
    prev_recall = result.curve[i].recall;
    prev_precision = envelope[i];
  }
  result.ap = std::clamp(area, 0.0, 1.0);
  return result;
}

MatchOutcome match_at_threshold(std::span<const ImageResult> images, double score_threshold, double iou_threshold) {
  MatchOutcome total;
  for (const ImageResult& img : images) {
    std::vector<ScoredBox> kept;
    for (const ScoredBox& d : img.detections) {
      if (d.score >= score_threshold) kept.push_back(d);
    }
    const MatchOutcome m = match_detections(kept, img.ground_truth, iou_threshold);
    total.tp += m.tp;
    total.fp += m.fp;
    total.fn += m.fn;
  }
  return total;
}

double classification_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  if (predicted.empty()) throw ConfigError("classification accuracy of an empty set");
  if (predicted.size() != truth.size()) throw ConfigError("prediction and label counts differ");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

namespace {

GroupMetrics metrics_for(const std::string& name, std::span<const ImageResult> images, double score_threshold,
                         double iou_threshold, std::vector<PRPoint>* curve) {
  GroupMetrics g;
  g.group = name;
  for (const ImageResult& img : images) {
    g.ground_truth += img.ground_truth.size();
    g.detections += img.detections.size();
  }
  const MatchOutcome at = match_at_threshold(images, score_threshold, iou_threshold);
  g.precision = precision(at);
  g.recall = recall(at);
  if (g.ground_truth > 0) {
    ApResult ap = average_precision(images, iou_threshold);
    g.ap = ap.ap;
    if (curve) *curve = std::move(ap.curve);
  }
  return g;
}

}  // namespace

EvalReport per_group_report(std::span<const GroupedImage> images, double score_threshold, double iou_threshold) {
  std::vector<std::string> names;
  for (const GroupedImage& img : images) {
    if (std::find(names.begin(), names.end(), img.group) == names.end()) names.push_back(img.group);
  }
  EvalReport report;
  std::vector<ImageResult> pooled;
  for (const std::string& name : names) {
    std::vector<ImageResult> members;
    for (const GroupedImage& img : images) {
      if (img.group == name) members.push_back(img.result);
    }
    GroupMetrics g = metrics_for(name, members, score_threshold, iou_threshold, nullptr);
    if (!g.ap) {
      report.undefined_groups.push_back(name);
    } else {
      pooled.insert(pooled.end(), members.begin(), members.end());
    }
    report.groups.push_back(std::move(g));
  }
  if (pooled.empty()) throw UndefinedMetricError("AP undefined: no ground-truth boxes in any group");
  report.pooled = metrics_for("pooled", pooled, score_threshold, iou_threshold, &report.pooled_curve);
  return report;
}

namespace {

std::string fixed(double v, int digits) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.*f", digits, v);
  return buffer;
}

void write_row(const GroupMetrics& g, std::ostream& out) {
  out << g.group << ',' << (g.ap ? fixed(*g.ap, 6) : std::string("undefined")) << ',' << fixed(g.precision, 6) << ','
      << fixed(g.recall, 6) << '\n';
}

}  // namespace

void write_report_csv(const EvalReport& report, std::ostream& out) {
  out << "group,ap,precision,recall\n";
  for (const GroupMetrics& g : report.groups) write_row(g, out);
  write_row(report.pooled, out);
}

void write_report_table(const EvalReport& report, std::ostream& out) {
  out << "Dataset";
  for (const GroupMetrics& g : report.groups) out << '\t' << g.group;
  out << "\tPooled\nAP";
  for (const GroupMetrics& g : report.groups) out << '\t' << (g.ap ? fixed(100.0 * *g.ap, 2) + "%" : "n/a");
  out << '\t' << fixed(100.0 * report.pooled.ap.value_or(0.0), 2) << "%\n";
}

void write_pr_curve_csv(std::span<const PRPoint> curve, std::ostream& out) {
  out << "threshold,recall,precision\n";
  for (const PRPoint& p : curve) {
    out << fixed(p.score_threshold, 6) << ',' << fixed(p.recall, 6) << ',' << fixed(p.precision, 6) << '\n';
  }
}

void write_pr_curve_svg(std::span<const PRPoint> curve, std::ostream& out) {
  constexpr double size = 400.0;
  constexpr double margin = 40.0;
  auto x = [&](double r) { return fixed(margin + r * size, 2); };
  auto y = [&](double p) { return fixed(margin + (1.0 - p) * size, 2); };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\" viewBox=\"0 0 480 480\">\n";
  out << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << size << "\" height=\"" << size
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<text x=\"240\" y=\"470\" text-anchor=\"middle\">recall</text>\n";
  out << "<text x=\"12\" y=\"240\" transform=\"rotate(-90 12 240)\" text-anchor=\"middle\">precision</text>\n";
  out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (i) out << ' ';
    out << x(curve[i].recall) << ',' << y(curve[i].precision);
  }
  out << "\"/>\n</svg>\n";
}

}  // namespace npdet
