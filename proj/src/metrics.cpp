#include "fine_imitate/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace fi::detector {

double average_precision(const std::vector<double>& recall, const std::vector<double>& precision) {
  if (recall.size() != precision.size()) throw std::invalid_argument("average_precision: length mismatch");
  for (std::size_t i = 1; i < recall.size(); ++i) {
    if (recall[i] < recall[i - 1]) throw std::invalid_argument("average_precision: recall must be non-decreasing");
  }
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i-- > 0;) mpre[i] = std::max(mpre[i], mpre[i + 1]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  return ap;
}

ApReport evaluate_ap(const std::vector<std::vector<Detection>>& detections,
                     const std::vector<std::vector<geometry::Box>>& gts, std::size_t num_classes,
                     double iou_thresh) {
  if (detections.size() != gts.size()) {
    throw std::invalid_argument("evaluate_ap: " + std::to_string(detections.size()) + " detection lists for " +
                                std::to_string(gts.size()) + " images");
  }
  ApReport report;
  report.per_class_ap.resize(num_classes);
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t cls = 0; cls < num_classes; ++cls) {
    const int c = static_cast<int>(cls);
    std::size_t n_gt = 0;
    std::vector<std::vector<bool>> taken(gts.size());
    for (std::size_t img = 0; img < gts.size(); ++img) {
      taken[img].assign(gts[img].size(), false);
      n_gt += static_cast<std::size_t>(
          std::count_if(gts[img].begin(), gts[img].end(), [c](const auto& b) { return b.class_id == c; }));
    }
    if (n_gt == 0) continue;

    struct Ranked {
      double score;
      std::size_t image;
      const Detection* det;
    };
    std::vector<Ranked> ranked;
    for (std::size_t img = 0; img < detections.size(); ++img) {
      for (const auto& d : detections[img]) {
        if (d.class_id == c) ranked.push_back({d.score, img, &d});
      }
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& l, const Ranked& r) { return l.score > r.score; });

    std::vector<double> recall, precision;
    std::size_t tp = 0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const auto& image_gts = gts[ranked[r].image];
      double best = -1.0;
      std::size_t best_idx = 0;
      for (std::size_t g = 0; g < image_gts.size(); ++g) {
        if (image_gts[g].class_id != c) continue;
        const double v = geometry::iou(ranked[r].det->box, image_gts[g]);
        if (v > best) {
          best = v;
          best_idx = g;
        }
      }
      if (best >= iou_thresh && !taken[ranked[r].image][best_idx]) {
        taken[ranked[r].image][best_idx] = true;
        ++tp;
      }
      recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
      precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    }
    const double ap = average_precision(recall, precision);
    report.per_class_ap[cls] = ap;
    sum += ap;
    ++counted;
  }
  report.map = counted ? sum / static_cast<double>(counted) : 0.0;
  return report;
}

}  // namespace fi::detector
