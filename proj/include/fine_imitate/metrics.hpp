#pragma once

#include <optional>
#include <vector>

#include "fine_imitate/detector.hpp"

namespace fi::detector {

struct ApReport {
  std::vector<std::optional<double>> per_class_ap;  // nullopt for classes without gts
  double map = 0.0;                                 // mean over classes that have gts
};

/// Area under the precision envelope (all-points interpolation). `recall` must
/// be non-decreasing; both vectors list one point per ranked detection.
double average_precision(const std::vector<double>& recall, const std::vector<double>& precision);

/// Per-class AP at `iou_thresh`. Detections are ranked by score across images
/// (ties keep image order, then list order). Each detection is a true positive
/// when the same-class gt it overlaps most in its image reaches `iou_thresh`
/// and has not been claimed by a higher-ranked detection; otherwise it is a
/// false positive.
ApReport evaluate_ap(const std::vector<std::vector<Detection>>& detections,
                     const std::vector<std::vector<geometry::Box>>& gts, std::size_t num_classes,
                     double iou_thresh = 0.5);

}  // namespace fi::detector
