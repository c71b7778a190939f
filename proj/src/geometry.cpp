#include "fine_imitate/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fi::geometry {

bool is_valid(const Box& b) {
  return std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) && std::isfinite(b.y2) &&
         b.x1 < b.x2 && b.y1 < b.y2;
}

void validate(const Box& b) {
  if (!is_valid(b)) {
    throw GeometryError("degenerate box (" + std::to_string(b.x1) + ", " + std::to_string(b.y1) + ", " +
                        std::to_string(b.x2) + ", " + std::to_string(b.y2) + ")");
  }
}

double iou(const Box& a, const Box& b) {
  validate(a);
  validate(b);
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

AnchorGrid build_anchor_grid(std::size_t feat_w, std::size_t feat_h, std::size_t stride,
                             std::vector<double> scales, std::vector<double> ratios) {
  if (feat_w < 1 || feat_h < 1 || stride < 1) throw GeometryError("anchor grid extents and stride must be >= 1");
  if (scales.empty() || ratios.empty()) throw GeometryError("anchor scales and ratios must be non-empty");
  for (double v : scales) {
    if (!(v > 0.0) || !std::isfinite(v)) throw GeometryError("anchor scales must be positive");
  }
  for (double v : ratios) {
    if (!(v > 0.0) || !std::isfinite(v)) throw GeometryError("anchor ratios must be positive");
  }

  AnchorGrid grid{feat_w, feat_h, stride, std::move(scales), std::move(ratios), {}};
  grid.anchors.reserve(feat_w * feat_h * grid.num_anchors_per_cell());
  const double s = static_cast<double>(stride);
  for (std::size_t i = 0; i < feat_w; ++i) {
    for (std::size_t j = 0; j < feat_h; ++j) {
      const double cx = (static_cast<double>(i) + 0.5) * s;
      const double cy = (static_cast<double>(j) + 0.5) * s;
      for (double scale : grid.scales) {
        for (double ratio : grid.ratios) {
          const double half_w = 0.5 * scale / std::sqrt(ratio);
          const double half_h = 0.5 * scale * std::sqrt(ratio);
          grid.anchors.push_back({cx - half_w, cy - half_h, cx + half_w, cy + half_h, -1});
        }
      }
    }
  }
  return grid;
}

double IouMap::max() const {
  if (values.empty()) return 0.0;
  return *std::max_element(values.values().begin(), values.values().end());
}

IouMap iou_map(const Box& gt, const AnchorGrid& grid, std::size_t gt_index) {
  validate(gt);
  IouMap map{numerics::Tensor({grid.feat_w, grid.feat_h, grid.num_anchors_per_cell()}), gt_index};
  for (std::size_t n = 0; n < grid.anchors.size(); ++n) map.values[n] = iou(gt, grid.anchors[n]);
  return map;
}

}  // namespace fi::geometry
