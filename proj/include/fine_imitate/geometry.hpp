#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "fine_imitate/tensor.hpp"

namespace fi::geometry {

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Axis-aligned box in image pixels, corner convention (x1 < x2, y1 < y2).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
  int class_id = -1;  // ground-truth / detection class; -1 for anchors

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  friend bool operator==(const Box&, const Box&) = default;
};

bool is_valid(const Box& b);

/// Throws GeometryError for non-finite coordinates or non-positive extent.
void validate(const Box& b);

double iou(const Box& a, const Box& b);

/// K preset anchors tiled over a W x H lattice.
///
/// Anchor (i, j, k) is centred at ((i + 0.5) * stride, (j + 0.5) * stride).
/// k enumerates scales (outer) then ratios (inner); for scale s and ratio r
/// the anchor is s / sqrt(r) wide and s * sqrt(r) tall. Anchors are not clipped.
struct AnchorGrid {
  std::size_t feat_w = 0;
  std::size_t feat_h = 0;
  std::size_t stride = 0;
  std::vector<double> scales;
  std::vector<double> ratios;
  std::vector<Box> anchors;  // flat index (i * feat_h + j) * K + k

  std::size_t num_anchors_per_cell() const { return scales.size() * ratios.size(); }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return (i * feat_h + j) * num_anchors_per_cell() + k;
  }
  const Box& at(std::size_t i, std::size_t j, std::size_t k) const { return anchors[index(i, j, k)]; }
};

AnchorGrid build_anchor_grid(std::size_t feat_w, std::size_t feat_h, std::size_t stride,
                             std::vector<double> scales, std::vector<double> ratios);

/// W x H x K overlaps of one ground-truth box against every anchor.
struct IouMap {
  numerics::Tensor values;  // dims {W, H, K}
  std::size_t gt_index = 0;

  double max() const;
};

IouMap iou_map(const Box& gt, const AnchorGrid& grid, std::size_t gt_index = 0);

}  // namespace fi::geometry
