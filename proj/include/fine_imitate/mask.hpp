#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fine_imitate/geometry.hpp"

namespace fi::mask {

using geometry::AnchorGrid;
using geometry::Box;

/// Binary W x H mask over feature-map cells. Cell (i, j) is stored at
/// i * H + j, matching the {W, H, C} feature layout.
class ImitationMask {
 public:
  ImitationMask() = default;
  ImitationMask(std::size_t width, std::size_t height, bool fill = false);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t n_positive() const { return n_positive_; }

  bool at(std::size_t i, std::size_t j) const { return cells_[i * height_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool on = true);

  /// Cellwise OR; dimensions must match.
  ImitationMask& operator|=(const ImitationMask& other);
  /// True when every set cell of `other` is also set here.
  bool contains(const ImitationMask& other) const;

  const std::vector<std::uint8_t>& cells() const { return cells_; }

  friend bool operator==(const ImitationMask&, const ImitationMask&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::size_t n_positive_ = 0;
  std::vector<std::uint8_t> cells_;
};

struct MaskConfig {
  double psi = 0.5;
};

void validate(const MaskConfig& cfg);

struct GtTrace {
  std::size_t gt_index = 0;
  double max_iou = 0.0;    // M
  double threshold = 0.0;  // F = psi * M
  std::size_t kept_count = 0;
};

struct MaskTrace {
  std::vector<GtTrace> per_gt;
  std::vector<std::string> warnings;
};

struct MaskEstimate {
  ImitationMask mask;
  MaskTrace trace;
};

/// Adaptive near-object mask. For every gt: compute its IOU map against all
/// anchors, take M = max, keep the cells where any anchor's IOU is strictly
/// greater than psi * M, and OR the result into the mask. psi == 0 selects
/// every cell (even with no gts); otherwise no gts gives an empty mask.
MaskEstimate estimate_mask(const std::vector<Box>& gts, const AnchorGrid& grid, const MaskConfig& cfg);

/// Same filtering with a constant IOU threshold shared by every gt.
ImitationMask estimate_mask_hard(const std::vector<Box>& gts, const AnchorGrid& grid, double f_const);

/// Cells whose image-space footprint [i*s, (i+1)*s) x [j*s, (j+1)*s) overlaps
/// some gt box with positive area.
ImitationMask gt_projection_mask(const std::vector<Box>& gts, std::size_t stride, std::size_t feat_w,
                                 std::size_t feat_h);

/// One image-space rectangle per set cell, clipped to the image.
std::vector<Box> mask_to_overlay(const ImitationMask& mask, std::size_t stride, std::size_t image_w,
                                 std::size_t image_h);

}  // namespace fi::mask
