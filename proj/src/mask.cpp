#include "fine_imitate/mask.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fi::mask {

ImitationMask::ImitationMask(std::size_t width, std::size_t height, bool fill)
    : width_(width), height_(height), n_positive_(fill ? width * height : 0), cells_(width * height, fill ? 1 : 0) {}

void ImitationMask::set(std::size_t i, std::size_t j, bool on) {
  auto& cell = cells_[i * height_ + j];
  if (static_cast<bool>(cell) == on) return;
  cell = on ? 1 : 0;
  if (on) {
    ++n_positive_;
  } else {
    --n_positive_;
  }
}

ImitationMask& ImitationMask::operator|=(const ImitationMask& other) {
  if (other.width_ != width_ || other.height_ != height_) {
    throw std::invalid_argument("mask OR: " + std::to_string(width_) + "x" + std::to_string(height_) + " vs " +
                                std::to_string(other.width_) + "x" + std::to_string(other.height_));
  }
  for (std::size_t n = 0; n < cells_.size(); ++n) {
    if (other.cells_[n] && !cells_[n]) {
      cells_[n] = 1;
      ++n_positive_;
    }
  }
  return *this;
}

bool ImitationMask::contains(const ImitationMask& other) const {
  if (other.width_ != width_ || other.height_ != height_) return false;
  for (std::size_t n = 0; n < cells_.size(); ++n) {
    if (other.cells_[n] && !cells_[n]) return false;
  }
  return true;
}

void validate(const MaskConfig& cfg) {
  if (!(cfg.psi >= 0.0 && cfg.psi <= 1.0)) {
    throw std::invalid_argument("mask: psi must lie in [0, 1], got " + std::to_string(cfg.psi));
  }
}

namespace {

// Marks cells where any of the K anchors overlaps `gt` by more than `threshold`.
std::size_t keep_above(const geometry::IouMap& m, double threshold, ImitationMask& out) {
  const std::size_t w = m.values.dim(0), h = m.values.dim(1), k = m.values.dim(2);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < w; ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      for (std::size_t a = 0; a < k; ++a) {
        if (m.values.at(i, j, a) > threshold) {
          out.set(i, j);
          ++kept;
          break;
        }
      }
    }
  }
  return kept;
}

}  // namespace

MaskEstimate estimate_mask(const std::vector<Box>& gts, const AnchorGrid& grid, const MaskConfig& cfg) {
  validate(cfg);
  MaskEstimate est{ImitationMask(grid.feat_w, grid.feat_h), {}};
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const auto m = geometry::iou_map(gts[g], grid, g);
    GtTrace t{g, m.max(), cfg.psi * m.max(), 0};
    if (cfg.psi == 0.0) {
      t.kept_count = grid.feat_w * grid.feat_h;
    } else {
      if (t.max_iou == 0.0) {
        est.trace.warnings.push_back("gt " + std::to_string(g) + " overlaps no anchor; contributes no cells");
      }
      t.kept_count = keep_above(m, t.threshold, est.mask);
    }
    est.trace.per_gt.push_back(t);
  }
  // Degenerate full-feature case: every location is imitated, with or without gts.
  if (cfg.psi == 0.0) est.mask = ImitationMask(grid.feat_w, grid.feat_h, true);
  return est;
}

ImitationMask estimate_mask_hard(const std::vector<Box>& gts, const AnchorGrid& grid, double f_const) {
  if (!(f_const >= 0.0 && f_const <= 1.0)) {
    throw std::invalid_argument("hard mask: threshold must lie in [0, 1], got " + std::to_string(f_const));
  }
  ImitationMask mask(grid.feat_w, grid.feat_h);
  for (std::size_t g = 0; g < gts.size(); ++g) keep_above(geometry::iou_map(gts[g], grid, g), f_const, mask);
  return mask;
}

ImitationMask gt_projection_mask(const std::vector<Box>& gts, std::size_t stride, std::size_t feat_w,
                                 std::size_t feat_h) {
  if (stride < 1) throw std::invalid_argument("gt projection: stride must be >= 1");
  ImitationMask mask(feat_w, feat_h);
  const double s = static_cast<double>(stride);
  for (const auto& gt : gts) {
    geometry::validate(gt);
    // Scale into feature units; a cell i spans [i, i + 1).
    const double x1 = gt.x1 / s, x2 = gt.x2 / s, y1 = gt.y1 / s, y2 = gt.y2 / s;
    const auto lo_i = static_cast<std::ptrdiff_t>(std::floor(x1));
    const auto hi_i = static_cast<std::ptrdiff_t>(std::ceil(x2)) - 1;
    const auto lo_j = static_cast<std::ptrdiff_t>(std::floor(y1));
    const auto hi_j = static_cast<std::ptrdiff_t>(std::ceil(y2)) - 1;
    for (auto i = std::max<std::ptrdiff_t>(lo_i, 0); i <= std::min<std::ptrdiff_t>(hi_i, feat_w - 1); ++i) {
      for (auto j = std::max<std::ptrdiff_t>(lo_j, 0); j <= std::min<std::ptrdiff_t>(hi_j, feat_h - 1); ++j) {
        mask.set(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      }
    }
  }
  return mask;
}

std::vector<Box> mask_to_overlay(const ImitationMask& mask, std::size_t stride, std::size_t image_w,
                                 std::size_t image_h) {
  std::vector<Box> rects;
  const double s = static_cast<double>(stride);
  const double iw = static_cast<double>(image_w), ih = static_cast<double>(image_h);
  for (std::size_t i = 0; i < mask.width(); ++i) {
    for (std::size_t j = 0; j < mask.height(); ++j) {
      if (!mask.at(i, j)) continue;
      Box r{static_cast<double>(i) * s, static_cast<double>(j) * s, static_cast<double>(i + 1) * s,
            static_cast<double>(j + 1) * s, -1};
      r.x2 = std::min(r.x2, iw);
      r.y2 = std::min(r.y2, ih);
      if (r.x1 < r.x2 && r.y1 < r.y2) rects.push_back(r);
    }
  }
  return rects;
}

}  // namespace fi::mask
