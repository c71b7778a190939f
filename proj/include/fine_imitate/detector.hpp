#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fine_imitate/checkpoint.hpp"
#include "fine_imitate/geometry.hpp"
#include "fine_imitate/layers.hpp"

namespace fi::detector {

using geometry::AnchorGrid;
using geometry::Box;
using numerics::LayerParams;
using numerics::Tensor;

/// Plain-convolution single-stage detector: a stack of 3x3 conv + ReLU stages
/// (the first log2(total_stride) of them stride 2) feeding two 1x1 heads.
struct DetectorConfig {
  std::vector<std::size_t> backbone_widths{16, 32, 64, 64};
  std::size_t total_stride = 8;
  std::size_t input_channels = 1;
  std::size_t num_classes = 3;
  std::vector<double> anchor_scales{16.0, 28.0};
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};
  double pos_iou = 0.7;
  double neg_iou = 0.3;
  std::size_t sample_cap = 64;     // sampled anchors per image
  double positive_fraction = 0.25;  // 1:3 pos:neg
  double smooth_l1_beta = 1.0;

  std::size_t anchors_per_cell() const { return anchor_scales.size() * anchor_ratios.size(); }
  std::size_t cls_channels() const { return anchors_per_cell() * (num_classes + 1); }
  std::size_t reg_channels() const { return anchors_per_cell() * 4; }
  std::size_t guided_channels() const { return backbone_widths.back(); }
  std::size_t stage_stride(std::size_t stage) const;

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

void validate(const DetectorConfig& cfg);

struct DetectorParams {
  std::vector<LayerParams> backbone;
  LayerParams cls_head;
  LayerParams reg_head;

  DetectorParams zeros_like() const;
  /// Flat, ordered views used by the optimiser and checkpoints.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::vector<std::string> tensor_names() const;

  friend bool operator==(const DetectorParams&, const DetectorParams&) = default;
};

DetectorParams init_detector_params(const DetectorConfig& cfg, std::uint64_t seed);

/// Checkpoint names: "backbone.<n>.weight|bias", "head.cls.weight|bias",
/// "head.reg.weight|bias". Extra entries (e.g. "adapt.*") are appended by callers.
numerics::Checkpoint to_checkpoint(const DetectorParams& params);
DetectorParams from_checkpoint(const numerics::Checkpoint& ckpt, const DetectorConfig& cfg);

AnchorGrid make_anchor_grid(const DetectorConfig& cfg, std::size_t image_w, std::size_t image_h);

struct ForwardResult {
  std::vector<Tensor> pre_activations;  // per backbone stage, before ReLU
  std::vector<Tensor> activations;      // per backbone stage, after ReLU
  Tensor cls_logits;                    // {W, H, K * (num_classes + 1)}, channel k * (nc + 1) + class
  Tensor reg_preds;                     // {W, H, K * 4}, channel k * 4 + (tx, ty, tw, th)

  /// The feature the heads read and imitation applies to.
  const Tensor& guided_feature() const { return activations.back(); }
};

ForwardResult forward(const Tensor& image, const DetectorConfig& cfg, const DetectorParams& params);

/// Backpropagates head gradients (and an optional extra gradient arriving at
/// the guided feature, e.g. from the imitation loss) to all parameters.
DetectorParams backward(const Tensor& image, const DetectorConfig& cfg, const DetectorParams& params,
                        const ForwardResult& fwd, const Tensor& grad_cls, const Tensor& grad_reg,
                        const Tensor* grad_guided_extra = nullptr);

// --- target assignment ------------------------------------------------------

inline constexpr int kIgnore = -1;
inline constexpr int kBackground = 0;

struct TargetAssignment {
  std::size_t feat_w = 0;
  std::size_t feat_h = 0;
  std::size_t anchors_per_cell = 0;
  std::vector<int> labels;  // kIgnore, kBackground, or class_id + 1
  std::vector<std::array<double, 4>> reg_targets;  // meaningful only where labels > 0

  std::size_t num_positive() const;
  std::size_t num_negative() const;
};

using Deltas = std::array<double, 4>;

/// (tx, ty, tw, th) = ((gx - ax) / aw, (gy - ay) / ah, log(gw / aw), log(gh / ah)).
Deltas encode(const Box& gt, const Box& anchor);
Box decode(const Deltas& d, const Box& anchor);

/// Positive: IOU > pos_iou with some gt, or the best anchor of some gt.
/// Negative: max IOU < neg_iou. Everything else is ignored.
TargetAssignment assign_targets(const AnchorGrid& grid, const std::vector<Box>& gts, double pos_iou,
                                double neg_iou);

/// Keeps at most cap * positive_fraction positives and fills the rest of the
/// cap with negatives, chosen uniformly at random; unselected anchors become
/// ignore.
TargetAssignment subsample(const TargetAssignment& assignment, std::size_t cap, double positive_fraction,
                           std::mt19937_64& rng);

struct DetectionLoss {
  double loss = 0.0;
  double cls_loss = 0.0;
  double reg_loss = 0.0;
  std::size_t sampled = 0;
  Tensor grad_cls;
  Tensor grad_reg;
};

/// Softmax cross-entropy on every non-ignored anchor plus smooth-L1 on the
/// positives' deltas, both divided by the number of non-ignored anchors.
DetectionLoss detection_loss(const Tensor& cls_logits, const Tensor& reg_preds, const TargetAssignment& assignment,
                             std::size_t num_classes, double smooth_l1_beta = 1.0);

// --- inference --------------------------------------------------------------

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;
};

/// Greedy NMS over boxes already sorted by descending score. Returns the kept
/// positions.
std::vector<std::size_t> greedy_nms(const std::vector<Box>& sorted_boxes, double iou_threshold);

struct DecodeOptions {
  double score_thresh = 0.05;
  double nms_iou = 0.5;
  std::size_t max_per_class = 100;
};

/// Softmax scores, delta decoding, clipping to the image, thresholding and
/// per-class NMS. Output is grouped by class with descending scores.
std::vector<Detection> decode_and_nms(const Tensor& cls_logits, const Tensor& reg_preds, const AnchorGrid& grid,
                                      std::size_t num_classes, std::size_t image_w, std::size_t image_h,
                                      const DecodeOptions& options = {});

/// Detections export: one JSON object per line with keys image_id, class_id,
/// score, x1, y1, x2, y2.
std::string detections_to_jsonl(const std::string& image_id, const std::vector<Detection>& dets);

}  // namespace fi::detector
