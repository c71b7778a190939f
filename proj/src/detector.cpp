#include "fine_imitate/detector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace fi::detector {

using numerics::ShapeError;

std::size_t DetectorConfig::stage_stride(std::size_t stage) const {
  const auto downsamples = static_cast<std::size_t>(std::countr_zero(total_stride));
  return stage < downsamples ? 2 : 1;
}

void validate(const DetectorConfig& cfg) {
  if (cfg.backbone_widths.empty()) throw std::invalid_argument("detector: backbone_widths is empty");
  for (auto w : cfg.backbone_widths) {
    if (w == 0) throw std::invalid_argument("detector: backbone widths must be positive");
  }
  if (cfg.total_stride == 0 || !std::has_single_bit(cfg.total_stride)) {
    throw std::invalid_argument("detector: total_stride must be a power of two");
  }
  if (static_cast<std::size_t>(std::countr_zero(cfg.total_stride)) > cfg.backbone_widths.size()) {
    throw std::invalid_argument("detector: not enough backbone stages for total_stride " +
                                std::to_string(cfg.total_stride));
  }
  if (cfg.num_classes == 0 || cfg.input_channels == 0) {
    throw std::invalid_argument("detector: num_classes and input_channels must be positive");
  }
  if (cfg.anchor_scales.empty() || cfg.anchor_ratios.empty()) {
    throw std::invalid_argument("detector: anchor scales and ratios must be non-empty");
  }
  if (!(cfg.pos_iou > cfg.neg_iou) || cfg.neg_iou < 0.0 || cfg.pos_iou > 1.0) {
    throw std::invalid_argument("detector: need 0 <= neg_iou < pos_iou <= 1");
  }
  if (cfg.sample_cap == 0 || !(cfg.positive_fraction > 0.0 && cfg.positive_fraction <= 1.0)) {
    throw std::invalid_argument("detector: sample_cap must be positive and positive_fraction in (0, 1]");
  }
  if (!(cfg.smooth_l1_beta > 0.0)) throw std::invalid_argument("detector: smooth_l1_beta must be > 0");
}

DetectorParams DetectorParams::zeros_like() const {
  DetectorParams z;
  for (const auto& l : backbone) z.backbone.push_back(l.zeros_like());
  z.cls_head = cls_head.zeros_like();
  z.reg_head = reg_head.zeros_like();
  return z;
}

std::vector<Tensor*> DetectorParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& l : backbone) {
    out.push_back(&l.kernels);
    out.push_back(&l.biases);
  }
  out.insert(out.end(), {&cls_head.kernels, &cls_head.biases, &reg_head.kernels, &reg_head.biases});
  return out;
}

std::vector<const Tensor*> DetectorParams::tensors() const {
  auto mut = const_cast<DetectorParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> DetectorParams::tensor_names() const {
  std::vector<std::string> names;
  for (std::size_t n = 0; n < backbone.size(); ++n) {
    names.push_back("backbone." + std::to_string(n) + ".weight");
    names.push_back("backbone." + std::to_string(n) + ".bias");
  }
  names.insert(names.end(), {"head.cls.weight", "head.cls.bias", "head.reg.weight", "head.reg.bias"});
  return names;
}

DetectorParams init_detector_params(const DetectorConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  DetectorParams p;
  std::size_t in = cfg.input_channels;
  std::uint64_t layer_seed = seed;
  auto next_seed = [&] {
    // splitmix64 step so each layer draws from an unrelated stream.
    layer_seed += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = layer_seed;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  for (auto w : cfg.backbone_widths) {
    p.backbone.push_back(numerics::make_conv_params(3, in, w, next_seed()));
    in = w;
  }
  p.cls_head = numerics::make_conv_params(1, in, cfg.cls_channels(), next_seed());
  p.reg_head = numerics::make_conv_params(1, in, cfg.reg_channels(), next_seed());
  // Small head init keeps the initial softmax near uniform and deltas near 0.
  for (double& v : p.cls_head.kernels.values()) v *= 0.1;
  for (double& v : p.reg_head.kernels.values()) v *= 0.1;
  return p;
}

numerics::Checkpoint to_checkpoint(const DetectorParams& params) {
  numerics::Checkpoint ckpt;
  const auto names = params.tensor_names();
  const auto tensors = params.tensors();
  for (std::size_t n = 0; n < names.size(); ++n) ckpt.push_back({names[n], *tensors[n]});
  return ckpt;
}

DetectorParams from_checkpoint(const numerics::Checkpoint& ckpt, const DetectorConfig& cfg) {
  DetectorParams p = init_detector_params(cfg, 0);
  const auto names = p.tensor_names();
  auto tensors = p.tensors();
  for (std::size_t n = 0; n < names.size(); ++n) {
    const Tensor& stored = numerics::find_tensor(ckpt, names[n]);
    numerics::require_same_shape(*tensors[n], stored, "checkpoint tensor " + names[n]);
    *tensors[n] = stored;
  }
  return p;
}

AnchorGrid make_anchor_grid(const DetectorConfig& cfg, std::size_t image_w, std::size_t image_h) {
  if (image_w % cfg.total_stride || image_h % cfg.total_stride) {
    throw ShapeError("image " + std::to_string(image_w) + "x" + std::to_string(image_h) +
                     " is not divisible by stride " + std::to_string(cfg.total_stride));
  }
  return geometry::build_anchor_grid(image_w / cfg.total_stride, image_h / cfg.total_stride, cfg.total_stride,
                                     cfg.anchor_scales, cfg.anchor_ratios);
}

ForwardResult forward(const Tensor& image, const DetectorConfig& cfg, const DetectorParams& params) {
  if (image.rank() != 3 || image.dim(2) != cfg.input_channels || image.dim(0) % cfg.total_stride ||
      image.dim(1) % cfg.total_stride) {
    throw ShapeError("detector input " + image.shape_string() + " must be {W, H, " +
                     std::to_string(cfg.input_channels) + "} with W, H divisible by " +
                     std::to_string(cfg.total_stride));
  }
  if (params.backbone.size() != cfg.backbone_widths.size()) {
    throw ShapeError("detector params have " + std::to_string(params.backbone.size()) + " stages, config has " +
                     std::to_string(cfg.backbone_widths.size()));
  }
  ForwardResult r;
  const Tensor* x = &image;
  for (std::size_t s = 0; s < params.backbone.size(); ++s) {
    r.pre_activations.push_back(numerics::conv_forward(*x, params.backbone[s], cfg.stage_stride(s)));
    r.activations.push_back(numerics::relu_forward(r.pre_activations.back()));
    x = &r.activations.back();
  }
  r.cls_logits = numerics::conv_forward(*x, params.cls_head, 1);
  r.reg_preds = numerics::conv_forward(*x, params.reg_head, 1);
  return r;
}

DetectorParams backward(const Tensor& image, const DetectorConfig& cfg, const DetectorParams& params,
                        const ForwardResult& fwd, const Tensor& grad_cls, const Tensor& grad_reg,
                        const Tensor* grad_guided_extra) {
  DetectorParams grads;
  grads.backbone.resize(params.backbone.size());
  const Tensor& guided = fwd.guided_feature();
  auto cls = numerics::conv_backward(guided, params.cls_head, 1, grad_cls);
  auto reg = numerics::conv_backward(guided, params.reg_head, 1, grad_reg);
  grads.cls_head = std::move(cls.grad_params);
  grads.reg_head = std::move(reg.grad_params);

  Tensor upstream = std::move(cls.grad_input);
  for (std::size_t n = 0; n < upstream.size(); ++n) upstream[n] += reg.grad_input[n];
  if (grad_guided_extra) {
    numerics::require_same_shape(upstream, *grad_guided_extra, "guided feature gradient");
    for (std::size_t n = 0; n < upstream.size(); ++n) upstream[n] += (*grad_guided_extra)[n];
  }
  for (std::size_t s = params.backbone.size(); s-- > 0;) {
    const Tensor grad_pre = numerics::relu_backward(fwd.pre_activations[s], upstream);
    const Tensor& in = s == 0 ? image : fwd.activations[s - 1];
    auto g = numerics::conv_backward(in, params.backbone[s], cfg.stage_stride(s), grad_pre);
    grads.backbone[s] = std::move(g.grad_params);
    upstream = std::move(g.grad_input);
  }
  return grads;
}

// --- target assignment ------------------------------------------------------

std::size_t TargetAssignment::num_positive() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l > 0; }));
}

std::size_t TargetAssignment::num_negative() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kBackground));
}

Deltas encode(const Box& gt, const Box& anchor) {
  return {(gt.center_x() - anchor.center_x()) / anchor.width(), (gt.center_y() - anchor.center_y()) / anchor.height(),
          std::log(gt.width() / anchor.width()), std::log(gt.height() / anchor.height())};
}

Box decode(const Deltas& d, const Box& anchor) {
  // Clamp the log-size deltas so a wild prediction cannot overflow exp().
  constexpr double kMaxLogScale = 4.135166556742356;  // log(1000 / 16)
  const double cx = anchor.center_x() + d[0] * anchor.width();
  const double cy = anchor.center_y() + d[1] * anchor.height();
  const double w = anchor.width() * std::exp(std::min(d[2], kMaxLogScale));
  const double h = anchor.height() * std::exp(std::min(d[3], kMaxLogScale));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h, -1};
}

TargetAssignment assign_targets(const AnchorGrid& grid, const std::vector<Box>& gts, double pos_iou,
                                double neg_iou) {
  if (!(pos_iou > neg_iou) || neg_iou < 0.0 || pos_iou > 1.0) {
    throw std::invalid_argument("assign_targets: need 0 <= neg_iou < pos_iou <= 1");
  }
  const std::size_t n = grid.anchors.size();
  TargetAssignment a{grid.feat_w, grid.feat_h, grid.num_anchors_per_cell(), std::vector<int>(n, kBackground),
                     std::vector<Deltas>(n, Deltas{0, 0, 0, 0})};
  if (gts.empty()) return a;

  std::vector<double> best_iou(n, 0.0);
  std::vector<std::size_t> best_gt(n, 0);
  std::vector<double> gt_best(gts.size(), 0.0);
  std::vector<std::size_t> gt_best_anchor(gts.size(), 0);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    for (std::size_t k = 0; k < n; ++k) {
      const double v = geometry::iou(gts[g], grid.anchors[k]);
      if (v > best_iou[k]) {
        best_iou[k] = v;
        best_gt[k] = g;
      }
      if (v > gt_best[g]) {
        gt_best[g] = v;
        gt_best_anchor[g] = k;
      }
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (best_iou[k] > pos_iou) {
      a.labels[k] = gts[best_gt[k]].class_id + 1;
    } else if (best_iou[k] < neg_iou) {
      a.labels[k] = kBackground;
    } else {
      a.labels[k] = kIgnore;
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gt_best[g] <= 0.0) continue;
    const std::size_t k = gt_best_anchor[g];
    a.labels[k] = gts[g].class_id + 1;
    best_gt[k] = g;
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (a.labels[k] > 0) a.reg_targets[k] = encode(gts[best_gt[k]], grid.anchors[k]);
  }
  return a;
}

TargetAssignment subsample(const TargetAssignment& assignment, std::size_t cap, double positive_fraction,
                           std::mt19937_64& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t k = 0; k < assignment.labels.size(); ++k) {
    if (assignment.labels[k] > 0) pos.push_back(k);
    if (assignment.labels[k] == kBackground) neg.push_back(k);
  }
  const auto max_pos = static_cast<std::size_t>(std::floor(static_cast<double>(cap) * positive_fraction));
  // Partial Fisher-Yates with explicit uniform draws; std::shuffle's algorithm
  // is implementation-defined.
  auto pick = [&rng](std::vector<std::size_t>& v, std::size_t count) {
    count = std::min(count, v.size());
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (v.size() - i));
      std::swap(v[i], v[j]);
    }
    v.resize(count);
  };
  pick(pos, max_pos);
  pick(neg, cap - pos.size());

  TargetAssignment out = assignment;
  std::fill(out.labels.begin(), out.labels.end(), kIgnore);
  for (auto k : pos) out.labels[k] = assignment.labels[k];
  for (auto k : neg) out.labels[k] = kBackground;
  return out;
}

DetectionLoss detection_loss(const Tensor& cls_logits, const Tensor& reg_preds, const TargetAssignment& assignment,
                             std::size_t num_classes, double smooth_l1_beta) {
  const std::size_t w = assignment.feat_w, h = assignment.feat_h, k = assignment.anchors_per_cell;
  const std::size_t nc1 = num_classes + 1;
  const std::vector<std::size_t> cls_dims{w, h, k * nc1}, reg_dims{w, h, k * 4};
  if (cls_logits.dims() != cls_dims || reg_preds.dims() != reg_dims) {
    throw ShapeError("detection_loss: logits " + cls_logits.shape_string() + " / deltas " +
                     reg_preds.shape_string() + " do not match assignment " + numerics::shape_string(cls_dims) +
                     " / " + numerics::shape_string(reg_dims));
  }
  DetectionLoss out{0.0, 0.0, 0.0, 0, Tensor(cls_dims), Tensor(reg_dims)};
  for (int l : assignment.labels) {
    if (l != kIgnore) ++out.sampled;
  }
  if (out.sampled == 0) return out;
  const double norm = 1.0 / static_cast<double>(out.sampled);

  std::vector<double> prob(nc1);
  for (std::size_t a = 0; a < assignment.labels.size(); ++a) {
    const int label = assignment.labels[a];
    if (label == kIgnore) continue;
    if (label < 0 || static_cast<std::size_t>(label) >= nc1) {
      throw std::invalid_argument("detection_loss: label " + std::to_string(label) + " out of range");
    }
    const double* z = cls_logits.data() + a * nc1;
    const double zmax = *std::max_element(z, z + nc1);
    double denom = 0.0;
    for (std::size_t c = 0; c < nc1; ++c) {
      prob[c] = std::exp(z[c] - zmax);
      denom += prob[c];
    }
    for (std::size_t c = 0; c < nc1; ++c) prob[c] /= denom;
    out.cls_loss += -(z[label] - zmax - std::log(denom));
    double* g = out.grad_cls.data() + a * nc1;
    for (std::size_t c = 0; c < nc1; ++c) g[c] = (prob[c] - (static_cast<int>(c) == label ? 1.0 : 0.0)) * norm;

    if (label > 0) {
      const double* p = reg_preds.data() + a * 4;
      double* gr = out.grad_reg.data() + a * 4;
      for (std::size_t d = 0; d < 4; ++d) {
        const double diff = p[d] - assignment.reg_targets[a][d];
        const double ad = std::abs(diff);
        if (ad < smooth_l1_beta) {
          out.reg_loss += 0.5 * diff * diff / smooth_l1_beta;
          gr[d] = diff / smooth_l1_beta * norm;
        } else {
          out.reg_loss += ad - 0.5 * smooth_l1_beta;
          gr[d] = (diff > 0 ? 1.0 : -1.0) * norm;
        }
      }
    }
  }
  out.cls_loss *= norm;
  out.reg_loss *= norm;
  out.loss = out.cls_loss + out.reg_loss;
  return out;
}

// --- inference --------------------------------------------------------------

std::vector<std::size_t> greedy_nms(const std::vector<Box>& sorted_boxes, double iou_threshold) {
  std::vector<std::size_t> kept;
  std::vector<bool> suppressed(sorted_boxes.size(), false);
  for (std::size_t i = 0; i < sorted_boxes.size(); ++i) {
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (std::size_t j = i + 1; j < sorted_boxes.size(); ++j) {
      if (!suppressed[j] && geometry::iou(sorted_boxes[i], sorted_boxes[j]) > iou_threshold) suppressed[j] = true;
    }
  }
  return kept;
}

std::vector<Detection> decode_and_nms(const Tensor& cls_logits, const Tensor& reg_preds, const AnchorGrid& grid,
                                      std::size_t num_classes, std::size_t image_w, std::size_t image_h,
                                      const DecodeOptions& options) {
  if (!(options.score_thresh >= 0.0 && options.score_thresh <= 1.0) ||
      !(options.nms_iou >= 0.0 && options.nms_iou <= 1.0)) {
    throw std::invalid_argument("decode_and_nms: thresholds must lie in [0, 1]");
  }
  const std::size_t nc1 = num_classes + 1;
  const std::size_t n = grid.anchors.size();
  if (cls_logits.size() != n * nc1 || reg_preds.size() != n * 4) {
    throw ShapeError("decode_and_nms: logits " + cls_logits.shape_string() + " / deltas " +
                     reg_preds.shape_string() + " do not match " + std::to_string(n) + " anchors");
  }
  const double iw = static_cast<double>(image_w), ih = static_cast<double>(image_h);
  std::vector<std::vector<Detection>> per_class(num_classes);
  std::vector<double> prob(nc1);
  for (std::size_t a = 0; a < n; ++a) {
    const double* z = cls_logits.data() + a * nc1;
    const double zmax = *std::max_element(z, z + nc1);
    double denom = 0.0;
    for (std::size_t c = 0; c < nc1; ++c) denom += (prob[c] = std::exp(z[c] - zmax));
    const double* d = reg_preds.data() + a * 4;
    std::optional<Box> box;
    for (std::size_t c = 1; c < nc1; ++c) {
      const double score = prob[c] / denom;
      if (score < options.score_thresh) continue;
      if (!box) {
        Box b = decode({d[0], d[1], d[2], d[3]}, grid.anchors[a]);
        b.x1 = std::clamp(b.x1, 0.0, iw);
        b.x2 = std::clamp(b.x2, 0.0, iw);
        b.y1 = std::clamp(b.y1, 0.0, ih);
        b.y2 = std::clamp(b.y2, 0.0, ih);
        box = b;
      }
      if (!geometry::is_valid(*box)) break;
      Box b = *box;
      b.class_id = static_cast<int>(c - 1);
      per_class[c - 1].push_back({b, static_cast<int>(c - 1), score});
    }
  }

  std::vector<Detection> out;
  for (auto& cands : per_class) {
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Detection& l, const Detection& r) { return l.score > r.score; });
    std::vector<Box> boxes;
    boxes.reserve(cands.size());
    for (const auto& c : cands) boxes.push_back(c.box);
    std::size_t emitted = 0;
    for (auto idx : greedy_nms(boxes, options.nms_iou)) {
      if (emitted++ == options.max_per_class) break;
      out.push_back(cands[idx]);
    }
  }
  return out;
}

std::string detections_to_jsonl(const std::string& image_id, const std::vector<Detection>& dets) {
  std::string out;
  for (const auto& d : dets) {
    const nlohmann::json line{{"image_id", image_id}, {"class_id", d.class_id}, {"score", d.score},
                              {"x1", d.box.x1},       {"y1", d.box.y1},       {"x2", d.box.x2},
                              {"y2", d.box.y2}};
    out += line.dump() + "\n";
  }
  return out;
}

}  // namespace fi::detector
