#include "fine_imitate/config.hpp"

#include <stdexcept>

namespace fi {

using nlohmann::json;

void reject_unknown_keys(const json& j, const json& allowed, const std::string& section) {
  if (!j.is_object()) throw std::invalid_argument(section + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw std::invalid_argument(section + ": unknown key '" + key + "'");
  }
}

namespace {

json merged(const json& defaults, const json& j, const std::string& section) {
  reject_unknown_keys(j, defaults, section);
  json m = defaults;
  for (const auto& [key, value] : j.items()) m[key] = value;
  return m;
}

}  // namespace

json to_json(const detector::DetectorConfig& c) {
  return {{"backbone_widths", c.backbone_widths},
          {"total_stride", c.total_stride},
          {"input_channels", c.input_channels},
          {"num_classes", c.num_classes},
          {"anchor_scales", c.anchor_scales},
          {"anchor_ratios", c.anchor_ratios},
          {"pos_iou", c.pos_iou},
          {"neg_iou", c.neg_iou},
          {"sample_cap", c.sample_cap},
          {"positive_fraction", c.positive_fraction},
          {"smooth_l1_beta", c.smooth_l1_beta}};
}

detector::DetectorConfig detector_config_from_json(const json& j) {
  detector::DetectorConfig c;
  const json m = merged(to_json(c), j, "detector");
  c.backbone_widths = m["backbone_widths"].get<std::vector<std::size_t>>();
  c.total_stride = m["total_stride"].get<std::size_t>();
  c.input_channels = m["input_channels"].get<std::size_t>();
  c.num_classes = m["num_classes"].get<std::size_t>();
  c.anchor_scales = m["anchor_scales"].get<std::vector<double>>();
  c.anchor_ratios = m["anchor_ratios"].get<std::vector<double>>();
  c.pos_iou = m["pos_iou"].get<double>();
  c.neg_iou = m["neg_iou"].get<double>();
  c.sample_cap = m["sample_cap"].get<std::size_t>();
  c.positive_fraction = m["positive_fraction"].get<double>();
  c.smooth_l1_beta = m["smooth_l1_beta"].get<double>();
  detector::validate(c);
  return c;
}

json to_json(const imitation::DistillConfig& c) {
  return {{"lambda", c.lambda}, {"psi", c.psi}, {"mask_mode", imitation::to_string(c.mask_mode)},
          {"adapt_init", imitation::to_string(c.adapt_init)}};
}

imitation::DistillConfig distill_config_from_json(const json& j) {
  imitation::DistillConfig c;
  const json m = merged(to_json(c), j, "distill");
  c.lambda = m["lambda"].get<double>();
  c.psi = m["psi"].get<double>();
  c.mask_mode = imitation::mask_mode_from_string(m["mask_mode"].get<std::string>());
  c.adapt_init = imitation::adapt_init_from_string(m["adapt_init"].get<std::string>());
  imitation::validate(c);
  return c;
}

json to_json(const trainer::TrainConfig& c) {
  return {{"lr", c.lr},
          {"momentum", c.momentum},
          {"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"lr_decay_at", c.lr_decay_at},
          {"lr_decay_factor", c.lr_decay_factor},
          {"adapt_lr_mult", c.adapt_lr_mult},
          {"threads", c.threads},
          {"distill", c.distill ? to_json(*c.distill) : json(nullptr)}};
}

trainer::TrainConfig train_config_from_json(const json& j) {
  trainer::TrainConfig c;
  const json m = merged(to_json(c), j, "train");
  c.lr = m["lr"].get<double>();
  c.momentum = m["momentum"].get<double>();
  c.iterations = m["iterations"].get<std::size_t>();
  c.batch_size = m["batch_size"].get<std::size_t>();
  c.seed = m["seed"].get<std::uint64_t>();
  c.eval_every = m["eval_every"].get<std::size_t>();
  c.lr_decay_at = m["lr_decay_at"].get<double>();
  c.lr_decay_factor = m["lr_decay_factor"].get<double>();
  c.adapt_lr_mult = m["adapt_lr_mult"].get<double>();
  c.threads = m["threads"].get<std::size_t>();
  if (!m["distill"].is_null()) c.distill = distill_config_from_json(m["distill"]);
  trainer::validate(c);
  return c;
}

json to_json(const trainer::EvalConfig& c) {
  return {{"score_thresh", c.score_thresh}, {"nms_iou", c.nms_iou}, {"iou_thresh", c.iou_thresh}};
}

trainer::EvalConfig eval_config_from_json(const json& j) {
  trainer::EvalConfig c;
  const json m = merged(to_json(c), j, "eval");
  c.score_thresh = m["score_thresh"].get<double>();
  c.nms_iou = m["nms_iou"].get<double>();
  c.iou_thresh = m["iou_thresh"].get<double>();
  for (double v : {c.score_thresh, c.nms_iou, c.iou_thresh}) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("eval: thresholds must lie in [0, 1]");
  }
  return c;
}

}  // namespace fi
