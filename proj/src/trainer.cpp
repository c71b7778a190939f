#include "fine_imitate/trainer.hpp"

#include <cmath>
#include <thread>

#include "fine_imitate/config.hpp"
#include "fine_imitate/optim.hpp"
#include "fine_imitate/util.hpp"

namespace fi::trainer {

using nlohmann::json;
using numerics::LayerParams;
using numerics::Tensor;

namespace {
// Tags for derive_seed so each random stream is independent of the others.
constexpr std::uint64_t kInitTag = 1;
constexpr std::uint64_t kEpochTag = 2;
constexpr std::uint64_t kSampleTag = 3;
constexpr std::uint64_t kAdaptTag = 4;
}  // namespace

void validate(const TrainConfig& c) {
  if (c.iterations == 0) throw std::invalid_argument("train: iterations must be > 0");
  if (c.batch_size == 0) throw std::invalid_argument("train: batch_size must be > 0");
  if (!(c.lr > 0.0) || !(c.momentum >= 0.0 && c.momentum < 1.0)) {
    throw std::invalid_argument("train: need lr > 0 and momentum in [0, 1)");
  }
  if (!(c.lr_decay_at >= 0.0 && c.lr_decay_at <= 1.0) || !(c.lr_decay_factor > 0.0)) {
    throw std::invalid_argument("train: lr_decay_at must lie in [0, 1] and lr_decay_factor be > 0");
  }
  if (c.threads == 0) throw std::invalid_argument("train: threads must be >= 1");
  if (!(c.adapt_lr_mult > 0.0) || !std::isfinite(c.adapt_lr_mult)) {
    throw std::invalid_argument("train: adapt_lr_mult must be finite and > 0");
  }
  if (c.distill) imitation::validate(*c.distill);
}

json to_json(const RunRecord& r) {
  json losses = json::array();
  for (const auto& l : r.losses) {
    losses.push_back({{"iteration", l.iteration},
                      {"l_gt", l.losses.l_gt},
                      {"l_imitation", l.losses.l_imitation},
                      {"l_total", l.losses.l_total}});
  }
  json evals = json::array();
  for (const auto& e : r.evals) evals.push_back({{"iteration", e.iteration}, {"map", e.map}});
  return {{"losses", losses}, {"evals", evals}, {"checkpoint", r.checkpoint_path}, {"config", r.config}};
}

RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  for (const auto& l : j.at("losses")) {
    r.losses.push_back({l.at("iteration").get<std::size_t>(),
                        {l.at("l_gt").get<double>(), l.at("l_imitation").get<double>(), l.at("l_total").get<double>()}});
  }
  for (const auto& e : j.at("evals")) r.evals.push_back({e.at("iteration").get<std::size_t>(), e.at("map").get<double>()});
  r.checkpoint_path = j.at("checkpoint").get<std::string>();
  r.config = j.at("config");
  return r;
}

DetectorConfig make_student(const DetectorConfig& teacher_cfg, double width_mult) {
  if (!(width_mult > 0.0 && width_mult <= 1.0)) {
    throw std::invalid_argument("make_student: width multiplier must lie in (0, 1], got " + std::to_string(width_mult));
  }
  DetectorConfig s = teacher_cfg;
  for (auto& w : s.backbone_widths) {
    w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(width_mult * static_cast<double>(w))));
  }
  return s;
}

mask::ImitationMask imitation_mask_for(const std::vector<geometry::Box>& gts, const geometry::AnchorGrid& grid,
                                       const imitation::DistillConfig& cfg) {
  switch (cfg.mask_mode) {
    case imitation::MaskMode::gt_projection:
      return mask::gt_projection_mask(gts, grid.stride, grid.feat_w, grid.feat_h);
    case imitation::MaskMode::adaptive:
      break;
  }
  return mask::estimate_mask(gts, grid, mask::MaskConfig{cfg.psi}).mask;
}

std::vector<detector::Detection> detect(const DetectorConfig& cfg, const DetectorParams& params, const Tensor& image,
                                        const EvalConfig& eval_cfg) {
  const auto fwd = detector::forward(image, cfg, params);
  const auto grid = detector::make_anchor_grid(cfg, image.dim(0), image.dim(1));
  return detector::decode_and_nms(fwd.cls_logits, fwd.reg_preds, grid, cfg.num_classes, image.dim(0), image.dim(1),
                                  {eval_cfg.score_thresh, eval_cfg.nms_iou, 100});
}

detector::ApReport evaluate(const DetectorConfig& cfg, const DetectorParams& params, const std::vector<Sample>& data,
                            const EvalConfig& eval_cfg) {
  std::vector<std::vector<detector::Detection>> dets;
  std::vector<std::vector<geometry::Box>> gts;
  for (const auto& s : data) {
    dets.push_back(detect(cfg, params, s.image, eval_cfg));
    gts.push_back(s.gts);
  }
  return detector::evaluate_ap(dets, gts, cfg.num_classes, eval_cfg.iou_thresh);
}

numerics::Checkpoint student_checkpoint(const TrainResult& result) {
  auto ckpt = detector::to_checkpoint(result.params);
  if (result.adaptation) {
    ckpt.push_back({"adapt.weight", result.adaptation->params.kernels});
    ckpt.push_back({"adapt.bias", result.adaptation->params.biases});
  }
  return ckpt;
}

namespace {

struct ImageResult {
  DetectorParams grads;
  std::optional<LayerParams> adapt_grads;
  double l_gt = 0.0;
  double l_imitation = 0.0;
};

struct StepContext {
  const DetectorConfig* cfg;
  const DetectorParams* params;
  const imitation::AdaptationLayer* adaptation;  // null when not distilling
  const Teacher* teacher;                         // null when not distilling
  const imitation::DistillConfig* distill;        // null when not distilling
};

// Teacher features and masks depend only on the image, so they are computed once.
struct ImitationTarget {
  Tensor teacher_feat;
  mask::ImitationMask mask;
};

ImageResult image_step(const StepContext& ctx, const Sample& sample, const detector::TargetAssignment& assignment,
                       const ImitationTarget* target, std::uint64_t sample_seed) {
  const auto& cfg = *ctx.cfg;
  ImageResult r;
  const auto fwd = detector::forward(sample.image, cfg, *ctx.params);
  std::mt19937_64 rng(sample_seed);
  const auto sampled = detector::subsample(assignment, cfg.sample_cap, cfg.positive_fraction, rng);
  const auto det = detector::detection_loss(fwd.cls_logits, fwd.reg_preds, sampled, cfg.num_classes, cfg.smooth_l1_beta);
  r.l_gt = det.loss;

  std::optional<Tensor> guided_extra;
  if (target) {
    const Tensor& student_feat = fwd.guided_feature();
    const Tensor adapted = imitation::adapt(student_feat, *ctx.adaptation);
    auto im = imitation::imitation_loss(adapted, target->teacher_feat, target->mask);
    r.l_imitation = im.loss;
    for (double& g : im.grad_adapted.values()) g *= ctx.distill->lambda;
    auto ag = imitation::adapt_backward(student_feat, *ctx.adaptation, im.grad_adapted);
    r.adapt_grads = std::move(ag.grad_params);
    guided_extra = std::move(ag.grad_input);
  }
  r.grads = detector::backward(sample.image, cfg, *ctx.params, fwd, det.grad_cls, det.grad_reg,
                               guided_extra ? &*guided_extra : nullptr);
  return r;
}

void accumulate(Tensor& into, const Tensor& g) {
  for (std::size_t n = 0; n < into.size(); ++n) into[n] += g[n];
}

// Explicit Fisher-Yates so the permutation does not depend on the standard
// library's shuffle implementation.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

TrainResult run_training(const DetectorConfig& cfg, const TrainConfig& train, const std::vector<Sample>& data,
                         const std::vector<Sample>& eval, const EvalConfig& eval_cfg, const Teacher* teacher) {
  detector::validate(cfg);
  validate(train);
  if (data.empty()) throw std::invalid_argument("train: empty training set");
  const std::size_t img_w = data.front().image.dim(0), img_h = data.front().image.dim(1);
  for (const auto& s : data) {
    if (s.image.dim(0) != img_w || s.image.dim(1) != img_h) {
      throw numerics::ShapeError("train: all images must share one size");
    }
  }
  const auto grid = detector::make_anchor_grid(cfg, img_w, img_h);

  const bool distilling = teacher && train.distill.has_value();
  if (distilling) {
    if (teacher->config.total_stride != cfg.total_stride || teacher->config.input_channels != cfg.input_channels) {
      throw numerics::ShapeError("distill: teacher stride/input channels differ from the student's");
    }
    const auto probe = detector::forward(data.front().image, teacher->config, teacher->params);
    if (probe.guided_feature().dim(0) != grid.feat_w || probe.guided_feature().dim(1) != grid.feat_h) {
      throw numerics::ShapeError("distill: teacher feature " + probe.guided_feature().shape_string() +
                                 " does not match the student lattice");
    }
  }

  TrainResult result;
  result.params = detector::init_detector_params(cfg, derive_seed(train.seed, {kInitTag}));
  if (distilling) {
    result.adaptation = imitation::make_adaptation_layer(cfg.guided_channels(), teacher->config.guided_channels(),
                                                         derive_seed(train.seed, {kAdaptTag}), train.distill->adapt_init);
  }
  result.record.config = {{"detector", fi::to_json(cfg)}, {"train", fi::to_json(train)}};

  std::vector<detector::TargetAssignment> assignments;
  assignments.reserve(data.size());
  for (const auto& s : data) assignments.push_back(detector::assign_targets(grid, s.gts, cfg.pos_iou, cfg.neg_iou));

  // Teacher is read-only: forward only, no gradient.
  std::vector<ImitationTarget> targets;
  if (distilling && train.distill->lambda > 0.0) {
    targets.reserve(data.size());
    for (const auto& s : data) {
      auto tf = detector::forward(s.image, teacher->config, teacher->params);
      targets.push_back({tf.guided_feature(), imitation_mask_for(s.gts, grid, *train.distill)});
    }
  }

  numerics::SgdOptimizer opt(train.lr, train.momentum);
  numerics::SgdOptimizer adapt_opt(train.lr * train.adapt_lr_mult, train.momentum);
  const auto decay_step = static_cast<std::size_t>(std::ceil(train.lr_decay_at * static_cast<double>(train.iterations)));
  const std::size_t batch = train.batch_size;
  std::vector<std::size_t> order;
  std::size_t cursor = data.size(), epoch = 0;
  DetectorParams last_good = result.params;
  std::vector<ImageResult> slots(batch);

  for (std::size_t it = 0; it < train.iterations; ++it) {
    if (it == decay_step) {
      opt.set_learning_rate(train.lr * train.lr_decay_factor);
      adapt_opt.set_learning_rate(train.lr * train.adapt_lr_mult * train.lr_decay_factor);
    }
    std::vector<std::size_t> picks;
    while (picks.size() < batch) {
      if (cursor == data.size()) {
        order = epoch_order(data.size(), derive_seed(train.seed, {kEpochTag, epoch++}));
        cursor = 0;
      }
      picks.push_back(order[cursor++]);
    }

    const StepContext ctx{&cfg, &result.params, result.adaptation ? &*result.adaptation : nullptr, teacher,
                          distilling ? &*train.distill : nullptr};
    auto work = [&](std::size_t b) {
      const std::size_t i = picks[b];
      slots[b] = image_step(ctx, data[i], assignments[i], targets.empty() ? nullptr : &targets[i],
                            derive_seed(train.seed, {kSampleTag, it, b}));
    };
    const std::size_t workers = std::min(train.threads, batch);
    if (workers <= 1) {
      for (std::size_t b = 0; b < batch; ++b) work(b);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t b = w; b < batch; b += workers) work(b);
        });
      }
    }

    // Reduce in image order so serial and parallel runs agree bit for bit.
    DetectorParams grads = result.params.zeros_like();
    std::optional<LayerParams> adapt_grads;
    if (result.adaptation) adapt_grads = result.adaptation->params.zeros_like();
    double l_gt = 0.0, l_im = 0.0;
    auto gt = grads.tensors();
    for (std::size_t b = 0; b < batch; ++b) {
      auto gs = slots[b].grads.tensors();
      for (std::size_t n = 0; n < gt.size(); ++n) accumulate(*gt[n], *gs[n]);
      if (adapt_grads && slots[b].adapt_grads) {
        accumulate(adapt_grads->kernels, slots[b].adapt_grads->kernels);
        accumulate(adapt_grads->biases, slots[b].adapt_grads->biases);
      }
      l_gt += slots[b].l_gt;
      l_im += slots[b].l_imitation;
    }
    const double inv_b = 1.0 / static_cast<double>(batch);
    for (Tensor* t : gt) {
      for (double& v : t->values()) v *= inv_b;
    }
    if (adapt_grads) {
      for (double& v : adapt_grads->kernels.values()) v *= inv_b;
      for (double& v : adapt_grads->biases.values()) v *= inv_b;
    }
    l_gt *= inv_b;
    l_im *= inv_b;

    if (!std::isfinite(l_gt) || !std::isfinite(l_im)) throw TrainingDiverged(it, last_good);
    const imitation::DistillConfig plain{0.0, 0.0, imitation::MaskMode::adaptive};
    result.record.losses.push_back({it, imitation::total_loss(l_gt, l_im, distilling ? *train.distill : plain)});

    last_good = result.params;
    std::vector<Tensor*> params = result.params.tensors();
    std::vector<const Tensor*> grad_views(gt.begin(), gt.end());
    try {
      if (result.adaptation) {
        // Check both groups before touching either so a bad step changes nothing.
        numerics::require_finite(adapt_grads->kernels, "adapt.weight gradient");
        numerics::require_finite(adapt_grads->biases, "adapt.bias gradient");
      }
      opt.step(params, grad_views);
      if (result.adaptation) {
        const std::vector<Tensor*> adapt_params{&result.adaptation->params.kernels, &result.adaptation->params.biases};
        const std::vector<const Tensor*> adapt_views{&adapt_grads->kernels, &adapt_grads->biases};
        adapt_opt.step(adapt_params, adapt_views);
      }
    } catch (const numerics::NonFiniteError&) {
      throw TrainingDiverged(it, last_good);
    }

    const bool last = it + 1 == train.iterations;
    if (!eval.empty() && (last || (train.eval_every && (it + 1) % train.eval_every == 0))) {
      result.record.evals.push_back({it + 1, evaluate(cfg, result.params, eval, eval_cfg).map});
    }
  }
  return result;
}

}  // namespace

TrainResult train_teacher(const DetectorConfig& cfg, const TrainConfig& train, const std::vector<Sample>& data,
                          const std::vector<Sample>& eval, const EvalConfig& eval_cfg) {
  return run_training(cfg, train, data, eval, eval_cfg, nullptr);
}

TrainResult distill_train(const Teacher& teacher, const DetectorConfig& student_cfg, const TrainConfig& train,
                          const std::vector<Sample>& data, const std::vector<Sample>& eval,
                          const EvalConfig& eval_cfg) {
  return run_training(student_cfg, train, data, eval, eval_cfg, &teacher);
}

}  // namespace fi::trainer
