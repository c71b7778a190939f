#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fine_imitate/data.hpp"
#include "fine_imitate/detector.hpp"
#include "fine_imitate/imitation.hpp"
#include "fine_imitate/metrics.hpp"

namespace fi::trainer {

using data::Sample;
using detector::DetectorConfig;
using detector::DetectorParams;

struct EvalConfig {
  double score_thresh = 0.05;
  double nms_iou = 0.5;
  double iou_thresh = 0.5;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct TrainConfig {
  double lr = 0.02;
  double momentum = 0.9;
  std::size_t iterations = 1000;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  std::size_t eval_every = 0;  // 0: evaluate only at the end
  double lr_decay_at = 0.75;   // fraction of iterations after which lr drops
  double lr_decay_factor = 0.1;
  double adapt_lr_mult = 1.0;  // adaptation layer learning rate = lr * adapt_lr_mult
  std::size_t threads = 1;     // per-image workers inside a batch; 1 is the serial reference
  std::optional<imitation::DistillConfig> distill;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& cfg);

struct IterationLog {
  std::size_t iteration = 0;
  imitation::LossBreakdown losses;
};

struct EvalPoint {
  std::size_t iteration = 0;
  double map = 0.0;
};

struct RunRecord {
  std::vector<IterationLog> losses;
  std::vector<EvalPoint> evals;
  std::string checkpoint_path;
  nlohmann::json config;
};

nlohmann::json to_json(const RunRecord& record);
RunRecord run_record_from_json(const nlohmann::json& j);

struct TrainResult {
  RunRecord record;
  DetectorParams params;
  std::optional<imitation::AdaptationLayer> adaptation;
};

/// Frozen teacher used as the imitation target.
struct Teacher {
  DetectorConfig config;
  DetectorParams params;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t iteration, DetectorParams last_good)
      : std::runtime_error("training diverged (non-finite loss) at iteration " + std::to_string(iteration)),
        iteration_(iteration),
        last_good_(std::move(last_good)) {}
  std::size_t iteration() const { return iteration_; }
  const DetectorParams& last_good() const { return last_good_; }

 private:
  std::size_t iteration_;
  DetectorParams last_good_;
};

/// Scales every backbone width by `width_mult` (rounded, at least 1). Head
/// shapes depend only on anchors and classes, so they are unchanged.
DetectorConfig make_student(const DetectorConfig& teacher_cfg, double width_mult);

/// Detection-loss-only training. `eval` may be empty.
TrainResult train_teacher(const DetectorConfig& cfg, const TrainConfig& train, const std::vector<Sample>& data,
                          const std::vector<Sample>& eval = {}, const EvalConfig& eval_cfg = {});

/// Student training with L = L_gt + lambda * L_imitation against a frozen
/// teacher. Without `train.distill` (or with lambda = 0) the parameter
/// trajectory is identical to train_teacher on the student config.
TrainResult distill_train(const Teacher& teacher, const DetectorConfig& student_cfg, const TrainConfig& train,
                          const std::vector<Sample>& data, const std::vector<Sample>& eval = {},
                          const EvalConfig& eval_cfg = {});

/// Imitation mask used for one image under `cfg`.
mask::ImitationMask imitation_mask_for(const std::vector<geometry::Box>& gts, const geometry::AnchorGrid& grid,
                                       const imitation::DistillConfig& cfg);

detector::ApReport evaluate(const DetectorConfig& cfg, const DetectorParams& params, const std::vector<Sample>& data,
                            const EvalConfig& eval_cfg = {});

std::vector<detector::Detection> detect(const DetectorConfig& cfg, const DetectorParams& params,
                                        const numerics::Tensor& image, const EvalConfig& eval_cfg = {});

/// Student checkpoint: detector tensors plus "adapt.weight" / "adapt.bias"
/// when an adaptation layer is present.
numerics::Checkpoint student_checkpoint(const TrainResult& result);

}  // namespace fi::trainer
