#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fine_imitate/trainer.hpp"

namespace fi::analysis {

using trainer::Teacher;

/// Everything a student run needs apart from the mask settings that vary.
struct ExperimentSetup {
  const Teacher* teacher = nullptr;
  detector::DetectorConfig student_cfg;
  trainer::TrainConfig train;  // train.distill supplies lambda; psi / mask mode are overwritten per run
  trainer::EvalConfig eval;
  const std::vector<data::Sample>* train_data = nullptr;
  const std::vector<data::Sample>* test_data = nullptr;
  std::size_t run_threads = 1;  // independent runs executed concurrently
};

struct SweepPoint {
  double psi = 0.0;
  std::vector<std::optional<double>> per_seed;  // nullopt: run diverged
  std::optional<double> mean_map;               // over completed seeds
};

struct SweepResult {
  std::vector<std::uint64_t> seeds;
  std::vector<SweepPoint> points;  // strictly increasing psi
  nlohmann::json config;
};

/// One distillation run per (psi, seed); mAP on the held-out set.
SweepResult psi_sweep(const std::vector<double>& psis, const std::vector<std::uint64_t>& seeds,
                      const ExperimentSetup& setup);

nlohmann::json to_json(const SweepResult& r);
SweepResult sweep_result_from_json(const nlohmann::json& j);
/// Columns: psi,mean_map,map_seed_<seed>... (empty cell for a missing run).
std::string sweep_to_csv(const SweepResult& r);

struct ChannelVariance {
  std::optional<double> var_in;   // nullopt when no masked location was seen
  std::optional<double> var_out;  // nullopt when no unmasked location was seen
};

struct VarianceReport {
  std::vector<ChannelVariance> channels;
  double fraction_in_below_out = 0.0;  // over channels where both variances exist
  std::size_t num_images = 0;
  std::size_t in_locations = 0;
  std::size_t out_locations = 0;
};

/// Population variance per channel, pooling locations across all maps:
/// masked locations feed var_in, the rest var_out. Two-pass (mean, then
/// squared deviations).
VarianceReport channel_variances(const std::vector<numerics::Tensor>& features,
                                 const std::vector<mask::ImitationMask>& masks);

/// Teacher guided-feature variance inside vs outside the adaptive mask.
VarianceReport per_channel_variance(const Teacher& teacher, const std::vector<data::Sample>& images, double psi);

nlohmann::json to_json(const VarianceReport& r);
/// Columns: channel,var_in,var_out,in_below_out.
std::string variance_to_csv(const VarianceReport& r);

struct ComparisonRow {
  std::string variant;  // none | fine_grained | full_feature | gt_projection
  std::vector<std::optional<double>> per_seed;
  std::optional<double> mean_map;
  std::vector<std::string> config_diff;  // train-config keys that differ from the "none" row
};

struct ComparisonTable {
  std::vector<std::uint64_t> seeds;
  std::vector<ComparisonRow> rows;
  nlohmann::json config;
};

/// Same budget and seeds for every variant; only the imitation mask changes.
ComparisonTable baseline_comparison(const std::vector<std::uint64_t>& seeds, const ExperimentSetup& setup,
                                    double fine_grained_psi = 0.5);

nlohmann::json to_json(const ComparisonTable& t);
std::string comparison_to_csv(const ComparisonTable& t);

std::optional<double> mean_of(const std::vector<std::optional<double>>& values);

}  // namespace fi::analysis
