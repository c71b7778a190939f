#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace fi::cli {

/// Options shared by every subcommand.
struct CommonOptions {
  std::filesystem::path config;  // JSON config file; empty for defaults only
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
  std::vector<std::string> overrides;  // "section.key=value", value parsed as JSON when possible
};

/// Resolved experiment configuration: defaults < config file < overrides.
/// Sections: dataset, test_dataset, detector, student, train, distill, eval,
/// analysis. Unknown sections or keys are rejected.
nlohmann::json default_config();
nlohmann::json resolve_config(const CommonOptions& opts);

void cmd_generate_data(const CommonOptions& opts);
/// Trains the detector described by `detector` (scaled by student.width_mult
/// when `as_student`) on ground truth only.
void cmd_train(const CommonOptions& opts, const std::filesystem::path& data_dir, bool as_student);
void cmd_distill(const CommonOptions& opts, const std::filesystem::path& teacher_ckpt,
                 const std::filesystem::path& data_dir);
void cmd_sweep_psi(const CommonOptions& opts, const std::filesystem::path& teacher_ckpt,
                   const std::filesystem::path& data_dir, const std::vector<double>& psis,
                   const std::vector<std::uint64_t>& seeds);
void cmd_compare_baselines(const CommonOptions& opts, const std::filesystem::path& teacher_ckpt,
                           const std::filesystem::path& data_dir, const std::vector<std::uint64_t>& seeds);
void cmd_analyze_variance(const CommonOptions& opts, const std::filesystem::path& teacher_ckpt,
                          const std::filesystem::path& data_dir, double psi);

struct VisualizeOptions {
  std::filesystem::path annotations;  // JSON-lines file
  std::string image_id;               // empty: first entry
  std::optional<double> psi;
  std::optional<double> hard_threshold;
};
void cmd_visualize_mask(const CommonOptions& opts, const VisualizeOptions& vis);

/// Full command-line entry point; returns the process exit code.
int run(int argc, char** argv);

}  // namespace fi::cli
