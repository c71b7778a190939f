#include "fine_imitate/commands.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "fine_imitate/analysis.hpp"
#include "fine_imitate/checkpoint.hpp"
#include "fine_imitate/config.hpp"
#include "fine_imitate/data.hpp"
#include "fine_imitate/overlay.hpp"
#include "fine_imitate/trainer.hpp"
#include "fine_imitate/util.hpp"

namespace fi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = FINE_IMITATE_VERSION;

json analysis_defaults() {
  return {{"psis", {0.0, 0.1, 0.5, 0.9, 1.0}}, {"seeds", {1, 2, 3}}, {"variance_images", 10}, {"variance_psi", 0.5}};
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::size_t thread_cap() {
  const char* v = std::getenv("FINE_IMITATE_THREADS");
  if (!v || !*v) return 1;
  const long n = std::strtol(v, nullptr, 10);
  if (n < 1) throw std::invalid_argument("FINE_IMITATE_THREADS must be a positive integer");
  return static_cast<std::size_t>(n);
}

/// Writes exactly one manifest.json for a command, on success or failure.
class Manifest {
 public:
  Manifest(std::string command, const CommonOptions& opts, json config)
      : command_(std::move(command)), out_(opts.out), config_(std::move(config)), start_(timestamp()) {
    if (out_.empty()) throw std::invalid_argument("--out is required");
    fs::create_directories(out_);
  }
  Manifest(const Manifest&) = delete;
  Manifest& operator=(const Manifest&) = delete;
  ~Manifest() {
    try {
      write_json(out_ / "manifest.json", {{"command", command_},
                                          {"resolved_config", config_},
                                          {"seeds", seeds_},
                                          {"out_dir", out_.string()},
                                          {"tool_version", kVersion},
                                          {"start_time", start_},
                                          {"end_time", timestamp()},
                                          {"status", ok_ ? "ok" : "error"}});
    } catch (...) {
      // The command's own error is the one worth reporting.
    }
  }
  void add_seed(std::uint64_t s) { seeds_.push_back(s); }
  void succeed() { ok_ = true; }
  const fs::path& out() const { return out_; }

 private:
  std::string command_;
  fs::path out_;
  json config_;
  std::string start_;
  json seeds_ = json::array();
  bool ok_ = false;
};

data::DatasetSpec test_spec(const json& cfg) {
  json merged = cfg.at("dataset");
  for (const auto& [k, v] : cfg.at("test_dataset").items()) merged[k] = v;
  return data::dataset_spec_from_json(merged);
}

struct Splits {
  std::vector<data::Sample> train;
  std::vector<data::Sample> test;
};

Splits load_splits(const fs::path& data_dir) {
  Splits s{data::load_dataset(data_dir / "train"), data::load_dataset(data_dir / "test")};
  if (s.train.empty()) throw std::runtime_error("no training samples under " + (data_dir / "train").string());
  return s;
}

trainer::TrainConfig train_config(const json& cfg) {
  auto tc = train_config_from_json(cfg.at("train"));
  tc.threads = std::min(std::max<std::size_t>(tc.threads, thread_cap()), thread_cap());
  return tc;
}

std::string losses_csv(const trainer::RunRecord& r) {
  std::ostringstream os;
  os << std::setprecision(17) << "iteration,l_gt,l_imitation,l_total\n";
  for (const auto& l : r.losses) {
    os << l.iteration << ',' << l.losses.l_gt << ',' << l.losses.l_imitation << ',' << l.losses.l_total << '\n';
  }
  return os.str();
}

json ap_json(const detector::ApReport& ap) {
  json per_class = json::array();
  for (const auto& v : ap.per_class_ap) per_class.push_back(v ? json(*v) : json(nullptr));
  return {{"map", ap.map}, {"per_class_ap", per_class}};
}

trainer::Teacher load_teacher(const json& cfg, const fs::path& ckpt) {
  const auto tcfg = detector_config_from_json(cfg.at("detector"));
  return {tcfg, detector::from_checkpoint(numerics::load_checkpoint(ckpt), tcfg)};
}

void write_run_outputs(const fs::path& out, trainer::TrainResult& result, const detector::DetectorConfig& cfg,
                       const std::vector<data::Sample>& test, const trainer::EvalConfig& eval,
                       const std::string& ckpt_name) {
  numerics::save_checkpoint(out / ckpt_name, trainer::student_checkpoint(result));
  if (result.adaptation) numerics::save_checkpoint(out / "deploy_checkpoint.json", detector::to_checkpoint(result.params));
  result.record.checkpoint_path = ckpt_name;
  write_json(out / "run_record.json", trainer::to_json(result.record));
  write_text(out / "losses.csv", losses_csv(result.record));
  json metrics{{"map", nullptr}};
  if (!test.empty()) {
    std::vector<std::vector<detector::Detection>> dets;
    std::vector<std::vector<geometry::Box>> gts;
    std::string lines;
    for (const auto& s : test) {
      dets.push_back(trainer::detect(cfg, result.params, s.image, eval));
      gts.push_back(s.gts);
      lines += detector::detections_to_jsonl(s.image_id, dets.back());
    }
    write_text(out / "detections.jsonl", lines);
    metrics = ap_json(detector::evaluate_ap(dets, gts, cfg.num_classes, eval.iou_thresh));
  }
  metrics["final_l_gt"] = result.record.losses.back().losses.l_gt;
  metrics["final_l_imitation"] = result.record.losses.back().losses.l_imitation;
  write_json(out / "metrics.json", metrics);
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(std::stod(item));
  return out;
}

std::vector<std::uint64_t> split_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(std::stoull(item));
  return out;
}

}  // namespace

json default_config() {
  data::DatasetSpec ds;
  ds.num_images = 500;
  return {{"dataset", data::to_json(ds)},
          {"test_dataset", {{"seed", 1000}, {"num_images", 100}}},
          {"detector", fi::to_json(detector::DetectorConfig{})},
          {"student", {{"width_mult", 0.25}}},
          {"train", fi::to_json(trainer::TrainConfig{})},
          {"distill", fi::to_json(imitation::DistillConfig{})},
          {"eval", fi::to_json(trainer::EvalConfig{})},
          {"analysis", analysis_defaults()}};
}

json resolve_config(const CommonOptions& opts) {
  json cfg = default_config();
  if (!opts.config.empty()) {
    std::ifstream in(opts.config);
    if (!in) throw std::runtime_error("cannot open config " + opts.config.string());
    const json file = json::parse(in);
    reject_unknown_keys(file, cfg, "config");
    for (const auto& [section, body] : file.items()) {
      reject_unknown_keys(body, section == "test_dataset" ? cfg.at("dataset") : cfg.at(section), section);
      for (const auto& [k, v] : body.items()) cfg[section][k] = v;
    }
  }
  for (const auto& ov : opts.overrides) {
    const auto eq = ov.find('=');
    const auto dot = ov.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw std::invalid_argument("override '" + ov + "' must look like section.key=value");
    }
    const std::string section = ov.substr(0, dot), key = ov.substr(dot + 1, eq - dot - 1);
    if (!cfg.contains(section)) throw std::invalid_argument("override: unknown section '" + section + "'");
    const json& allowed = section == "test_dataset" ? cfg.at("dataset") : cfg.at(section);
    if (!allowed.contains(key)) throw std::invalid_argument("override: unknown key '" + section + "." + key + "'");
    cfg[section][key] = parse_value(ov.substr(eq + 1));
  }
  // Validate every section eagerly so typos surface before any work starts.
  data::dataset_spec_from_json(cfg.at("dataset"));
  test_spec(cfg);
  detector_config_from_json(cfg.at("detector"));
  train_config_from_json(cfg.at("train"));
  distill_config_from_json(cfg.at("distill"));
  eval_config_from_json(cfg.at("eval"));
  const double mult = cfg.at("student").at("width_mult").get<double>();
  if (!(mult > 0.0 && mult <= 1.0)) throw std::invalid_argument("student.width_mult must lie in (0, 1]");
  return cfg;
}

void cmd_generate_data(const CommonOptions& opts) {
  json cfg = resolve_config(opts);
  if (opts.seed) cfg["dataset"]["seed"] = *opts.seed;
  Manifest manifest("generate-data", opts, cfg);
  const auto train_spec = data::dataset_spec_from_json(cfg.at("dataset"));
  const auto eval_spec = test_spec(cfg);
  manifest.add_seed(train_spec.seed);
  manifest.add_seed(eval_spec.seed);
  const auto train = data::generate(train_spec);
  const auto test = data::generate(eval_spec);
  data::save_dataset(manifest.out() / "train", train);
  data::save_dataset(manifest.out() / "test", test);

  std::vector<std::size_t> counts(data::kShapeClasses.size(), 0);
  std::size_t objects = 0;
  for (const auto& s : train) {
    for (const auto& b : s.gts) {
      ++counts.at(static_cast<std::size_t>(b.class_id));
      ++objects;
    }
  }
  write_json(manifest.out() / "metrics.json",
             {{"train_images", train.size()},
              {"test_images", test.size()},
              {"train_objects", objects},
              {"train_class_counts", counts},
              {"train_annotations_digest", file_digest(manifest.out() / "train" / "annotations.jsonl")},
              {"test_annotations_digest", file_digest(manifest.out() / "test" / "annotations.jsonl")}});
  manifest.succeed();
}

void cmd_train(const CommonOptions& opts, const fs::path& data_dir, bool as_student) {
  json cfg = resolve_config(opts);
  if (opts.seed) cfg["train"]["seed"] = *opts.seed;
  Manifest manifest(as_student ? "train" : "train-teacher", opts, cfg);
  auto dcfg = detector_config_from_json(cfg.at("detector"));
  if (as_student) dcfg = trainer::make_student(dcfg, cfg.at("student").at("width_mult").get<double>());
  auto tc = train_config(cfg);
  tc.distill.reset();
  manifest.add_seed(tc.seed);
  const auto eval = eval_config_from_json(cfg.at("eval"));
  const auto splits = load_splits(data_dir);
  auto result = trainer::train_teacher(dcfg, tc, splits.train, {}, eval);
  write_run_outputs(manifest.out(), result, dcfg, splits.test, eval, "checkpoint.json");
  manifest.succeed();
}

void cmd_distill(const CommonOptions& opts, const fs::path& teacher_ckpt, const fs::path& data_dir) {
  json cfg = resolve_config(opts);
  if (opts.seed) cfg["train"]["seed"] = *opts.seed;
  Manifest manifest("distill", opts, cfg);
  const auto teacher = load_teacher(cfg, teacher_ckpt);
  const auto scfg = trainer::make_student(teacher.config, cfg.at("student").at("width_mult").get<double>());
  auto tc = train_config(cfg);
  tc.distill = distill_config_from_json(cfg.at("distill"));
  manifest.add_seed(tc.seed);
  const auto eval = eval_config_from_json(cfg.at("eval"));
  const auto splits = load_splits(data_dir);
  auto result = trainer::distill_train(teacher, scfg, tc, splits.train, {}, eval);
  write_run_outputs(manifest.out(), result, scfg, splits.test, eval, "student_checkpoint.json");
  manifest.succeed();
}

namespace {

analysis::ExperimentSetup make_setup(const json& cfg, const trainer::Teacher& teacher, const Splits& splits) {
  analysis::ExperimentSetup setup;
  setup.teacher = &teacher;
  setup.student_cfg = trainer::make_student(teacher.config, cfg.at("student").at("width_mult").get<double>());
  setup.train = train_config(cfg);
  setup.train.distill = distill_config_from_json(cfg.at("distill"));
  setup.eval = eval_config_from_json(cfg.at("eval"));
  setup.train_data = &splits.train;
  setup.test_data = &splits.test;
  setup.run_threads = thread_cap();
  // Per-run work stays serial when runs themselves are spread over workers.
  if (setup.run_threads > 1) setup.train.threads = 1;
  return setup;
}

}  // namespace

void cmd_sweep_psi(const CommonOptions& opts, const fs::path& teacher_ckpt, const fs::path& data_dir,
                   const std::vector<double>& psis_in, const std::vector<std::uint64_t>& seeds_in) {
  json cfg = resolve_config(opts);
  if (!psis_in.empty()) cfg["analysis"]["psis"] = psis_in;
  if (!seeds_in.empty()) cfg["analysis"]["seeds"] = seeds_in;
  Manifest manifest("sweep-psi", opts, cfg);
  const auto psis = cfg.at("analysis").at("psis").get<std::vector<double>>();
  const auto seeds = cfg.at("analysis").at("seeds").get<std::vector<std::uint64_t>>();
  for (auto s : seeds) manifest.add_seed(s);
  const auto teacher = load_teacher(cfg, teacher_ckpt);
  const auto splits = load_splits(data_dir);
  const auto result = analysis::psi_sweep(psis, seeds, make_setup(cfg, teacher, splits));
  write_json(manifest.out() / "sweep.json", analysis::to_json(result));
  write_text(manifest.out() / "sweep.csv", analysis::sweep_to_csv(result));
  json points = json::array();
  for (const auto& p : result.points) points.push_back({{"psi", p.psi}, {"mean_map", p.mean_map ? json(*p.mean_map) : json(nullptr)}});
  write_json(manifest.out() / "metrics.json", {{"points", points}});
  manifest.succeed();
}

void cmd_compare_baselines(const CommonOptions& opts, const fs::path& teacher_ckpt, const fs::path& data_dir,
                           const std::vector<std::uint64_t>& seeds_in) {
  json cfg = resolve_config(opts);
  if (!seeds_in.empty()) cfg["analysis"]["seeds"] = seeds_in;
  Manifest manifest("compare-baselines", opts, cfg);
  const auto seeds = cfg.at("analysis").at("seeds").get<std::vector<std::uint64_t>>();
  for (auto s : seeds) manifest.add_seed(s);
  const auto teacher = load_teacher(cfg, teacher_ckpt);
  const auto splits = load_splits(data_dir);
  const double psi = cfg.at("distill").at("psi").get<double>();
  const auto table = analysis::baseline_comparison(seeds, make_setup(cfg, teacher, splits), psi);
  write_json(manifest.out() / "comparison.json", analysis::to_json(table));
  write_text(manifest.out() / "comparison.csv", analysis::comparison_to_csv(table));
  json rows = json::array();
  for (const auto& r : table.rows) rows.push_back({{"variant", r.variant}, {"mean_map", r.mean_map ? json(*r.mean_map) : json(nullptr)}});
  write_json(manifest.out() / "metrics.json", {{"rows", rows}});
  manifest.succeed();
}

void cmd_analyze_variance(const CommonOptions& opts, const fs::path& teacher_ckpt, const fs::path& data_dir,
                          double psi) {
  json cfg = resolve_config(opts);
  if (opts.seed) cfg["train"]["seed"] = *opts.seed;
  if (psi >= 0.0) cfg["analysis"]["variance_psi"] = psi;
  Manifest manifest("analyze-variance", opts, cfg);
  const double use_psi = cfg.at("analysis").at("variance_psi").get<double>();
  const auto count = cfg.at("analysis").at("variance_images").get<std::size_t>();
  const auto seed = cfg.at("train").at("seed").get<std::uint64_t>();
  manifest.add_seed(seed);
  const auto teacher = load_teacher(cfg, teacher_ckpt);
  auto pool = data::load_dataset(data_dir / "test");
  std::erase_if(pool, [](const data::Sample& s) { return s.gts.empty(); });
  if (pool.size() < count) throw std::runtime_error("not enough annotated images for the variance study");
  // Seeded draw without replacement.
  std::mt19937_64 rng(derive_seed(seed, {0x7661}));
  for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng() % (pool.size() - i)]);
  pool.resize(count);
  const auto report = analysis::per_channel_variance(teacher, pool, use_psi);
  write_json(manifest.out() / "variance.json", analysis::to_json(report));
  write_text(manifest.out() / "variance.csv", analysis::variance_to_csv(report));
  write_json(manifest.out() / "metrics.json", {{"fraction_in_below_out", report.fraction_in_below_out},
                                               {"channels", report.channels.size()},
                                               {"num_images", report.num_images}});
  manifest.succeed();
}

void cmd_visualize_mask(const CommonOptions& opts, const VisualizeOptions& vis) {
  json cfg = resolve_config(opts);
  if (vis.psi && vis.hard_threshold) throw std::invalid_argument("give either --psi or --hard-threshold, not both");
  Manifest manifest("visualize-mask", opts, cfg);
  const auto metas = data::load_jsonl(vis.annotations);
  auto it = metas.begin();
  if (!vis.image_id.empty()) {
    it = std::find_if(metas.begin(), metas.end(), [&](const data::SampleMeta& m) { return m.image_id == vis.image_id; });
  }
  if (it == metas.end()) throw std::runtime_error("image id not found in " + vis.annotations.string());
  const auto sample = data::load_sample(*it);
  const auto dcfg = detector_config_from_json(cfg.at("detector"));
  const auto grid = detector::make_anchor_grid(dcfg, sample.image.dim(0), sample.image.dim(1));

  json rule;
  mask::ImitationMask m;
  if (vis.hard_threshold) {
    m = mask::estimate_mask_hard(sample.gts, grid, *vis.hard_threshold);
    rule = {{"hard_threshold", *vis.hard_threshold}};
  } else {
    const double psi = vis.psi.value_or(cfg.at("distill").at("psi").get<double>());
    m = mask::estimate_mask(sample.gts, grid, mask::MaskConfig{psi}).mask;
    rule = {{"psi", psi}};
  }
  mask::render_overlay_png(manifest.out() / "mask_overlay.png", sample.image, m, grid.stride, sample.gts);
  json overlay = mask::overlay_to_json(m, grid.stride, sample.image.dim(0), sample.image.dim(1));
  overlay["image_id"] = sample.image_id;
  overlay["rule"] = rule;
  write_json(manifest.out() / "overlay.json", overlay);
  write_json(manifest.out() / "metrics.json", {{"image_id", sample.image_id}, {"n_positive", m.n_positive()}, {"rule", rule}});
  manifest.succeed();
}

int run(int argc, char** argv) {
  CLI::App app{"Fine-grained feature imitation toolkit for anchor-based detectors"};
  app.require_subcommand(1);
  CommonOptions opts;
  fs::path data_dir, teacher;
  std::string psis, seeds;
  double psi = -1.0;
  VisualizeOptions vis;
  double vis_psi = -1.0, vis_hard = -1.0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "JSON config file");
    sub->add_option("--seed", opts.seed, "Seed override");
    sub->add_option("--out", opts.out, "Output directory")->required();
    sub->add_option("--override", opts.overrides, "section.key=value (repeatable)");
  };
  auto* gen = app.add_subcommand("generate-data", "Render the synthetic shapes dataset");
  common(gen);
  auto* train_teacher = app.add_subcommand("train-teacher", "Train the full-width detector on ground truth");
  common(train_teacher);
  train_teacher->add_option("--data", data_dir, "Dataset directory (train/ and test/)")->required();
  auto* train = app.add_subcommand("train", "Train the width-scaled student on ground truth only");
  common(train);
  train->add_option("--data", data_dir, "Dataset directory")->required();
  auto* distill = app.add_subcommand("distill", "Train a student with feature imitation");
  common(distill);
  distill->add_option("--data", data_dir, "Dataset directory")->required();
  distill->add_option("--teacher", teacher, "Teacher checkpoint")->required();
  auto* sweep = app.add_subcommand("sweep-psi", "Distil once per (psi, seed) and report mAP");
  common(sweep);
  sweep->add_option("--data", data_dir, "Dataset directory")->required();
  sweep->add_option("--teacher", teacher, "Teacher checkpoint")->required();
  sweep->add_option("--psis", psis, "Comma-separated psi values");
  sweep->add_option("--seeds", seeds, "Comma-separated seeds");
  auto* compare = app.add_subcommand("compare-baselines", "No imitation vs fine-grained vs full-feature vs gt-projection");
  common(compare);
  compare->add_option("--data", data_dir, "Dataset directory")->required();
  compare->add_option("--teacher", teacher, "Teacher checkpoint")->required();
  compare->add_option("--seeds", seeds, "Comma-separated seeds");
  auto* variance = app.add_subcommand("analyze-variance", "Teacher per-channel variance inside/outside the mask");
  common(variance);
  variance->add_option("--data", data_dir, "Dataset directory")->required();
  variance->add_option("--teacher", teacher, "Teacher checkpoint")->required();
  variance->add_option("--psi", psi, "Mask factor (default analysis.variance_psi)");
  auto* visualize = app.add_subcommand("visualize-mask", "Overlay an imitation mask on an input image");
  common(visualize);
  visualize->add_option("--annotations", vis.annotations, "JSON-lines annotation file")->required();
  visualize->add_option("--image-id", vis.image_id, "Image id (default: first entry)");
  visualize->add_option("--psi", vis_psi, "Adaptive mask factor");
  visualize->add_option("--hard-threshold", vis_hard, "Constant IOU threshold instead of psi * M");

  std::string command = "fine_imitate";
  try {
    app.parse(argc, argv);
    command = app.get_subcommands().front()->get_name();
    if (vis_psi >= 0.0) vis.psi = vis_psi;
    if (vis_hard >= 0.0) vis.hard_threshold = vis_hard;
    if (gen->parsed()) cmd_generate_data(opts);
    if (train_teacher->parsed()) cmd_train(opts, data_dir, false);
    if (train->parsed()) cmd_train(opts, data_dir, true);
    if (distill->parsed()) cmd_distill(opts, teacher, data_dir);
    if (sweep->parsed()) cmd_sweep_psi(opts, teacher, data_dir, psis.empty() ? std::vector<double>{} : split_doubles(psis),
                                       seeds.empty() ? std::vector<std::uint64_t>{} : split_seeds(seeds));
    if (compare->parsed()) {
      cmd_compare_baselines(opts, teacher, data_dir, seeds.empty() ? std::vector<std::uint64_t>{} : split_seeds(seeds));
    }
    if (variance->parsed()) cmd_analyze_variance(opts, teacher, data_dir, psi);
    if (visualize->parsed()) cmd_visualize_mask(opts, vis);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", e.what()}, {"command", command}, {"kind", "usage"}}.dump() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"command", command}}.dump() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace fi::cli
