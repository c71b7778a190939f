// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--work DIR]
//
// Criteria 6-9 share one benchmark run driven by configs/benchmark.json.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fine_imitate/analysis.hpp"
#include "fine_imitate/commands.hpp"
#include "fine_imitate/detector.hpp"
#include "fine_imitate/gradcheck.hpp"
#include "fine_imitate/imitation.hpp"
#include "fine_imitate/layers.hpp"
#include "fine_imitate/mask.hpp"
#include "fine_imitate/metrics.hpp"
#include "fine_imitate/trainer.hpp"
#include "fine_imitate/util.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using fi::numerics::Tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

// Keeps the first failure message, counts the rest.
class Tally {
 public:
  void check(bool ok, const std::string& what) {
    if (ok) return;
    if (failures_++ == 0) first_ = what;
  }
  bool ok() const { return failures_ == 0; }
  std::string summary() const { return first_ + (failures_ > 1 ? " (+" + std::to_string(failures_ - 1) + " more)" : ""); }

 private:
  std::size_t failures_ = 0;
  std::string first_;
};

fi::geometry::AnchorGrid grid_for(const oracle::Scene& sc) {
  return fi::geometry::build_anchor_grid(sc.w, sc.h, sc.stride, sc.scales, sc.ratios);
}

Outcome mask_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tally t;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto sc = oracle::random_scene(rng);
    const auto g = grid_for(sc);
    const double psi = trial % 10 == 0 ? 0.0 : u(rng), f = u(rng);
    t.check(oracle::mask_cells(fi::mask::estimate_mask(sc.gts, g, {psi}).mask) == oracle::brute_mask(sc, psi),
            "estimate_mask differs on scene " + std::to_string(trial));
    t.check(oracle::mask_cells(fi::mask::estimate_mask_hard(sc.gts, g, f)) == oracle::brute_mask(sc, 0.0, true, f),
            "estimate_mask_hard differs on scene " + std::to_string(trial));
    t.check(oracle::mask_cells(fi::mask::gt_projection_mask(sc.gts, sc.stride, sc.w, sc.h)) ==
                oracle::brute_projection(sc),
            "gt_projection_mask differs on scene " + std::to_string(trial));
  }
  const double secs = seconds_since(t0);
  t.check(secs < 10.0, "runtime " + fmt(secs) + " s");
  return {t.ok(), t.ok() ? "1000 scenes x 3 mask kinds, " + fmt(secs, 3) + " s" : t.summary()};
}

Outcome mask_endpoints() {
  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> u(1e-9, 1.0);
  Tally t;
  for (int trial = 0; trial < 200; ++trial) {
    const auto sc = oracle::random_scene(rng);
    const auto g = grid_for(sc);
    const std::string at = " on scene " + std::to_string(trial);
    t.check(fi::mask::estimate_mask(sc.gts, g, {0.0}).mask.n_positive() == sc.w * sc.h, "psi=0 not full" + at);
    t.check(fi::mask::estimate_mask(sc.gts, g, {1.0}).mask.n_positive() == 0, "psi=1 not empty" + at);
    double p1 = u(rng), p2 = u(rng);
    if (p1 > p2) std::swap(p1, p2);
    const auto m1 = fi::mask::estimate_mask(sc.gts, g, {p1}).mask, m2 = fi::mask::estimate_mask(sc.gts, g, {p2}).mask;
    t.check(m1.contains(m2), "mask(" + fmt(p1) + ") does not contain mask(" + fmt(p2) + ")" + at);
  }
  return {t.ok(), t.ok() ? "200 scenes: full at 0, empty at 1, nested in psi" : t.summary()};
}

fi::mask::ImitationMask random_mask(std::size_t w, std::size_t h, std::mt19937_64& rng) {
  fi::mask::ImitationMask m(w, h);
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < h; ++j) m.set(i, j, rng() % 2 == 0);
  return m;
}

double direct_imitation_loss(const Tensor& a, const Tensor& t, const fi::mask::ImitationMask& m) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j)
      if (m.at(i, j))
        for (std::size_t c = 0; c < a.dim(2); ++c) sum += (a.at(i, j, c) - t.at(i, j, c)) * (a.at(i, j, c) - t.at(i, j, c));
  return m.n_positive() == 0 ? 0.0 : sum / (2.0 * static_cast<double>(m.n_positive()));
}

std::vector<fi::data::Sample> small_dataset(std::uint64_t seed, std::size_t n) {
  fi::data::DatasetSpec spec;
  spec.seed = seed;
  spec.num_images = n;
  spec.image_size = 32;
  spec.min_size = 8;
  spec.max_size = 16;
  return fi::data::generate(spec);
}

Outcome imitation_loss_checks() {
  std::mt19937_64 rng(103);
  Tally t;
  double worst_value = 0.0, worst_grad = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t w = 1 + rng() % 8, h = 1 + rng() % 8, c = 1 + rng() % 8;
    const Tensor a = oracle::random_tensor({w, h, c}, rng), tt = oracle::random_tensor({w, h, c}, rng);
    const auto m = random_mask(w, h, rng);
    const double want = direct_imitation_loss(a, tt, m), got = fi::imitation::imitation_loss(a, tt, m).loss;
    const double rel = want == 0.0 ? std::abs(got) : std::abs(got - want) / std::abs(want);
    worst_value = std::max(worst_value, rel);
  }
  t.check(worst_value <= 1e-12, "loss rel error " + fmt(worst_value));

  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t w = 1 + rng() % 5, h = 1 + rng() % 5, c = 1 + rng() % 4;
    Tensor a = oracle::random_tensor({w, h, c}, rng);
    const Tensor tt = oracle::random_tensor({w, h, c}, rng);
    auto m = random_mask(w, h, rng);
    m.set(0, 0);
    const auto r = fi::imitation::imitation_loss(a, tt, m);
    std::vector<Tensor*> ps{&a};
    const std::vector<Tensor> analytic{r.grad_adapted};
    const auto rep =
        fi::numerics::grad_check(ps, [&] { return fi::imitation::imitation_loss(a, tt, m).loss; }, analytic);
    worst_grad = std::max(worst_grad, rep.max_rel_error);
  }
  t.check(worst_grad < 1e-6, "gradient rel error " + fmt(worst_grad));

  // lambda = 0 against plain training: every parameter bit-identical.
  const auto data = small_dataset(5, 16);
  fi::detector::DetectorConfig tcfg;
  tcfg.backbone_widths = {8, 8, 16, 16};
  fi::trainer::TrainConfig tc;
  tc.iterations = 12;
  tc.batch_size = 2;
  tc.lr = 0.005;
  const auto teacher_run = fi::trainer::train_teacher(tcfg, tc, data);
  const fi::trainer::Teacher teacher{tcfg, teacher_run.params};
  const auto scfg = fi::trainer::make_student(tcfg, 0.5);
  const auto plain = fi::trainer::train_teacher(scfg, tc, data);
  auto tc0 = tc;
  tc0.distill = fi::imitation::DistillConfig{0.0, 0.5};
  const auto distilled = fi::trainer::distill_train(teacher, scfg, tc0, data);
  const auto pa = plain.params.tensors(), pb = distilled.params.tensors();
  bool same = pa.size() == pb.size();
  for (std::size_t n = 0; same && n < pa.size(); ++n) same = *pa[n] == *pb[n];
  for (std::size_t n = 0; same && n < plain.record.losses.size(); ++n) {
    same = plain.record.losses[n].losses.l_total == distilled.record.losses[n].losses.l_total;
  }
  t.check(same, "lambda=0 trajectory differs from plain training");
  return {t.ok(), t.ok() ? "value rel err " + fmt(worst_value, 2) + ", grad rel err " + fmt(worst_grad, 2) +
                               ", lambda=0 trajectory bit-identical"
                         : t.summary()};
}

Outcome numeric_core() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(104);
  Tally t;
  double worst_conv = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t w = 1 + rng() % 9, h = 1 + rng() % 9, cin = 1 + rng() % 4, cout = 1 + rng() % 4;
    const std::size_t stride = 1 + rng() % 2;
    const Tensor x = oracle::random_tensor({w, h, cin}, rng);
    fi::numerics::LayerParams p{oracle::random_tensor({3, 3, cin, cout}, rng), oracle::random_tensor({cout}, rng), 0};
    const Tensor got = fi::numerics::conv_forward(x, p, stride);
    const Tensor want = oracle::naive_conv(x, p.kernels, p.biases, stride);
    if (got.dims() != want.dims()) {
      t.check(false, "conv shape mismatch");
      continue;
    }
    for (std::size_t n = 0; n < got.size(); ++n) worst_conv = std::max(worst_conv, std::abs(got[n] - want[n]));
  }
  t.check(worst_conv <= 1e-9, "conv abs error " + fmt(worst_conv));

  // Full model: backbone, head and adaptation layer under L_gt + lambda * L_im.
  fi::detector::DetectorConfig cfg;
  cfg.backbone_widths = {3, 4, 4, 5};
  cfg.num_classes = 2;
  cfg.anchor_scales = {8, 14};
  cfg.anchor_ratios = {1.0, 2.0};
  auto params = fi::detector::init_detector_params(cfg, 7);
  const auto img = oracle::random_tensor({16, 16, 1}, rng, 0, 1);
  const auto grid = fi::detector::make_anchor_grid(cfg, 16, 16);
  auto assignment = fi::detector::assign_targets(grid, {{2, 3, 11, 12, 1}}, 0.5, 0.3);
  std::mt19937_64 srng(1);
  assignment = fi::detector::subsample(assignment, 64, 0.25, srng);
  auto layer = fi::imitation::make_adaptation_layer(5, 6, 3);
  const auto teacher = oracle::random_tensor({2, 2, 6}, rng, 0, 1);
  fi::mask::ImitationMask m(2, 2);
  m.set(0, 0);
  m.set(1, 1);
  const double lambda = 0.7;
  auto loss = [&] {
    const auto f = fi::detector::forward(img, cfg, params);
    const double det = fi::detector::detection_loss(f.cls_logits, f.reg_preds, assignment, cfg.num_classes).loss;
    const double im = fi::imitation::imitation_loss(fi::imitation::adapt(f.guided_feature(), layer), teacher, m).loss;
    return fi::imitation::total_loss(det, im, {lambda, 0.5}).l_total;
  };
  const auto f = fi::detector::forward(img, cfg, params);
  const auto det = fi::detector::detection_loss(f.cls_logits, f.reg_preds, assignment, cfg.num_classes);
  auto im = fi::imitation::imitation_loss(fi::imitation::adapt(f.guided_feature(), layer), teacher, m);
  for (double& g : im.grad_adapted.values()) g *= lambda;
  const auto ag = fi::imitation::adapt_backward(f.guided_feature(), layer, im.grad_adapted);
  const auto grads = fi::detector::backward(img, cfg, params, f, det.grad_cls, det.grad_reg, &ag.grad_input);
  std::vector<Tensor*> ps = params.tensors();
  ps.push_back(&layer.params.kernels);
  ps.push_back(&layer.params.biases);
  std::vector<Tensor> analytic;
  for (const auto* g : grads.tensors()) analytic.push_back(*g);
  analytic.push_back(ag.grad_params.kernels);
  analytic.push_back(ag.grad_params.biases);
  fi::numerics::GradCheckOptions opt;
  opt.min_samples = 100000;
  const auto rep = fi::numerics::grad_check(ps, loss, analytic, opt);
  t.check(rep.max_rel_error < 1e-3, "composite grad rel error " + fmt(rep.max_rel_error));
  const double secs = seconds_since(t0);
  t.check(secs < 60.0, "runtime " + fmt(secs) + " s");
  return {t.ok(), t.ok() ? "conv abs err " + fmt(worst_conv, 2) + ", composite grad rel err " +
                               fmt(rep.max_rel_error, 2) + ", " + fmt(secs, 3) + " s"
                         : t.summary()};
}

Outcome detector_metrics() {
  Tally t;
  std::mt19937_64 rng(105);
  std::uniform_real_distribution<double> u(0, 30), e(2, 15), thr_d(0.1, 0.9);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<fi::geometry::Box> boxes(1 + rng() % 10);
    for (auto& b : boxes) {
      const double x = u(rng), y = u(rng);
      b = {x, y, x + e(rng), y + e(rng)};
    }
    const double thr = thr_d(rng);
    t.check(fi::detector::greedy_nms(boxes, thr) == oracle::brute_nms(boxes, thr), "nms differs on trial " + std::to_string(trial));
  }

  // Hand cases for all-points AP with one class.
  using fi::detector::Detection;
  const std::vector<fi::geometry::Box> gt{{0, 0, 10, 10, 0}};
  const Detection hit{{0, 0, 10, 10, 0}, 0, 0.5}, miss{{20, 20, 30, 30, 0}, 0, 0.9};
  const auto fp_above = fi::detector::evaluate_ap({{miss, hit}}, {gt}, 1, 0.5);
  t.check(fp_above.map == 0.5, "FP above TP gives " + fmt(fp_above.map, 17));
  const auto tp_only = fi::detector::evaluate_ap({{hit}}, {gt}, 1, 0.5);
  t.check(tp_only.map == 1.0, "single TP gives " + fmt(tp_only.map, 17));
  const auto tp_above = fi::detector::evaluate_ap({{hit, {{20, 20, 30, 30, 0}, 0, 0.1}}}, {gt}, 1, 0.5);
  t.check(tp_above.map == 1.0, "TP above FP gives " + fmt(tp_above.map, 17));
  const auto none = fi::detector::evaluate_ap({{}}, {gt}, 1, 0.5);
  t.check(none.map == 0.0, "no detections gives " + fmt(none.map, 17));

  double worst = 0.0;
  std::uniform_real_distribution<double> pos(0, 60), size(1, 40);
  for (int trial = 0; trial < 1000; ++trial) {
    const fi::geometry::Box a{pos(rng), pos(rng), 0, 0, 0};
    fi::geometry::Box anchor = a, box = a;
    anchor.x2 = a.x1 + size(rng);
    anchor.y2 = a.y1 + size(rng);
    box.x1 = pos(rng);
    box.y1 = pos(rng);
    box.x2 = box.x1 + size(rng);
    box.y2 = box.y1 + size(rng);
    const auto back = fi::detector::decode(fi::detector::encode(box, anchor), anchor);
    worst = std::max({worst, std::abs(back.x1 - box.x1), std::abs(back.y1 - box.y1), std::abs(back.x2 - box.x2),
                      std::abs(back.y2 - box.y2)});
  }
  t.check(worst <= 1e-9, "encode/decode abs error " + fmt(worst));
  return {t.ok(), t.ok() ? "1000 NMS trials, AP hand cases exact, round trip abs err " + fmt(worst, 2) : t.summary()};
}

// ---------------------------------------------------------------- benchmark

struct Benchmark {
  std::vector<std::optional<double>> baseline;
  std::map<double, std::vector<std::optional<double>>> by_psi;
  double variance_fraction = 0.0;
  std::size_t variance_channels = 0;
  double seconds = 0.0;
  std::string error;
};

std::string seeds_text(const std::vector<std::optional<double>>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ", ") + (x ? fmt(*x) : std::string("diverged"));
  return "[" + s + "]";
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing " + p.string());
  return json::parse(in);
}

// The teacher gets twice the student budget.
constexpr std::size_t kTeacherIterations = 3000;

Benchmark run_benchmark(const fs::path& work) {
  Benchmark b;
  const auto t0 = Clock::now();
  try {
    fs::remove_all(work);
    fi::cli::CommonOptions opts;
    opts.config = FI_BENCHMARK_CONFIG;
    const json cfg = fi::cli::resolve_config(opts);
    const auto seeds = cfg.at("analysis").at("seeds").get<std::vector<std::uint64_t>>();

    auto with_out = [&](const fs::path& out) {
      auto o = opts;
      o.out = work / out;
      return o;
    };
    std::cerr << "benchmark: generating data\n";
    fi::cli::cmd_generate_data(with_out("data"));
    std::cerr << "benchmark: training teacher\n";
    auto teacher_opts = with_out("teacher");
    teacher_opts.overrides.push_back("train.iterations=" + std::to_string(kTeacherIterations));
    fi::cli::cmd_train(teacher_opts, work / "data", false);
    const fs::path teacher = work / "teacher" / "checkpoint.json";
    std::cerr << "benchmark: teacher map " << read_json(work / "teacher" / "metrics.json").at("map") << "\n";
    for (auto seed : seeds) {
      auto o = with_out("baseline_" + std::to_string(seed));
      o.seed = seed;
      fi::cli::cmd_train(o, work / "data", true);
      b.baseline.push_back(read_json(o.out / "metrics.json").at("map").get<double>());
      std::cerr << "benchmark: baseline seed " << seed << " map " << *b.baseline.back() << "\n";
    }
    fi::cli::cmd_sweep_psi(with_out("sweep"), teacher, work / "data", {0.0, 0.5, 1.0}, seeds);
    const auto sweep = fi::analysis::sweep_result_from_json(read_json(work / "sweep" / "sweep.json"));
    for (const auto& p : sweep.points) b.by_psi[p.psi] = p.per_seed;
    fi::cli::cmd_analyze_variance(with_out("variance"), teacher, work / "data", 0.5);
    const auto var = read_json(work / "variance" / "metrics.json");
    b.variance_fraction = var.at("fraction_in_below_out").get<double>();
    b.variance_channels = var.at("channels").get<std::size_t>();
  } catch (const std::exception& e) {
    b.error = e.what();
  }
  b.seconds = seconds_since(t0);
  return b;
}

std::optional<double> mean_map(const std::vector<std::optional<double>>& v) {
  // A diverged seed makes the 3-seed mean undefined.
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (const auto& x : v) {
    if (!x) return std::nullopt;
    s += *x;
  }
  return s / static_cast<double>(v.size());
}

Outcome distill_gain(const Benchmark& b) {
  if (!b.error.empty()) return {false, "benchmark failed: " + b.error};
  const auto base = mean_map(b.baseline), im = mean_map(b.by_psi.at(0.5));
  if (!base || !im) return {false, "missing runs: baseline " + seeds_text(b.baseline) + ", psi=0.5 " + seeds_text(b.by_psi.at(0.5))};
  const double gain = *im - *base;
  const bool within_time = b.seconds < 30.0 * 60.0;
  std::string d = "imitated " + fmt(*im) + " vs plain " + fmt(*base) + " (gain " + fmt(100.0 * gain, 3) +
                  " points; need >= 2), benchmark " + fmt(b.seconds / 60.0, 3) + " min";
  if (!within_time) d += " (over 30 min)";
  return {gain >= 0.02 && within_time, d};
}

Outcome full_feature_harm(const Benchmark& b) {
  if (!b.error.empty()) return {false, "benchmark failed: " + b.error};
  const auto full = mean_map(b.by_psi.at(0.0)), fine = mean_map(b.by_psi.at(0.5));
  if (!full || !fine) return {false, "missing runs"};
  return {*full < *fine, "psi=0 " + fmt(*full) + " vs psi=0.5 " + fmt(*fine)};
}

Outcome psi_one_degeneracy(const Benchmark& b) {
  if (!b.error.empty()) return {false, "benchmark failed: " + b.error};
  const auto one = mean_map(b.by_psi.at(1.0)), base = mean_map(b.baseline);
  if (!one || !base) return {false, "missing runs"};
  const double gap = std::abs(*one - *base);
  return {gap <= 0.01, "psi=1 " + fmt(*one) + " vs plain " + fmt(*base) + " (|diff| " + fmt(100.0 * gap, 3) + " points)"};
}

Outcome variance_trend(const Benchmark& b) {
  if (!b.error.empty()) return {false, "benchmark failed: " + b.error};
  return {b.variance_fraction >= 0.7, fmt(100.0 * b.variance_fraction, 3) + "% of " +
                                          std::to_string(b.variance_channels) + " channels have var_in < var_out"};
}

// ---------------------------------------------------------------- determinism

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(FI_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Digest of every output file except the manifest, whose timestamps differ.
std::map<std::string, std::string> output_digests(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
    out[fs::relative(e.path(), dir).string()] = fi::file_digest(e.path());
  }
  return out;
}

Outcome determinism(const fs::path& work) {
  fs::remove_all(work);
  fs::create_directories(work);
  const json cfg = {
      {"dataset", {{"seed", 3}, {"num_images", 12}, {"image_size", 32}, {"min_size", 8}, {"max_size", 16}}},
      {"test_dataset", {{"seed", 4}, {"num_images", 6}}},
      {"detector", {{"backbone_widths", {8, 8, 16, 16}}}},
      {"student", {{"width_mult", 0.5}}},
      {"train", {{"iterations", 6}, {"batch_size", 2}, {"lr", 0.005}}},
      {"distill", {{"lambda", 0.01}, {"psi", 0.5}}},
      {"analysis", {{"psis", {0.0, 0.5, 1.0}}, {"seeds", {1, 2}}, {"variance_images", 4}}}};
  const fs::path config = work / "config.json";
  std::ofstream(config) << cfg.dump(2);
  const fs::path data = work / "data";
  if (run_cli("generate-data --config " + config.string() + " --out " + data.string(), work / "gen.log") != 0) {
    return {false, "generate-data failed, see " + (work / "gen.log").string()};
  }
  const std::string teacher = (work / "teacher_a" / "checkpoint.json").string();
  const std::string ann = (data / "train" / "annotations.jsonl").string();
  const std::vector<std::pair<std::string, std::string>> commands{
      {"generate-data", ""},
      {"train-teacher", "--data " + data.string()},
      {"train", "--data " + data.string()},
      {"distill", "--teacher " + teacher + " --data " + data.string()},
      {"sweep-psi", "--teacher " + teacher + " --data " + data.string()},
      {"compare-baselines", "--teacher " + teacher + " --data " + data.string()},
      {"analyze-variance", "--teacher " + teacher + " --data " + data.string()},
      {"visualize-mask", "--annotations " + ann + " --psi 0.5"},
  };
  if (run_cli("train-teacher --data " + data.string() + " --config " + config.string() + " --out " +
                  (work / "teacher_a").string(),
              work / "teacher.log") != 0) {
    return {false, "train-teacher failed"};
  }
  Tally t;
  std::size_t files = 0;
  for (const auto& [name, extra] : commands) {
    std::map<std::string, std::string> digests[2];
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = work / (name + "_" + std::to_string(rep));
      const int code = run_cli(name + " " + extra + " --config " + config.string() + " --out " + out.string(),
                               work / (name + ".log"));
      t.check(code == 0, name + " exited with " + std::to_string(code));
      if (code == 0) digests[rep] = output_digests(out);
    }
    t.check(!digests[0].empty() && digests[0] == digests[1], name + " outputs differ between reruns");
    files += digests[0].size();
  }
  return {t.ok(), t.ok() ? std::to_string(commands.size()) + " commands, " + std::to_string(files) +
                               " output files identical across reruns"
                         : t.summary()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fine-imitate acceptance suite"};
  std::string only;
  std::string work = (fs::temp_directory_path() / "fi_acceptance").string();
  app.add_option("--only", only, "comma-separated criterion numbers");
  app.add_option("--work", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);

  std::set<int> wanted;
  std::stringstream ss(only);
  for (std::string item; std::getline(ss, item, ',');) wanted.insert(std::stoi(item));
  auto want = [&](int n) { return wanted.empty() || wanted.count(n) > 0; };

  std::optional<Benchmark> bench;
  auto benchmark = [&]() -> const Benchmark& {
    if (!bench) bench = run_benchmark(fs::path(work) / "benchmark");
    return *bench;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"mask oracle equivalence", mask_oracles},
      {"mask endpoints and monotonicity", mask_endpoints},
      {"imitation loss correctness", imitation_loss_checks},
      {"numeric core", numeric_core},
      {"detector metrics", detector_metrics},
      {"distillation gain", [&] { return distill_gain(benchmark()); }},
      {"full-feature imitation harm", [&] { return full_feature_harm(benchmark()); }},
      {"psi=1 degeneracy", [&] { return psi_one_degeneracy(benchmark()); }},
      {"variance trend", [&] { return variance_trend(benchmark()); }},
      {"determinism", [&] { return determinism(fs::path(work) / "determinism"); }},
  };

  int failed = 0;
  for (std::size_t n = 0; n < criteria.size(); ++n) {
    const int id = static_cast<int>(n) + 1;
    if (!want(id)) continue;
    Outcome o;
    try {
      o = criteria[n].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << criteria[n].first << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
