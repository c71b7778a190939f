#include "fine_imitate/analysis.hpp"

#include <algorithm>
#include <functional>
#include <iomanip>
#include <sstream>
#include <thread>

#include "fine_imitate/config.hpp"
#include "fine_imitate/util.hpp"

namespace fi::analysis {

using nlohmann::json;

std::optional<double> mean_of(const std::vector<std::optional<double>>& values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

namespace {

void check_setup(const ExperimentSetup& s) {
  if (!s.teacher || !s.train_data || !s.test_data) throw std::invalid_argument("analysis: incomplete experiment setup");
  if (s.train_data->empty() || s.test_data->empty()) throw std::invalid_argument("analysis: empty dataset");
}

// Runs jobs[0..n) on up to `threads` workers; results land in job order.
void run_jobs(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& job) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) job(i);
    });
  }
}

trainer::TrainConfig run_config(const ExperimentSetup& s, std::uint64_t seed, std::optional<imitation::DistillConfig> d) {
  trainer::TrainConfig tc = s.train;
  tc.seed = seed;
  tc.distill = d;
  return tc;
}

std::optional<double> run_student(const ExperimentSetup& s, const trainer::TrainConfig& tc) {
  try {
    auto r = trainer::distill_train(*s.teacher, s.student_cfg, tc, *s.train_data, *s.test_data, s.eval);
    return r.record.evals.back().map;
  } catch (const trainer::TrainingDiverged& e) {
    log_warn(std::string("analysis: run recorded as missing: ") + e.what());
    return std::nullopt;
  }
}

// Distillation settings shared by every run; callers override the mask.
imitation::DistillConfig with_mask(const ExperimentSetup& s, double psi, imitation::MaskMode mode) {
  imitation::DistillConfig d = s.train.distill.value_or(imitation::DistillConfig{});
  d.psi = psi;
  d.mask_mode = mode;
  return d;
}

json setup_snapshot(const ExperimentSetup& s) {
  return {{"student", fi::to_json(s.student_cfg)},
          {"teacher", fi::to_json(s.teacher->config)},
          {"train", fi::to_json(s.train)},
          {"eval", fi::to_json(s.eval)},
          {"train_images", s.train_data->size()},
          {"test_images", s.test_data->size()}};
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string{}; }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::vector<std::optional<double>> opt_vector(const json& j) {
  std::vector<std::optional<double>> out;
  for (const auto& v : j) out.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
  return out;
}

}  // namespace

SweepResult psi_sweep(const std::vector<double>& psis, const std::vector<std::uint64_t>& seeds,
                      const ExperimentSetup& setup) {
  check_setup(setup);
  if (seeds.empty()) throw std::invalid_argument("psi_sweep: need at least one seed");
  for (std::size_t i = 0; i < psis.size(); ++i) {
    mask::validate(mask::MaskConfig{psis[i]});
    if (i && !(psis[i] > psis[i - 1])) throw std::invalid_argument("psi_sweep: psi values must be strictly increasing");
  }
  SweepResult result{seeds, {}, setup_snapshot(setup)};
  result.config["psis"] = psis;
  result.config["seeds"] = seeds;
  for (double psi : psis) result.points.push_back({psi, std::vector<std::optional<double>>(seeds.size()), {}});

  run_jobs(psis.size() * seeds.size(), setup.run_threads, [&](std::size_t job) {
    const std::size_t p = job / seeds.size(), s = job % seeds.size();
    const auto d = with_mask(setup, psis[p], imitation::MaskMode::adaptive);
    result.points[p].per_seed[s] = run_student(setup, run_config(setup, seeds[s], d));
  });
  for (auto& pt : result.points) pt.mean_map = mean_of(pt.per_seed);
  return result;
}

json to_json(const SweepResult& r) {
  json points = json::array();
  for (const auto& p : r.points) {
    json per_seed = json::array();
    for (const auto& v : p.per_seed) per_seed.push_back(opt_json(v));
    points.push_back({{"psi", p.psi}, {"mean_map", opt_json(p.mean_map)}, {"per_seed", per_seed}});
  }
  return {{"seeds", r.seeds}, {"points", points}, {"config", r.config}};
}

SweepResult sweep_result_from_json(const json& j) {
  SweepResult r;
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  for (const auto& p : j.at("points")) {
    SweepPoint pt;
    pt.psi = p.at("psi").get<double>();
    pt.per_seed = opt_vector(p.at("per_seed"));
    pt.mean_map = p.at("mean_map").is_null() ? std::nullopt : std::optional<double>(p.at("mean_map").get<double>());
    r.points.push_back(std::move(pt));
  }
  r.config = j.at("config");
  return r;
}

std::string sweep_to_csv(const SweepResult& r) {
  std::ostringstream os;
  os << "psi,mean_map";
  for (auto s : r.seeds) os << ",map_seed_" << s;
  os << '\n';
  for (const auto& p : r.points) {
    os << fmt(p.psi) << ',' << fmt(p.mean_map);
    for (const auto& v : p.per_seed) os << ',' << fmt(v);
    os << '\n';
  }
  return os.str();
}

VarianceReport channel_variances(const std::vector<numerics::Tensor>& features,
                                 const std::vector<mask::ImitationMask>& masks) {
  if (features.size() != masks.size()) throw std::invalid_argument("channel_variances: features and masks differ in count");
  VarianceReport report;
  report.num_images = features.size();
  if (features.empty()) return report;
  const std::size_t channels = features.front().dim(2);
  for (std::size_t n = 0; n < features.size(); ++n) {
    const auto& f = features[n];
    if (f.rank() != 3 || f.dim(2) != channels || masks[n].width() != f.dim(0) || masks[n].height() != f.dim(1)) {
      throw numerics::ShapeError("channel_variances: feature " + f.shape_string() + " and mask disagree");
    }
    report.in_locations += masks[n].n_positive();
    report.out_locations += f.dim(0) * f.dim(1) - masks[n].n_positive();
  }

  // pass 1: means; pass 2: squared deviations.
  std::vector<double> sum_in(channels, 0.0), sum_out(channels, 0.0);
  for (std::size_t n = 0; n < features.size(); ++n) {
    const auto& f = features[n];
    for (std::size_t i = 0; i < f.dim(0); ++i) {
      for (std::size_t j = 0; j < f.dim(1); ++j) {
        auto& sums = masks[n].at(i, j) ? sum_in : sum_out;
        for (std::size_t c = 0; c < channels; ++c) sums[c] += f.at(i, j, c);
      }
    }
  }
  const auto n_in = static_cast<double>(report.in_locations), n_out = static_cast<double>(report.out_locations);
  std::vector<double> mean_in(channels), mean_out(channels), sq_in(channels, 0.0), sq_out(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    mean_in[c] = n_in > 0 ? sum_in[c] / n_in : 0.0;
    mean_out[c] = n_out > 0 ? sum_out[c] / n_out : 0.0;
  }
  for (std::size_t n = 0; n < features.size(); ++n) {
    const auto& f = features[n];
    for (std::size_t i = 0; i < f.dim(0); ++i) {
      for (std::size_t j = 0; j < f.dim(1); ++j) {
        const bool in = masks[n].at(i, j);
        for (std::size_t c = 0; c < channels; ++c) {
          const double d = f.at(i, j, c) - (in ? mean_in[c] : mean_out[c]);
          (in ? sq_in : sq_out)[c] += d * d;
        }
      }
    }
  }
  std::size_t comparable = 0, below = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    ChannelVariance cv;
    if (n_in > 0) cv.var_in = sq_in[c] / n_in;
    if (n_out > 0) cv.var_out = sq_out[c] / n_out;
    if (cv.var_in && cv.var_out) {
      ++comparable;
      if (*cv.var_in < *cv.var_out) ++below;
    }
    report.channels.push_back(cv);
  }
  report.fraction_in_below_out = comparable ? static_cast<double>(below) / static_cast<double>(comparable) : 0.0;
  return report;
}

VarianceReport per_channel_variance(const Teacher& teacher, const std::vector<data::Sample>& images, double psi) {
  if (images.empty()) throw std::invalid_argument("per_channel_variance: no images");
  std::vector<numerics::Tensor> features;
  std::vector<mask::ImitationMask> masks;
  for (const auto& s : images) {
    auto fwd = detector::forward(s.image, teacher.config, teacher.params);
    const auto grid = detector::make_anchor_grid(teacher.config, s.image.dim(0), s.image.dim(1));
    masks.push_back(mask::estimate_mask(s.gts, grid, mask::MaskConfig{psi}).mask);
    features.push_back(std::move(fwd.activations.back()));
  }
  return channel_variances(features, masks);
}

json to_json(const VarianceReport& r) {
  json channels = json::array();
  for (std::size_t c = 0; c < r.channels.size(); ++c) {
    channels.push_back({{"channel", c}, {"var_in", opt_json(r.channels[c].var_in)}, {"var_out", opt_json(r.channels[c].var_out)}});
  }
  return {{"channels", channels},
          {"fraction_in_below_out", r.fraction_in_below_out},
          {"num_images", r.num_images},
          {"in_locations", r.in_locations},
          {"out_locations", r.out_locations}};
}

std::string variance_to_csv(const VarianceReport& r) {
  std::ostringstream os;
  os << "channel,var_in,var_out,in_below_out\n";
  for (std::size_t c = 0; c < r.channels.size(); ++c) {
    const auto& cv = r.channels[c];
    os << c << ',' << fmt(cv.var_in) << ',' << fmt(cv.var_out) << ','
       << (cv.var_in && cv.var_out ? (*cv.var_in < *cv.var_out ? "1" : "0") : "") << '\n';
  }
  return os.str();
}

ComparisonTable baseline_comparison(const std::vector<std::uint64_t>& seeds, const ExperimentSetup& setup,
                                    double fine_grained_psi) {
  check_setup(setup);
  if (seeds.empty()) throw std::invalid_argument("baseline_comparison: need at least one seed");
  using imitation::MaskMode;
  const std::vector<std::pair<std::string, std::optional<imitation::DistillConfig>>> variants{
      {"none", std::nullopt},
      {"fine_grained", with_mask(setup, fine_grained_psi, MaskMode::adaptive)},
      {"full_feature", with_mask(setup, 0.0, MaskMode::adaptive)},
      {"gt_projection", with_mask(setup, fine_grained_psi, MaskMode::gt_projection)},
  };
  ComparisonTable table{seeds, {}, setup_snapshot(setup)};
  table.config["seeds"] = seeds;
  const json reference = fi::to_json(run_config(setup, seeds.front(), std::nullopt));
  for (const auto& [name, d] : variants) {
    ComparisonRow row{name, std::vector<std::optional<double>>(seeds.size()), {}, {}};
    const json cfg = fi::to_json(run_config(setup, seeds.front(), d));
    for (const auto& [key, value] : cfg.items()) {
      if (reference.at(key) != value) row.config_diff.push_back(key);
    }
    table.rows.push_back(std::move(row));
  }
  run_jobs(variants.size() * seeds.size(), setup.run_threads, [&](std::size_t job) {
    const std::size_t v = job / seeds.size(), s = job % seeds.size();
    table.rows[v].per_seed[s] = run_student(setup, run_config(setup, seeds[s], variants[v].second));
  });
  for (auto& row : table.rows) row.mean_map = mean_of(row.per_seed);
  return table;
}

json to_json(const ComparisonTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json per_seed = json::array();
    for (const auto& v : r.per_seed) per_seed.push_back(opt_json(v));
    rows.push_back({{"variant", r.variant}, {"mean_map", opt_json(r.mean_map)}, {"per_seed", per_seed},
                    {"config_diff", r.config_diff}});
  }
  return {{"seeds", t.seeds}, {"rows", rows}, {"config", t.config}};
}

std::string comparison_to_csv(const ComparisonTable& t) {
  std::ostringstream os;
  os << "variant,mean_map";
  for (auto s : t.seeds) os << ",map_seed_" << s;
  os << '\n';
  for (const auto& r : t.rows) {
    os << r.variant << ',' << fmt(r.mean_map);
    for (const auto& v : r.per_seed) os << ',' << fmt(v);
    os << '\n';
  }
  return os.str();
}

}  // namespace fi::analysis
