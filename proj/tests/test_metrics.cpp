#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fine_imitate/detector.hpp"
#include "fine_imitate/metrics.hpp"
#include "oracles.hpp"

using namespace fi::detector;

namespace {

Detection det(double x1, double y1, double x2, double y2, int cls, double score) {
  return {{x1, y1, x2, y2, cls}, cls, score};
}

// Precision envelope integrated over recall steps, computed from scratch.
double oracle_ap(std::vector<std::pair<double, bool>> ranked, std::size_t n_gt) {
  std::stable_sort(ranked.begin(), ranked.end(), [](auto& a, auto& b) { return a.first > b.first; });
  std::vector<double> rec, prec;
  double tp = 0, fp = 0;
  for (auto& [s, hit] : ranked) {
    (hit ? tp : fp) += 1;
    rec.push_back(tp / n_gt);
    prec.push_back(tp / (tp + fp));
  }
  double ap = 0, prev_r = 0;
  for (std::size_t n = 0; n < rec.size(); ++n) {
    if (rec[n] > prev_r) {
      double best = 0;
      for (std::size_t m = n; m < prec.size(); ++m) best = std::max(best, prec[m]);
      ap += (rec[n] - prev_r) * best;
      prev_r = rec[n];
    }
  }
  return ap;
}

}  // namespace

TEST_CASE("ap documented cases") {
  const std::vector<std::vector<Box>> gts{{{0, 0, 10, 10, 0}}};
  const auto one = evaluate_ap({{det(0, 0, 10, 9, 0, 0.9)}}, gts, 1);
  CHECK(*one.per_class_ap[0] == 1.0);
  CHECK(one.map == 1.0);

  CHECK(*evaluate_ap({{}}, gts, 1).per_class_ap[0] == 0.0);

  const auto fp_first = evaluate_ap({{det(30, 30, 40, 40, 0, 0.9), det(0, 0, 10, 10, 0, 0.5)}}, gts, 1);
  CHECK(*fp_first.per_class_ap[0] == 0.5);
}

TEST_CASE("classes without gts are excluded from the mean") {
  const std::vector<std::vector<Box>> gts{{{0, 0, 10, 10, 0}}};
  const auto r = evaluate_ap({{det(0, 0, 10, 10, 0, 0.9), det(20, 20, 30, 30, 1, 0.8)}}, gts, 3);
  CHECK(*r.per_class_ap[0] == 1.0);
  CHECK_FALSE(r.per_class_ap[1].has_value());
  CHECK_FALSE(r.per_class_ap[2].has_value());
  CHECK(r.map == 1.0);
}

TEST_CASE("duplicate detections of one gt count once") {
  const std::vector<std::vector<Box>> gts{{{0, 0, 10, 10, 0}, {20, 0, 30, 10, 0}}};
  const auto r = evaluate_ap({{det(0, 0, 10, 10, 0, 0.9), det(0, 0, 10, 10, 0, 0.8), det(20, 0, 30, 10, 0, 0.7)}},
                             gts, 1);
  // TP, FP, TP: recall 0.5 at precision 1, recall 1 at precision 2/3.
  CHECK(*r.per_class_ap[0] == doctest::Approx(0.5 + 0.5 * 2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("average_precision envelope") {
  CHECK(average_precision({0.5, 0.5, 1.0}, {1.0, 0.5, 2.0 / 3.0}) == doctest::Approx(0.5 + 0.5 * 2.0 / 3.0));
  CHECK(average_precision({}, {}) == 0.0);
  CHECK_THROWS(average_precision({0.5, 0.4}, {1.0, 1.0}));
}

TEST_CASE("ap on separated random scenes matches an independent oracle") {
  // Gts sit on a coarse lattice so each detection overlaps at most one gt.
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> sc(0, 1), jit(-1, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<Box>> gts(3);
    std::vector<std::vector<Detection>> dets(3);
    std::vector<std::pair<double, bool>> ranked;
    std::size_t n_gt = 0;
    for (std::size_t img = 0; img < 3; ++img) {
      for (int cell = 0; cell < 4; ++cell) {
        const double x = 40.0 * cell;
        if (rng() % 3 != 0) {
          gts[img].push_back({x, 0, x + 20, 20, 0});
          ++n_gt;
          if (rng() % 2 == 0) {
            const double s = sc(rng);
            dets[img].push_back(det(x + jit(rng), jit(rng), x + 20, 20, 0, s));
            ranked.push_back({s, true});
          }
        } else if (rng() % 2 == 0) {
          const double s = sc(rng);
          dets[img].push_back(det(x, 0, x + 20, 20, 0, s));
          ranked.push_back({s, false});
        }
      }
    }
    if (n_gt == 0) continue;
    const auto r = evaluate_ap(dets, gts, 1);
    CHECK(*r.per_class_ap[0] == doctest::Approx(oracle_ap(ranked, n_gt)).epsilon(1e-12));
  }
}

TEST_CASE("ap depends only on score ordering") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 60), e(5, 20), s(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<Box>> gts(2);
    std::vector<std::vector<Detection>> dets(2);
    for (std::size_t img = 0; img < 2; ++img) {
      for (int n = 0; n < 3; ++n) {
        const double x = u(rng), y = u(rng);
        gts[img].push_back({x, y, x + e(rng), y + e(rng), static_cast<int>(rng() % 2)});
      }
      for (int n = 0; n < 6; ++n) {
        const double x = u(rng), y = u(rng);
        dets[img].push_back(det(x, y, x + e(rng), y + e(rng), static_cast<int>(rng() % 2), s(rng)));
      }
      for (const auto& g : gts[img]) dets[img].push_back(det(g.x1, g.y1, g.x2, g.y2, g.class_id, s(rng)));
    }
    auto scaled = dets;
    for (auto& v : scaled)
      for (auto& d : v) d.score = std::exp(3.0 * d.score) - 7.0;
    const auto a = evaluate_ap(dets, gts, 2), b = evaluate_ap(scaled, gts, 2);
    CHECK(a.map == b.map);
  }
}
