#include <doctest.h>

#include <cmath>
#include <limits>

#include "fine_imitate/geometry.hpp"
#include "oracles.hpp"

using namespace fi::geometry;

TEST_CASE("iou documented cases") {
  const Box a{0, 0, 2, 2}, b{1, 1, 3, 3};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{5, 5, 6, 6}) == 0.0);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK(iou(a, b) == doctest::Approx(oracle::raster_iou(a, b, 16)).epsilon(1e-12));
}

TEST_CASE("iou matches a rasterised pixel count on integer boxes") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> c(0, 12);
  for (int trial = 0; trial < 300; ++trial) {
    auto draw = [&] {
      int x1 = c(rng), x2 = c(rng), y1 = c(rng), y2 = c(rng);
      if (x1 > x2) std::swap(x1, x2);
      if (y1 > y2) std::swap(y1, y2);
      return Box{double(x1), double(y1), double(x2 + 1), double(y2 + 1)};
    };
    const Box a = draw(), b = draw();
    CHECK(iou(a, b) == doctest::Approx(oracle::raster_iou(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("iou properties on random pairs") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-50, 50), e(0.1, 40);
  for (int trial = 0; trial < 1000; ++trial) {
    const double ax = u(rng), ay = u(rng), bx = u(rng), by = u(rng);
    const Box a{ax, ay, ax + e(rng), ay + e(rng)}, b{bx, by, bx + e(rng), by + e(rng)};
    const double ab = iou(a, b);
    CHECK(ab == iou(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(iou(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("degenerate boxes are rejected") {
  const Box ok{0, 0, 1, 1};
  CHECK_THROWS_AS(iou(Box{0, 0, 0, 1}, ok), GeometryError);
  CHECK_THROWS_AS(iou(ok, Box{2, 0, 1, 1}), GeometryError);
  CHECK_THROWS_AS(validate(Box{0, 0, std::numeric_limits<double>::infinity(), 1}), GeometryError);
  CHECK_THROWS_AS(validate(Box{0, std::nan(""), 1, 1}), GeometryError);
  CHECK(is_valid(ok));
}

TEST_CASE("anchor grid documented cases") {
  const auto g = build_anchor_grid(1, 1, 16, {16}, {1});
  REQUIRE(g.anchors.size() == 1);
  CHECK(g.anchors[0] == Box{0, 0, 16, 16});
  CHECK(g.anchors[0].center_x() == 8.0);
  CHECK(g.anchors[0].center_y() == 8.0);

  CHECK(build_anchor_grid(4, 3, 8, {8, 16, 32}, {0.5, 1, 2}).anchors.size() == 108);

  const auto tall = build_anchor_grid(1, 1, 16, {16}, {4});
  CHECK(tall.anchors[0].width() == doctest::Approx(8.0).epsilon(1e-15));
  CHECK(tall.anchors[0].height() == doctest::Approx(32.0).epsilon(1e-15));

  CHECK_THROWS_AS(build_anchor_grid(2, 2, 8, {}, {1}), GeometryError);
  CHECK_THROWS_AS(build_anchor_grid(2, 2, 8, {8}, {}), GeometryError);
}

TEST_CASE("anchor placement and ordering") {
  const auto g = build_anchor_grid(5, 3, 8, {10, 20}, {0.5, 2});
  CHECK(g.num_anchors_per_cell() == 4);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) {
        const Box& a = g.at(i, j, k);
        CHECK(a.center_x() == doctest::Approx((i + 0.5) * 8));
        CHECK(a.center_y() == doctest::Approx((j + 0.5) * 8));
        const Box want = oracle::anchor_box(i, j, g.scales[k / 2], g.ratios[k % 2], 8);
        CHECK(a.width() == doctest::Approx(want.width()).epsilon(1e-14));
        CHECK(a.height() == doctest::Approx(want.height()).epsilon(1e-14));
      }
}

TEST_CASE("iou map documented cases") {
  const auto g = build_anchor_grid(4, 4, 8, {8, 16, 24}, {1});
  const auto m = iou_map(g.at(2, 1, 1), g, 3);
  CHECK(m.values.dims() == std::vector<std::size_t>{4, 4, 3});
  CHECK(m.values.at(2, 1, 1) == 1.0);
  CHECK(m.max() == 1.0);
  CHECK(m.gt_index == 3);
  const auto far = iou_map(Box{500, 500, 510, 510}, g);
  for (double v : far.values.values()) CHECK(v == 0.0);
  CHECK(far.max() == 0.0);
}

TEST_CASE("iou map matches brute-force pairwise iou") {
  std::mt19937_64 rng(3);
  const auto g = build_anchor_grid(4, 4, 8, {8, 20, 30}, {1});
  std::uniform_real_distribution<double> u(0, 32), e(1, 20);
  for (int trial = 0; trial < 50; ++trial) {
    const double x = u(rng), y = u(rng);
    const Box gt{x, y, x + e(rng), y + e(rng)};
    const auto m = iou_map(gt, g);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t k = 0; k < 3; ++k) {
          const Box a = oracle::anchor_box(i, j, g.scales[k], 1.0, 8);
          CHECK(m.values.at(i, j, k) == doctest::Approx(oracle::pair_iou(gt, a)).epsilon(1e-12));
        }
  }
}
