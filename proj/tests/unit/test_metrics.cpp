#include <doctest.h>

#include <cmath>
#include <random>

#include "netseg/metrics.hpp"
#include "oracles.hpp"

using namespace netseg;

namespace {

Mask block(Shape3 s, Shape3 lo, Shape3 hi) {
  Mask m(s);
  for (std::size_t i = lo.d; i < hi.d; ++i)
    for (std::size_t j = lo.h; j < hi.h; ++j)
      for (std::size_t k = lo.w; k < hi.w; ++k) m(i, j, k) = 1;
  return m;
}

std::vector<double> as_double(const Mask& m) { return {m.data().begin(), m.data().end()}; }

}  // namespace

TEST_CASE("overlap examples") {
  const Shape3 s{4, 4, 4};
  const Mask a = block(s, {0, 0, 0}, {2, 2, 2});
  const Mask b = block(s, {1, 0, 0}, {3, 2, 2});  // shares 4 voxels
  CHECK(dice(a, a) == 1.0);
  CHECK(iou(a, a) == 1.0);
  CHECK(dice(a, b) == 0.5);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
  const Mask far = block(s, {2, 2, 2}, {4, 4, 4});
  CHECK(dice(a, far) == 0.0);
  CHECK(iou(a, far) == 0.0);
  CHECK(dice(Mask(s), Mask(s)) == 1.0);
  CHECK(iou(Mask(s), Mask(s)) == 1.0);
  CHECK_THROWS_AS(dice(a, Mask(Shape3{4, 4, 3})), Error);
}

TEST_CASE("hausdorff examples") {
  const Shape3 s{4, 5, 1};
  Mask a(s), b(s);
  a(0, 0, 0) = 1;
  b(3, 4, 0) = 1;
  CHECK(hausdorff(a, b, {}) == 5.0);
  CHECK(hausdorff(a, a, {}) == 0.0);
  CHECK(hausdorff(a, b, {2.0, 1.0, 1.0}) == doctest::Approx(std::sqrt(36.0 + 16.0)));
  CHECK_THROWS_AS(hausdorff(a, Mask(s), {}), Error);

  // a ⊂ b: the distance comes from b's far voxels only
  Mask big = block({6, 6, 6}, {0, 0, 0}, {6, 6, 6});
  Mask corner(Shape3{6, 6, 6});
  corner(0, 0, 0) = 1;
  CHECK(hausdorff(corner, big, {}) == doctest::Approx(std::sqrt(75.0)));
}

TEST_CASE("metrics agree with brute force on random pairs") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> dens(0.05, 0.9);
  for (int t = 0; t < 200; ++t) {
    const Shape3 s = oracle::random_shape(rng, 8);
    const Mask a = oracle::random_mask(rng, s, dens(rng));
    const Mask b = oracle::random_mask(rng, s, dens(rng));
    CHECK(dice(a, b) == oracle::dice(a, b));
    CHECK(iou(a, b) == oracle::iou(a, b));
    CHECK(dice(a, b) == dice(b, a));
    CHECK(iou(a, b) <= dice(a, b));
    const double d = dice(a, b);
    CHECK(iou(a, b) == doctest::Approx(d / (2.0 - d)).epsilon(1e-12));
    if (oracle::count(a) && oracle::count(b)) {
      const Spacing3 sp{1.0 + (t % 3) * 0.5, 1.0, 0.75};
      CHECK(std::abs(hausdorff(a, b, sp) - oracle::hausdorff(a, b, sp)) < 1e-12);
      CHECK(std::abs(hausdorff(a, b, sp, 95.0) - oracle::hausdorff(a, b, sp, 95.0)) < 1e-12);
      CHECK(hausdorff(a, b, sp) == hausdorff(b, a, sp));
    }
  }
}

TEST_CASE("distance transform matches brute force") {
  std::mt19937_64 rng(32);
  for (int t = 0; t < 30; ++t) {
    const Shape3 s = oracle::random_shape(rng, 7);
    const Mask m = oracle::random_mask(rng, s, 0.2);
    if (!oracle::count(m)) continue;
    const Spacing3 sp{1.5, 1.0, 2.0};
    const auto dt = squared_distance_transform(m, sp);
    const auto pts = oracle::points(m, sp);
    for (std::size_t i = 0; i < s.d; ++i)
      for (std::size_t j = 0; j < s.h; ++j)
        for (std::size_t k = 0; k < s.w; ++k) {
          double best = 1e300;
          for (const auto& p : pts) {
            const double dz = i * sp.d - p.z, dy = j * sp.h - p.y, dx = k * sp.w - p.x;
            best = std::min(best, dz * dz + dy * dy + dx * dx);
          }
          CHECK(dt[m.index(i, j, k)] == doctest::Approx(best).epsilon(1e-12));
        }
  }
}

TEST_CASE("soft dice loss examples") {
  const Shape3 s{4, 4, 4};
  const Mask a = block(s, {0, 0, 0}, {2, 2, 2});
  const Mask b = block(s, {1, 0, 0}, {3, 2, 2});
  const auto ga = as_double(a);
  CHECK(soft_dice_loss({ga}, {ga}, 1e-12).loss == doctest::Approx(0.0));
  std::vector<double> inv(ga.size());
  for (std::size_t i = 0; i < ga.size(); ++i) inv[i] = 1.0 - ga[i];
  CHECK(soft_dice_loss({inv}, {ga}, 1e-12).loss == doctest::Approx(1.0));
  CHECK(soft_dice_loss({as_double(b)}, {ga}, 0.0).loss == doctest::Approx(0.5));
  // mean over classes
  CHECK(soft_dice_loss({ga, as_double(b)}, {ga, ga}, 0.0).loss == doctest::Approx(0.25));
}

TEST_CASE("soft dice gradient matches finite differences") {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 40;
  std::vector<std::vector<double>> p(2, std::vector<double>(n)), g(2, std::vector<double>(n));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < n; ++i) {
      p[c][i] = u(rng);
      g[c][i] = u(rng) > 0.5;
    }
  const auto r = soft_dice_loss(p, g, 1.0);
  const double h = 1e-5;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < n; ++i) {
      auto pp = p, pm = p;
      pp[c][i] += h;
      pm[c][i] -= h;
      const double fd = (soft_dice_loss(pp, g, 1.0, false).loss - soft_dice_loss(pm, g, 1.0, false).loss) / (2 * h);
      const double an = r.grad[c][i];
      CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}) < 1e-5);
    }
}

TEST_CASE("thresholding") {
  Grid<float> f(Shape3{1, 1, 3}, std::vector<float>{0.9f, 0.1f, 0.5f});
  const Mask m = threshold(f, 0.5);
  CHECK(m[0] == 1);
  CHECK(m[1] == 0);
  CHECK(m[2] == 1);
  CHECK(oracle::count(threshold(Grid<float>(Shape3{2, 2, 2}, 0.9f))) == 8);
  CHECK(oracle::count(threshold(Grid<float>(Shape3{2, 2, 2}, 0.1f))) == 0);
}

TEST_CASE("segment evaluation report") {
  LabelVolume gt(Shape3{4, 4, 4}, Schema::Unified4Label);
  gt(1, 1, 1) = 4;
  gt(1, 1, 2) = 3;
  gt(1, 2, 1) = 1;
  gt(2, 1, 1) = 2;
  const auto masks = compose_segments(gt);
  const auto r = evaluate_segments(masks, masks, gt.spacing(), "x");
  for (const auto& [seg, sc] : r.per_segment) {
    CHECK(sc.dice == 1.0);
    CHECK(sc.iou == 1.0);
    REQUIRE(sc.hausdorff_mm.has_value());
    CHECK(*sc.hausdorff_mm == 0.0);
  }
  CHECK(r.mean_dice() == 1.0);
  const std::string csv = to_csv({r});
  CHECK(csv.rfind("record_id,segment,dice,iou,hd,hd95\n", 0) == 0);
  CHECK(csv.find("x,WT,1,1,0,0") != std::string::npos);

  // empty prediction: dice 0, no distance
  SegmentMaskSet empty = masks;
  for (auto& [s, m] : empty.masks) m = Mask(m.shape());
  const auto e = evaluate_segments(empty, masks, gt.spacing());
  CHECK(e.per_segment.at(Segment::ET).dice == 0.0);
  CHECK_FALSE(e.per_segment.at(Segment::ET).hausdorff_mm.has_value());

  SegmentMaskSet up = masks;
  for (auto& [s, m] : up.masks) m = upscale_repeat(m, 2);
  up.resolution_factor = 2;
  CHECK_THROWS_AS(evaluate_segments(up, masks, gt.spacing()), Error);
}

TEST_CASE("compensated sum") {
  CompensatedSum s;
  s.add(1e16);
  for (int i = 0; i < 1000; ++i) s.add(1.0);
  s.add(-1e16);
  CHECK(s.value() == 1000.0);
}
