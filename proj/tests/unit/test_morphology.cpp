#include <doctest.h>

#include <random>

#include "netseg/morphology.hpp"
#include "oracles.hpp"

using namespace netseg;

namespace {

Mask cube(Shape3 s, std::size_t lo, std::size_t hi) {
  Mask m(s);
  for (std::size_t i = lo; i < hi; ++i)
    for (std::size_t j = lo; j < hi; ++j)
      for (std::size_t k = lo; k < hi; ++k) m(i, j, k) = 1;
  return m;
}

Mask repeat_oracle(Mask m, int conn, int radius, bool dilation) {
  for (int r = 0; r < radius; ++r) m = dilation ? oracle::dilate(m, conn) : oracle::erode(m, conn);
  return m;
}

}  // namespace

TEST_CASE("erosion examples") {
  const auto se6 = StructuringElement::ball(6, 1);
  Mask one(Shape3{5, 5, 5});
  one(2, 2, 2) = 1;
  CHECK(oracle::count(erode(one, se6)) == 0);
  const Mask full(Shape3{5, 5, 5}, 1);
  // voxels outside the grid are background, so the border erodes away
  CHECK(erode(full, se6) == cube({5, 5, 5}, 1, 4));
  CHECK(oracle::count(erode(Mask(Shape3{3, 3, 3}), se6)) == 0);
}

TEST_CASE("dilation examples") {
  Mask one(Shape3{5, 5, 5});
  one(2, 2, 2) = 1;
  CHECK(oracle::count(dilate(one, StructuringElement::ball(6, 1))) == 7);
  CHECK(oracle::count(dilate(one, StructuringElement::ball(18, 1))) == 19);
  CHECK(oracle::count(dilate(one, StructuringElement::ball(26, 1))) == 27);
  CHECK(oracle::count(dilate(Mask(Shape3{3, 3, 3}), StructuringElement::ball(26, 1))) == 0);
}

TEST_CASE("opening and closing examples") {
  const auto se6 = StructuringElement::ball(6, 1);
  Mask one(Shape3{5, 5, 5});
  one(2, 2, 2) = 1;
  CHECK(oracle::count(open(one, se6)) == 0);
  Mask solid = cube({7, 7, 7}, 2, 5);
  solid(3, 3, 3) = 0;
  CHECK(close(solid, se6)(3, 3, 3) == 1);
}

TEST_CASE("ball operators match the neighbourhood oracle") {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 60; ++t) {
    const Mask m = oracle::random_mask(rng, oracle::random_shape(rng, 7), 0.5);
    for (int conn : {6, 18, 26})
      for (int r : {1, 2}) {
        const auto se = StructuringElement::ball(conn, r);
        CHECK(erode(m, se) == repeat_oracle(m, conn, r, false));
        CHECK(dilate(m, se) == repeat_oracle(m, conn, r, true));
      }
  }
}

TEST_CASE("explicit kernels") {
  // a 1x1x3 bar along w
  const auto bar = StructuringElement::kernel({1, 1, 3}, {1, 1, 1});
  Mask one(Shape3{3, 3, 5});
  one(1, 1, 2) = 1;
  const Mask d = dilate(one, bar);
  CHECK(oracle::count(d) == 3);
  CHECK(d(1, 1, 1) == 1);
  CHECK(d(1, 1, 3) == 1);
  CHECK_THROWS_AS(StructuringElement::kernel({1, 1, 3}, {1, 1, 0}), Error);
  CHECK_THROWS_AS(StructuringElement::kernel({1, 1, 2}, {1, 1}), Error);
  CHECK_THROWS_AS(StructuringElement::ball(8, 1), Error);
}

TEST_CASE("morphology laws on random masks") {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 100; ++t) {
    const Shape3 s = oracle::random_shape(rng, 8);
    const Mask a = oracle::random_mask(rng, s, 0.6);
    Mask b = a;  // b ⊇ a
    const Mask extra = oracle::random_mask(rng, s, 0.2);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] |= extra[i];
    for (int conn : {6, 26}) {
      const auto se = StructuringElement::ball(conn, 1);
      CHECK(oracle::subset(erode(a, se), a));
      CHECK(oracle::subset(a, dilate(a, se)));
      CHECK(oracle::subset(open(a, se), a));
      // outside voxels are background, so closing is extensive only for masks clear of the border
      Mask inner = a;
      for (std::size_t i = 0; i < s.d; ++i)
        for (std::size_t j = 0; j < s.h; ++j)
          for (std::size_t k = 0; k < s.w; ++k)
            if (i == 0 || j == 0 || k == 0 || i + 1 == s.d || j + 1 == s.h || k + 1 == s.w) inner(i, j, k) = 0;
      CHECK(oracle::subset(inner, close(inner, se)));
      CHECK(open(open(a, se), se) == open(a, se));
      CHECK(close(close(a, se), se) == close(a, se));
      CHECK(oracle::subset(erode(a, se), erode(b, se)));
      CHECK(oracle::subset(dilate(a, se), dilate(b, se)));
      CHECK(oracle::subset(open(a, se), open(b, se)));
      CHECK(oracle::subset(close(a, se), close(b, se)));
      // duality: erode(a) = not dilate(not a), away from the border
      const Mask lhs = erode(a, se);
      const Mask rhs = oracle::complement(dilate(oracle::complement(a), se));
      for (std::size_t i = 1; i + 1 < s.d; ++i)
        for (std::size_t j = 1; j + 1 < s.h; ++j)
          for (std::size_t k = 1; k + 1 < s.w; ++k) CHECK(lhs(i, j, k) == rhs(i, j, k));
    }
  }
}

TEST_CASE("small component removal") {
  Mask m(Shape3{6, 10, 10});
  m(0, 0, 0) = m(0, 0, 1) = m(0, 0, 2) = 1;  // 3 voxels
  for (std::size_t i = 2; i < 4; ++i)
    for (std::size_t j = 2; j < 7; ++j)
      for (std::size_t k = 2; k < 7; ++k) m(i, j, k) = 1;  // 50 voxels
  const Mask kept = remove_small_components(m, 10, 26);
  CHECK(oracle::count(kept) == 50);
  CHECK(kept(0, 0, 0) == 0);
  CHECK(remove_small_components(m, 1, 6) == m);
  CHECK(oracle::count(remove_small_components(Mask(Shape3{2, 2, 2}), 5, 6)) == 0);
  auto sizes = component_sizes(m, 26);
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes == std::vector<std::size_t>{3, 50});

  // diagonal neighbours join under 26- but not 6-connectivity
  Mask diag(Shape3{3, 3, 3});
  diag(0, 0, 0) = diag(1, 1, 1) = diag(2, 2, 2) = 1;
  CHECK(component_sizes(diag, 26).size() == 1);
  CHECK(component_sizes(diag, 18).size() == 3);
  CHECK(component_sizes(diag, 6).size() == 3);
}

TEST_CASE("filter sequences") {
  const auto def = default_net_filters();
  REQUIRE(def.size() == 3);
  CHECK(def[0].op == FilterOp::Open);
  CHECK(def[1].op == FilterOp::Close);
  CHECK(def[2].op == FilterOp::RemoveSmall);
  CHECK(def[2].min_voxels == 10);
  CHECK(def[2].connectivity == 26);
  CHECK(filters_from_json(filters_to_json(def)) == def);
  const auto parsed = filters_from_json(nlohmann::json::parse(R"([{"op": "dilate", "connectivity": 18, "radius": 2}])"));
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].op == FilterOp::Dilate);
  CHECK(parsed[0].radius == 2);
  CHECK_THROWS_AS(filters_from_json(nlohmann::json::parse(R"([{"op": "blur"}])")), Error);

  std::mt19937_64 rng(23);
  const Mask m = oracle::random_mask(rng, {6, 6, 6}, 0.5);
  const auto se = StructuringElement::ball(6, 1);
  CHECK(apply_filters(m, def) == remove_small_components(close(open(m, se), se), 10, 26));
  CHECK(apply_filters(m, {}) == m);
}
