#pragma once

// Random inputs and brute-force reference implementations shared by the unit and acceptance tests.
// The oracles deliberately avoid the library's algorithms: plain loops over voxels and pairs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "netseg/volume.hpp"

namespace oracle {

using netseg::Mask;
using netseg::Shape3;
using netseg::Spacing3;

inline Shape3 random_shape(std::mt19937_64& rng, std::size_t max_extent) {
  std::uniform_int_distribution<std::size_t> ext(1, max_extent);
  return {ext(rng), ext(rng), ext(rng)};
}

inline Mask random_mask(std::mt19937_64& rng, const Shape3& s, double density) {
  Mask m(s);
  std::bernoulli_distribution bit(density);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = bit(rng) ? 1 : 0;
  return m;
}

inline std::size_t count(const Mask& m) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.size(); ++i) n += m[i] != 0;
  return n;
}

inline double dice(const Mask& a, const Mask& b) {
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    na += a[i] != 0;
    nb += b[i] != 0;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

inline double iou(const Mask& a, const Mask& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

struct Point {
  double z, y, x;
};

inline std::vector<Point> points(const Mask& m, const Spacing3& sp) {
  std::vector<Point> p;
  const Shape3 s = m.shape();
  for (std::size_t i = 0; i < s.d; ++i)
    for (std::size_t j = 0; j < s.h; ++j)
      for (std::size_t k = 0; k < s.w; ++k)
        if (m(i, j, k)) p.push_back({i * sp.d, j * sp.h, k * sp.w});
  return p;
}

/// Distances from every point of a to its nearest point of b, all pairs.
inline std::vector<double> directed(const std::vector<Point>& a, const std::vector<Point>& b) {
  std::vector<double> out;
  out.reserve(a.size());
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) {
      const double dz = p.z - q.z, dy = p.y - q.y, dx = p.x - q.x;
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

/// Linear-interpolation percentile (numpy default).
inline double percentile(std::vector<double> v, double pct) {
  std::sort(v.begin(), v.end());
  const double pos = pct / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double hausdorff(const Mask& a, const Mask& b, const Spacing3& sp, double pct = 100.0) {
  const auto pa = points(a, sp), pb = points(b, sp);
  return std::max(percentile(directed(pa, pb), pct), percentile(directed(pb, pa), pct));
}

/// Offsets of a neighbourhood ball: |dz|+|dy|+|dx| <= 1 (6), <= 2 within the cube (18), or the cube (26).
inline std::vector<std::array<int, 3>> unit_ball(int connectivity) {
  std::vector<std::array<int, 3>> o;
  for (int a = -1; a <= 1; ++a)
    for (int b = -1; b <= 1; ++b)
      for (int c = -1; c <= 1; ++c) {
        const int l1 = std::abs(a) + std::abs(b) + std::abs(c);
        if ((connectivity == 6 && l1 <= 1) || (connectivity == 18 && l1 <= 2) || connectivity == 26)
          o.push_back({a, b, c});
      }
  return o;
}

/// Dilation by the unit ball, outside voxels are background.
inline Mask dilate(const Mask& m, int connectivity) {
  const Shape3 s = m.shape();
  Mask out(s);
  const auto ball = unit_ball(connectivity);
  for (std::size_t i = 0; i < s.d; ++i)
    for (std::size_t j = 0; j < s.h; ++j)
      for (std::size_t k = 0; k < s.w; ++k) {
        bool hit = false;
        for (const auto& o : ball) {
          const long z = long(i) + o[0], y = long(j) + o[1], x = long(k) + o[2];
          if (z < 0 || y < 0 || x < 0 || z >= long(s.d) || y >= long(s.h) || x >= long(s.w)) continue;
          if (m(z, y, x)) hit = true;
        }
        out(i, j, k) = hit;
      }
  return out;
}

inline Mask erode(const Mask& m, int connectivity) {
  const Shape3 s = m.shape();
  Mask out(s);
  const auto ball = unit_ball(connectivity);
  for (std::size_t i = 0; i < s.d; ++i)
    for (std::size_t j = 0; j < s.h; ++j)
      for (std::size_t k = 0; k < s.w; ++k) {
        bool all = true;
        for (const auto& o : ball) {
          const long z = long(i) + o[0], y = long(j) + o[1], x = long(k) + o[2];
          if (z < 0 || y < 0 || x < 0 || z >= long(s.d) || y >= long(s.h) || x >= long(s.w) || !m(z, y, x)) all = false;
        }
        out(i, j, k) = all;
      }
  return out;
}

inline bool subset(const Mask& a, const Mask& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] && !b[i]) return false;
  return true;
}

inline Mask complement(const Mask& m) {
  Mask out(m.shape());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = !m[i];
  return out;
}

/// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path = std::filesystem::temp_directory_path() / ("netseg_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace oracle
