#include "netseg/morphology.hpp"

#include <algorithm>
#include <cstdlib>

namespace netseg {

namespace {

std::vector<std::array<int, 3>> neighbourhood(int connectivity) {
  std::vector<std::array<int, 3>> out;
  for (int a = -1; a <= 1; ++a)
    for (int b = -1; b <= 1; ++b)
      for (int c = -1; c <= 1; ++c) {
        const int l1 = std::abs(a) + std::abs(b) + std::abs(c);
        if ((connectivity == 6 && l1 <= 1) || (connectivity == 18 && l1 <= 2) || connectivity == 26) out.push_back({a, b, c});
      }
  return out;
}

void check_connectivity(int c) {
  if (c != 6 && c != 18 && c != 26)
    throw Error(ErrorCode::InvalidArgument, "connectivity must be 6, 18 or 26, got " + std::to_string(c));
}

bool inside(const Shape3& s, long i, long j, long k) {
  return i >= 0 && j >= 0 && k >= 0 && i < static_cast<long>(s.d) && j < static_cast<long>(s.h) && k < static_cast<long>(s.w);
}

Mask erode_once(const Mask& in, const std::vector<std::array<int, 3>>& offs) {
  const Shape3 s = in.shape();
  Mask out(s, 0, in.spacing());
  for (std::size_t i = 0; i < s.d; ++i)
    for (std::size_t j = 0; j < s.h; ++j)
      for (std::size_t k = 0; k < s.w; ++k) {
        if (!in(i, j, k)) continue;
        bool keep = true;
        for (const auto& o : offs) {
          const long a = static_cast<long>(i) + o[0], b = static_cast<long>(j) + o[1], c = static_cast<long>(k) + o[2];
          if (!inside(s, a, b, c) || !in(a, b, c)) {
            keep = false;
            break;
          }
        }
        out(i, j, k) = keep ? 1 : 0;
      }
  return out;
}

Mask dilate_once(const Mask& in, const std::vector<std::array<int, 3>>& offs) {
  const Shape3 s = in.shape();
  Mask out(s, 0, in.spacing());
  for (std::size_t i = 0; i < s.d; ++i)
    for (std::size_t j = 0; j < s.h; ++j)
      for (std::size_t k = 0; k < s.w; ++k) {
        if (!in(i, j, k)) continue;
        // the element is symmetric, so scattering by +o equals gathering by -o
        for (const auto& o : offs) {
          const long a = static_cast<long>(i) + o[0], b = static_cast<long>(j) + o[1], c = static_cast<long>(k) + o[2];
          if (inside(s, a, b, c)) out(a, b, c) = 1;
        }
      }
  return out;
}

}  // namespace

StructuringElement StructuringElement::ball(int connectivity, int radius) {
  check_connectivity(connectivity);
  if (radius < 1) throw Error(ErrorCode::InvalidArgument, "structuring element radius must be >= 1");
  StructuringElement se;
  se.connectivity_ = connectivity;
  se.radius_ = radius;
  return se;
}

StructuringElement StructuringElement::kernel(Shape3 extent, std::vector<std::uint8_t> values) {
  if (extent.d % 2 == 0 || extent.h % 2 == 0 || extent.w % 2 == 0)
    throw Error(ErrorCode::InvalidArgument, "kernel extents must be odd, got " + to_string(extent));
  const Mask k(extent, std::move(values));
  StructuringElement se;
  se.connectivity_ = 0;
  se.radius_ = static_cast<int>(std::max({extent.d, extent.h, extent.w}) / 2);
  const long cd = static_cast<long>(extent.d / 2), ch = static_cast<long>(extent.h / 2), cw = static_cast<long>(extent.w / 2);
  for (std::size_t i = 0; i < extent.d; ++i)
    for (std::size_t j = 0; j < extent.h; ++j)
      for (std::size_t l = 0; l < extent.w; ++l) {
        const bool v = k(i, j, l) != 0;
        if (v != (k(extent.d - 1 - i, extent.h - 1 - j, extent.w - 1 - l) != 0))
          throw Error(ErrorCode::InvalidArgument, "structuring element must be symmetric about its centre");
        if (v) se.kernel_offsets_.push_back({static_cast<int>(i - cd), static_cast<int>(j - ch), static_cast<int>(l - cw)});
      }
  if (se.kernel_offsets_.empty()) throw Error(ErrorCode::InvalidArgument, "structuring element is empty");
  return se;
}

std::vector<std::array<int, 3>> StructuringElement::offsets() const {
  if (!is_ball()) return kernel_offsets_;
  // r-fold Minkowski sum of the unit neighbourhood
  const auto unit = neighbourhood(connectivity_);
  std::vector<std::array<int, 3>> acc{{0, 0, 0}};
  for (int r = 0; r < radius_; ++r) {
    std::vector<std::array<int, 3>> next;
    for (const auto& a : acc)
      for (const auto& u : unit) next.push_back({a[0] + u[0], a[1] + u[1], a[2] + u[2]});
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    acc = std::move(next);
  }
  return acc;
}

Mask erode(const Mask& mask, const StructuringElement& se) {
  if (!se.is_ball()) return erode_once(mask, se.offsets());
  const auto unit = neighbourhood(se.connectivity());
  Mask out = mask;
  for (int r = 0; r < se.radius(); ++r) out = erode_once(out, unit);
  return out;
}

Mask dilate(const Mask& mask, const StructuringElement& se) {
  if (!se.is_ball()) return dilate_once(mask, se.offsets());
  const auto unit = neighbourhood(se.connectivity());
  Mask out = mask;
  for (int r = 0; r < se.radius(); ++r) out = dilate_once(out, unit);
  return out;
}

Mask open(const Mask& mask, const StructuringElement& se) { return dilate(erode(mask, se), se); }

Mask close(const Mask& mask, const StructuringElement& se) { return erode(dilate(mask, se), se); }

namespace {

/// Component id per voxel (0 = background) plus the size of every component.
std::vector<std::size_t> label_components(const Mask& mask, int connectivity, std::vector<std::uint32_t>& ids) {
  check_connectivity(connectivity);
  auto offs = neighbourhood(connectivity);
  offs.erase(std::remove(offs.begin(), offs.end(), std::array<int, 3>{0, 0, 0}), offs.end());
  const Shape3 s = mask.shape();
  ids.assign(mask.size(), 0);
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < mask.size(); ++seed) {
    if (!mask[seed] || ids[seed]) continue;
    const auto id = static_cast<std::uint32_t>(sizes.size() + 1);
    std::size_t count = 0;
    ids[seed] = id;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t n = stack.back();
      stack.pop_back();
      ++count;
      const long i = static_cast<long>(n / (s.h * s.w)), j = static_cast<long>((n / s.w) % s.h), k = static_cast<long>(n % s.w);
      for (const auto& o : offs) {
        const long a = i + o[0], b = j + o[1], c = k + o[2];
        if (!inside(s, a, b, c)) continue;
        const std::size_t m = mask.index(a, b, c);
        if (mask[m] && !ids[m]) {
          ids[m] = id;
          stack.push_back(m);
        }
      }
    }
    sizes.push_back(count);
  }
  return sizes;
}

}  // namespace

std::vector<std::size_t> component_sizes(const Mask& mask, int connectivity) {
  std::vector<std::uint32_t> ids;
  return label_components(mask, connectivity, ids);
}

Mask remove_small_components(const Mask& mask, std::size_t min_voxels, int connectivity) {
  std::vector<std::uint32_t> ids;
  const auto sizes = label_components(mask, connectivity, ids);
  Mask out(mask.shape(), 0, mask.spacing());
  for (std::size_t n = 0; n < mask.size(); ++n)
    if (ids[n] && sizes[ids[n] - 1] >= min_voxels) out[n] = 1;
  return out;
}

FilterSequence default_net_filters() {
  return {{FilterOp::Open, 6, 1, 0}, {FilterOp::Close, 6, 1, 0}, {FilterOp::RemoveSmall, 26, 1, 10}};
}

Mask apply_filters(const Mask& mask, const FilterSequence& steps) {
  Mask m = mask;
  for (const auto& st : steps) {
    switch (st.op) {
      case FilterOp::Erode: m = erode(m, StructuringElement::ball(st.connectivity, st.radius)); break;
      case FilterOp::Dilate: m = dilate(m, StructuringElement::ball(st.connectivity, st.radius)); break;
      case FilterOp::Open: m = open(m, StructuringElement::ball(st.connectivity, st.radius)); break;
      case FilterOp::Close: m = close(m, StructuringElement::ball(st.connectivity, st.radius)); break;
      case FilterOp::RemoveSmall: m = remove_small_components(m, st.min_voxels, st.connectivity); break;
    }
  }
  return m;
}

namespace {

constexpr std::array<std::pair<FilterOp, const char*>, 5> kOpNames = {{{FilterOp::Erode, "erode"},
                                                                       {FilterOp::Dilate, "dilate"},
                                                                       {FilterOp::Open, "open"},
                                                                       {FilterOp::Close, "close"},
                                                                       {FilterOp::RemoveSmall, "remove_small"}}};

}  // namespace

FilterSequence filters_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::InvalidArgument, "filter sequence must be a JSON array");
  FilterSequence out;
  for (const auto& item : j) {
    if (!item.is_object() || !item.contains("op") || !item["op"].is_string())
      throw Error(ErrorCode::InvalidArgument, "filter step needs an \"op\" string");
    const std::string name = item["op"].get<std::string>();
    FilterStep st;
    auto it = std::find_if(kOpNames.begin(), kOpNames.end(), [&](const auto& p) { return name == p.second; });
    if (it == kOpNames.end()) throw Error(ErrorCode::InvalidArgument, "unknown filter op '" + name + "'");
    st.op = it->first;
    try {
      if (st.op == FilterOp::RemoveSmall) {
        st.min_voxels = item.at("min_voxels").get<std::size_t>();
        st.connectivity = item.value("connectivity", 26);
        if (st.min_voxels == 0) throw Error(ErrorCode::InvalidArgument, "min_voxels must be positive");
      } else {
        st.connectivity = item.value("connectivity", 6);
        st.radius = item.value("radius", 1);
        if (st.radius < 1) throw Error(ErrorCode::InvalidArgument, "radius must be >= 1");
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, std::string("bad filter step: ") + e.what());
    }
    check_connectivity(st.connectivity);
    out.push_back(st);
  }
  return out;
}

nlohmann::json filters_to_json(const FilterSequence& steps) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& st : steps) {
    const char* name = std::find_if(kOpNames.begin(), kOpNames.end(), [&](const auto& p) { return p.first == st.op; })->second;
    nlohmann::json o;
    o["op"] = name;
    if (st.op == FilterOp::RemoveSmall) {
      o["min_voxels"] = st.min_voxels;
      o["connectivity"] = st.connectivity;
    } else {
      o["connectivity"] = st.connectivity;
      o["radius"] = st.radius;
    }
    arr.push_back(o);
  }
  return arr;
}

}  // namespace netseg
