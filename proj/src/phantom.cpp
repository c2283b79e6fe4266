#include "netseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace netseg {

namespace {

constexpr std::array<const char*, kPhantomRegions> kRegionNames = {"background", "healthy", "ncr", "ed", "net", "et"};

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Smooth positive radial factor over directions: 1 + jitter * mean of three random plane waves.
struct RadialJitter {
  std::array<std::array<double, 3>, 3> k{};
  std::array<double, 3> phase{};
  double amplitude = 0.0;

  RadialJitter(std::uint64_t seed, double jitter) : amplitude(jitter) {
    std::mt19937_64 rng(splitmix(seed ^ 0xA5A5A5A5ull));
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0.0, 2.0 * std::numbers::pi);
    for (auto& v : k) {
      const double a = nd(rng), b = nd(rng), c = nd(rng);
      const double n = std::sqrt(a * a + b * b + c * c) + 1e-12;
      v = {2.0 * a / n, 2.0 * b / n, 2.0 * c / n};
    }
    for (auto& p : phase) p = ud(rng);
  }

  double operator()(double x, double y, double z) const {
    double s = 0.0;
    for (std::size_t m = 0; m < 3; ++m) s += std::sin(std::numbers::pi * (k[m][0] * x + k[m][1] * y + k[m][2] * z) + phase[m]);
    return 1.0 + amplitude * s / 3.0;
  }
};

struct LevelField {
  std::vector<double> level;  // normalized tumor radius per voxel
  Mask brain;
};

LevelField level_field(const PhantomSpec& spec) {
  const auto& g = spec.geometry;
  const Shape3 s = spec.shape;
  const RadialJitter jit(spec.seed, g.jitter);
  const double cd = g.center[0] * static_cast<double>(s.d - 1), ch = g.center[1] * static_cast<double>(s.h - 1),
               cw = g.center[2] * static_cast<double>(s.w - 1);
  const double bd = g.brain_fraction * static_cast<double>(s.d) / 2.0, bh = g.brain_fraction * static_cast<double>(s.h) / 2.0,
               bw = g.brain_fraction * static_cast<double>(s.w) / 2.0;
  const double md = static_cast<double>(s.d - 1) / 2.0, mh = static_cast<double>(s.h - 1) / 2.0,
               mw = static_cast<double>(s.w - 1) / 2.0;
  LevelField f{std::vector<double>(s.size()), Mask(s, 0, spec.spacing)};
  for (std::size_t i = 0; i < s.d; ++i)
    for (std::size_t j = 0; j < s.h; ++j)
      for (std::size_t k = 0; k < s.w; ++k) {
        const double x = (static_cast<double>(i) - cd) / g.axes[0], y = (static_cast<double>(j) - ch) / g.axes[1],
                     z = (static_cast<double>(k) - cw) / g.axes[2];
        const double r = std::sqrt(x * x + y * y + z * z);
        const double q = r > 0.0 ? jit(x / r, y / r, z / r) : 1.0;
        const std::size_t n = f.brain.index(i, j, k);
        f.level[n] = r / q;
        const double a = (static_cast<double>(i) - md) / bd, b = (static_cast<double>(j) - mh) / bh,
                     c = (static_cast<double>(k) - mw) / bw;
        f.brain[n] = a * a + b * b + c * c <= 1.0 ? 1 : 0;
      }
  return f;
}

LabelVolume labels_from_field(const PhantomSpec& spec, const LevelField& f) {
  const auto& g = spec.geometry;
  LabelVolume lab(spec.shape, Schema::Unified4Label, spec.spacing);
  double net_outer = g.et_radius + (g.net_radius - g.et_radius) * spec.net_volume_scale;
  std::vector<std::uint8_t> is_net(lab.size(), 0);
  if (spec.target_net_voxels) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t n = 0; n < lab.size(); ++n)
      if (f.level[n] >= g.et_radius && (f.brain[n] || f.level[n] < g.ed_radius)) cand.emplace_back(f.level[n], n);
    const std::size_t want = *spec.target_net_voxels;
    if (want > cand.size())
      throw Error(ErrorCode::InvalidSpec, "target NET volume " + std::to_string(want) + " exceeds the " +
                                              std::to_string(cand.size()) + " voxels available outside the ET shell");
    std::sort(cand.begin(), cand.end());
    net_outer = g.et_radius;
    for (std::size_t m = 0; m < want; ++m) {
      is_net[cand[m].second] = 1;
      net_outer = cand[m].first;
    }
  } else {
    for (std::size_t n = 0; n < lab.size(); ++n)
      is_net[n] = f.level[n] >= g.et_radius && f.level[n] < net_outer ? 1 : 0;
  }
  const double ed_outer = std::max(g.ed_radius, net_outer + (g.ed_radius - g.net_radius));
  for (std::size_t n = 0; n < lab.size(); ++n) {
    const double r = f.level[n];
    if (r < g.ncr_radius)
      lab[n] = 1;
    else if (r < g.et_radius)
      lab[n] = 4;
    else if (is_net[n])
      lab[n] = 3;
    else if (r < ed_outer)
      lab[n] = 2;
  }
  return lab;
}

PhantomRegion region_of(std::uint8_t label, bool brain) {
  switch (label) {
    case 1: return PhantomRegion::NCR;
    case 2: return PhantomRegion::ED;
    case 3: return PhantomRegion::NET;
    case 4: return PhantomRegion::ET;
    default: return brain ? PhantomRegion::Healthy : PhantomRegion::Background;
  }
}

}  // namespace

std::string_view to_string(PhantomRegion r) { return kRegionNames[static_cast<std::size_t>(r)]; }

IntensityTable default_intensity_table() {
  IntensityTable t{};
  auto set = [&](PhantomRegion r, double t1, double t2, double t1c, double flair) {
    const std::size_t i = static_cast<std::size_t>(r);
    t[0][i] = {t1, 5.0};
    t[1][i] = {t2, 5.0};
    t[2][i] = {t1c, 5.0};
    t[3][i] = {flair, 5.0};
  };
  set(PhantomRegion::Background, 0, 0, 0, 0);
  for (auto& m : t) m[0].sd = 0.0;
  set(PhantomRegion::Healthy, 100, 80, 100, 90);
  set(PhantomRegion::NCR, 50, 170, 40, 80);
  set(PhantomRegion::ED, 80, 150, 95, 160);
  set(PhantomRegion::NET, 65, 150, 70, 125);
  set(PhantomRegion::ET, 65, 110, 180, 110);
  return t;
}

void PhantomSpec::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidSpec, m); };
  if (shape.d == 0 || shape.h == 0 || shape.w == 0) bad("phantom shape must be positive");
  if (!(spacing.d > 0 && spacing.h > 0 && spacing.w > 0)) bad("spacing must be positive");
  const auto& g = geometry;
  if (!(0 < g.ncr_radius && g.ncr_radius < g.et_radius && g.et_radius < g.net_radius && g.net_radius < g.ed_radius))
    bad("radii must increase strictly: ncr < et < net < ed");
  for (double a : g.axes)
    if (!(a > 0)) bad("axis scales must be positive");
  for (double c : g.center)
    if (!(c >= 0 && c <= 1)) bad("centre fractions must lie in [0, 1]");
  if (!(g.brain_fraction > 0 && g.brain_fraction <= 1)) bad("brain_fraction must lie in (0, 1]");
  if (!(g.jitter >= 0 && g.jitter < 0.5)) bad("jitter must lie in [0, 0.5)");
  if (!(net_volume_scale > 0)) bad("net_volume_scale must be positive");
  if (!(gain_jitter >= 0 && gain_jitter < 0.5)) bad("gain_jitter must lie in [0, 0.5)");
  for (const auto& m : intensities)
    for (std::size_t r = 0; r < kPhantomRegions; ++r) {
      if (!std::isfinite(m[r].mean)) bad("intensity means must be finite");
      // the background may be noiseless; tissue needs noise
      if (r == 0 ? !(m[r].sd >= 0) : !(m[r].sd > 0)) bad("intensity sd must be positive");
    }
}

LabelVolume generate_labels(const PhantomSpec& spec) {
  spec.validate();
  return labels_from_field(spec, level_field(spec));
}

MultiModalRecord generate(const PhantomSpec& spec, std::string record_id) {
  spec.validate();
  const LevelField f = level_field(spec);
  MultiModalRecord rec;
  rec.record_id = std::move(record_id);
  rec.labels = labels_from_field(spec, f);
  std::mt19937_64 rng(splitmix(spec.seed));
  std::normal_distribution<double> nd;
  for (std::size_t m = 0; m < 4; ++m) {
    const double gain = 1.0 + spec.gain_jitter * nd(rng);
    Volume v(spec.shape, 0.0f, spec.spacing);
    for (std::size_t n = 0; n < v.size(); ++n) {
      const Intensity& it = spec.intensities[m][static_cast<std::size_t>(region_of((*rec.labels)[n], f.brain[n]))];
      const double z = nd(rng);
      v[n] = static_cast<float>(gain * (it.mean + it.sd * z));
    }
    rec.channels[m] = std::move(v);
  }
  return rec;
}

nlohmann::ordered_json to_json(const PhantomSpec& s) {
  nlohmann::ordered_json j;
  j["shape"] = {s.shape.d, s.shape.h, s.shape.w};
  j["spacing"] = {s.spacing.d, s.spacing.h, s.spacing.w};
  j["seed"] = s.seed;
  const auto& g = s.geometry;
  j["geometry"] = {{"center", g.center},         {"axes", g.axes},
                   {"ncr_radius", g.ncr_radius}, {"et_radius", g.et_radius},
                   {"net_radius", g.net_radius}, {"ed_radius", g.ed_radius},
                   {"brain_fraction", g.brain_fraction}, {"jitter", g.jitter}};
  nlohmann::ordered_json tab;
  for (Modality m : kModalities) {
    nlohmann::ordered_json row;
    for (std::size_t r = 0; r < kPhantomRegions; ++r) {
      const auto& it = s.intensities[static_cast<std::size_t>(m)][r];
      row[kRegionNames[r]] = {it.mean, it.sd};
    }
    tab[std::string(to_string(m))] = row;
  }
  j["intensities"] = tab;
  j["net_volume_scale"] = s.net_volume_scale;
  j["target_net_voxels"] = s.target_net_voxels ? nlohmann::ordered_json(*s.target_net_voxels) : nlohmann::ordered_json(nullptr);
  j["gain_jitter"] = s.gain_jitter;
  return j;
}

PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
  PhantomSpec s;
  try {
    if (j.contains("shape")) {
      const auto v = j["shape"].get<std::array<std::size_t, 3>>();
      s.shape = {v[0], v[1], v[2]};
    }
    if (j.contains("spacing")) {
      const auto v = j["spacing"].get<std::array<double, 3>>();
      s.spacing = {v[0], v[1], v[2]};
    }
    s.seed = j.value("seed", s.seed);
    if (j.contains("geometry")) {
      const auto& g = j["geometry"];
      auto& o = s.geometry;
      if (g.contains("center")) o.center = g["center"].get<std::array<double, 3>>();
      if (g.contains("axes")) o.axes = g["axes"].get<std::array<double, 3>>();
      o.ncr_radius = g.value("ncr_radius", o.ncr_radius);
      o.et_radius = g.value("et_radius", o.et_radius);
      o.net_radius = g.value("net_radius", o.net_radius);
      o.ed_radius = g.value("ed_radius", o.ed_radius);
      o.brain_fraction = g.value("brain_fraction", o.brain_fraction);
      o.jitter = g.value("jitter", o.jitter);
    }
    if (j.contains("intensities")) {
      for (const auto& [mod, row] : j["intensities"].items()) {
        std::size_t m = 4;
        for (Modality mm : kModalities)
          if (to_string(mm) == mod) m = static_cast<std::size_t>(mm);
        if (m == 4) throw Error(ErrorCode::InvalidSpec, "unknown modality '" + mod + "' in intensity table");
        for (const auto& [reg, val] : row.items()) {
          auto it = std::find(kRegionNames.begin(), kRegionNames.end(), reg);
          if (it == kRegionNames.end()) throw Error(ErrorCode::InvalidSpec, "unknown region '" + reg + "'");
          const auto ms = val.get<std::array<double, 2>>();
          s.intensities[m][static_cast<std::size_t>(it - kRegionNames.begin())] = {ms[0], ms[1]};
        }
      }
    }
    s.net_volume_scale = j.value("net_volume_scale", s.net_volume_scale);
    if (j.contains("target_net_voxels") && !j["target_net_voxels"].is_null())
      s.target_net_voxels = j["target_net_voxels"].get<std::size_t>();
    s.gain_jitter = j.value("gain_jitter", s.gain_jitter);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("bad phantom spec: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::ordered_json to_json(const CohortSpec& c) {
  nlohmann::ordered_json j;
  j["n"] = c.n;
  j["gamma_shape"] = c.gamma_shape;
  j["gamma_scale"] = c.gamma_scale;
  j["seed"] = c.seed;
  j["center_jitter"] = c.center_jitter;
  j["base"] = to_json(c.base);
  return j;
}

CohortSpec cohort_spec_from_json(const nlohmann::json& j) {
  CohortSpec c;
  try {
    c.n = j.value("n", c.n);
    c.gamma_shape = j.value("gamma_shape", c.gamma_shape);
    c.gamma_scale = j.value("gamma_scale", c.gamma_scale);
    c.seed = j.value("seed", c.seed);
    c.center_jitter = j.value("center_jitter", c.center_jitter);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("bad cohort spec: ") + e.what());
  }
  if (j.contains("base")) c.base = phantom_spec_from_json(j["base"]);
  return c;
}

std::string cohort_record_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "phantom_%04zu", i);
  return buf;
}

std::vector<PhantomSpec> cohort_specs(const CohortSpec& c) {
  if (c.n == 0) throw Error(ErrorCode::InvalidSpec, "cohort size must be at least 1");
  if (!(c.gamma_shape > 0 && c.gamma_scale > 0)) throw Error(ErrorCode::InvalidSpec, "gamma parameters must be positive");
  if (!(c.center_jitter >= 0 && c.center_jitter < 0.5)) throw Error(ErrorCode::InvalidSpec, "center_jitter must lie in [0, 0.5)");
  c.base.validate();
  const double mean = c.gamma_shape * c.gamma_scale;
  std::vector<PhantomSpec> out;
  for (std::size_t i = 0; i < c.n; ++i) {
    std::mt19937_64 rng(splitmix(c.seed * 0x100000001B3ull + i));
    std::gamma_distribution<double> gd(c.gamma_shape, c.gamma_scale);
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    const double v = gd(rng);
    PhantomSpec s = c.base;
    s.seed = splitmix(rng());
    s.target_net_voxels = static_cast<std::size_t>(std::llround(v));
    const double scale = std::clamp(std::cbrt(v / mean), 0.6, 1.3);
    auto& g = s.geometry;
    g.ncr_radius *= scale;
    g.et_radius *= scale;
    g.net_radius *= scale;
    g.ed_radius *= scale;
    for (auto& ctr : g.center) ctr = std::clamp(ctr + c.center_jitter * ud(rng), 0.0, 1.0);
    out.push_back(s);
  }
  return out;
}

std::vector<MultiModalRecord> generate_cohort(const CohortSpec& c) {
  const auto specs = cohort_specs(c);
  std::vector<MultiModalRecord> out;
  out.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) out.push_back(generate(specs[i], cohort_record_id(i)));
  return out;
}

}  // namespace netseg
