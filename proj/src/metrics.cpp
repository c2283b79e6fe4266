#include "netseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace netseg {

namespace {

void require_same_shape(const Mask& a, const Mask& b) {
  if (a.shape() != b.shape()) throw Error(ErrorCode::ShapeMismatch, to_string(a.shape()) + " vs " + to_string(b.shape()));
}

struct Counts {
  std::size_t a = 0, b = 0, both = 0;
};

Counts overlap(const Mask& a, const Mask& b) {
  require_same_shape(a, b);
  Counts c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    c.a += x;
    c.b += y;
    c.both += x && y;
  }
  return c;
}

/// One pass of the lower-envelope squared distance transform along a line.
void edt_line(const double* f, double* out, std::size_t n, std::size_t stride, double step, std::vector<std::size_t>& v,
              std::vector<double>& z, std::vector<double>& buf) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  buf.resize(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = f[i * stride];
  v.resize(n);
  z.resize(n + 1);
  const double s2 = step * step;
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (buf[q] == kInf) continue;
    if (!any) {
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      any = true;
      continue;
    }
    double s;
    while (true) {
      const std::size_t p = v[k];
      const double qd = static_cast<double>(q), pd = static_cast<double>(p);
      s = ((buf[q] + s2 * qd * qd) - (buf[p] + s2 * pd * pd)) / (2.0 * s2 * (qd - pd));
      if (s <= z[k]) {  // z[0] is -inf, so this stops at k == 0
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (!any) {
    for (std::size_t i = 0; i < n; ++i) out[i * stride] = kInf;
    return;
  }
  std::size_t j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    const double d = step * (static_cast<double>(q) - static_cast<double>(v[j]));
    out[q * stride] = d * d + buf[v[j]];
  }
}

double percentile_of(std::vector<double> values, double pct) {
  std::sort(values.begin(), values.end());
  if (pct >= 100.0) return values.back();
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void CompensatedSum::add(double x) {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x))
    comp_ += (sum_ - t) + x;
  else
    comp_ += (x - t) + sum_;
  sum_ = t;
}

double dice(const Mask& a, const Mask& b) {
  const Counts c = overlap(a, b);
  if (c.a + c.b == 0) return 1.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.a + c.b);
}

double iou(const Mask& a, const Mask& b) {
  const Counts c = overlap(a, b);
  const std::size_t uni = c.a + c.b - c.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.both) / static_cast<double>(uni);
}

std::vector<double> squared_distance_transform(const Mask& mask, const Spacing3& sp) {
  const Shape3 s = mask.shape();
  std::vector<double> f(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) f[i] = mask[i] ? 0.0 : std::numeric_limits<double>::infinity();
  std::vector<double> g(mask.size());
  std::vector<std::size_t> v;
  std::vector<double> z, buf;
  // along w
  for (std::size_t i = 0; i < s.d; ++i)
    for (std::size_t j = 0; j < s.h; ++j) {
      const std::size_t base = (i * s.h + j) * s.w;
      edt_line(&f[base], &g[base], s.w, 1, sp.w, v, z, buf);
    }
  // along h
  for (std::size_t i = 0; i < s.d; ++i)
    for (std::size_t k = 0; k < s.w; ++k) {
      const std::size_t base = i * s.h * s.w + k;
      edt_line(&g[base], &f[base], s.h, s.w, sp.h, v, z, buf);
    }
  // along d
  for (std::size_t j = 0; j < s.h; ++j)
    for (std::size_t k = 0; k < s.w; ++k) {
      const std::size_t base = j * s.w + k;
      edt_line(&f[base], &g[base], s.d, s.h * s.w, sp.d, v, z, buf);
    }
  return g;
}

double hausdorff(const Mask& a, const Mask& b, const Spacing3& spacing_mm, double percentile) {
  require_same_shape(a, b);
  if (!(percentile > 0.0 && percentile <= 100.0))
    throw Error(ErrorCode::InvalidArgument, "percentile must lie in (0, 100]");
  if (count_nonzero(a) == 0 || count_nonzero(b) == 0)
    throw Error(ErrorCode::EmptyMask, "Hausdorff distance is undefined for an empty mask");
  auto directed = [&](const Mask& from, const Mask& to) {
    const auto dt = squared_distance_transform(to, spacing_mm);
    std::vector<double> d;
    for (std::size_t i = 0; i < from.size(); ++i)
      if (from[i]) d.push_back(std::sqrt(dt[i]));
    return percentile_of(std::move(d), percentile);
  };
  return std::max(directed(a, b), directed(b, a));
}

SoftDiceResult soft_dice_loss(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& gt,
                              double smooth, bool with_grad) {
  if (pred.size() != gt.size() || pred.empty())
    throw Error(ErrorCode::ShapeMismatch, "prediction and ground truth class counts differ");
  SoftDiceResult r;
  const double classes = static_cast<double>(pred.size());
  if (with_grad) r.grad.resize(pred.size());
  for (std::size_t c = 0; c < pred.size(); ++c) {
    const auto& p = pred[c];
    const auto& g = gt[c];
    if (p.size() != g.size()) throw Error(ErrorCode::ShapeMismatch, "class field sizes differ");
    CompensatedSum inter, pp, gg;
    for (std::size_t i = 0; i < p.size(); ++i) {
      inter.add(p[i] * g[i]);
      pp.add(p[i] * p[i]);
      gg.add(g[i] * g[i]);
    }
    const double num = 2.0 * inter.value() + smooth;
    const double den = pp.value() + gg.value() + smooth;
    r.loss += (1.0 - num / den) / classes;
    if (with_grad) {
      // d/dp_i [1 - num/den] = -(2 g_i den - num 2 p_i) / den^2
      auto& gr = r.grad[c];
      gr.resize(p.size());
      const double inv = 1.0 / (den * den * classes);
      for (std::size_t i = 0; i < p.size(); ++i) gr[i] = -(2.0 * g[i] * den - 2.0 * p[i] * num) * inv;
    }
  }
  return r;
}

Mask threshold(const Grid<float>& prob, double tau) {
  Mask m(prob.shape(), 0, prob.spacing());
  for (std::size_t i = 0; i < prob.size(); ++i) m[i] = prob[i] >= tau ? 1 : 0;
  return m;
}

SegmentMaskSet threshold_predictions(const std::map<Segment, Grid<float>>& prob, double tau,
                                     std::size_t resolution_factor) {
  if (!(tau > 0.0 && tau < 1.0)) throw Error(ErrorCode::InvalidArgument, "threshold must lie in (0, 1)");
  SegmentMaskSet out;
  out.resolution_factor = resolution_factor;
  for (const auto& [seg, p] : prob) out.masks.emplace(seg, threshold(p, tau));
  return out;
}

double MetricReport::mean_dice() const {
  CompensatedSum s;
  std::size_t n = 0;
  for (Segment seg : mean_dice_over)
    if (auto it = per_segment.find(seg); it != per_segment.end()) {
      s.add(it->second.dice);
      ++n;
    }
  return n ? s.value() / static_cast<double>(n) : 0.0;
}

MetricReport evaluate_segments(const SegmentMaskSet& pred, const SegmentMaskSet& gt, const Spacing3& spacing_mm,
                               std::string record_id) {
  MetricReport r;
  r.record_id = std::move(record_id);
  for (const auto& [seg, g] : gt.masks) {
    if (!pred.contains(seg)) continue;
    const Mask& p = pred.at(seg);
    SegmentScores sc;
    sc.dice = dice(p, g);
    sc.iou = iou(p, g);
    if (count_nonzero(p) > 0 && count_nonzero(g) > 0) {
      sc.hausdorff_mm = hausdorff(p, g, spacing_mm, 100.0);
      sc.hausdorff95_mm = hausdorff(p, g, spacing_mm, 95.0);
    }
    r.per_segment.emplace(seg, sc);
  }
  const Segment smallest = r.per_segment.count(Segment::ET) ? Segment::ET : Segment::AT;
  for (Segment s : {smallest, Segment::TC, Segment::WT})
    if (r.per_segment.count(s)) r.mean_dice_over.push_back(s);
  return r;
}

nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["record_id"] = r.record_id;
  nlohmann::ordered_json segs = nlohmann::ordered_json::object();
  for (const auto& [seg, sc] : r.per_segment) {
    nlohmann::ordered_json s;
    s["dice"] = sc.dice;
    s["iou"] = sc.iou;
    s["hausdorff_mm"] = sc.hausdorff_mm ? nlohmann::ordered_json(*sc.hausdorff_mm) : nlohmann::ordered_json(nullptr);
    s["hausdorff95_mm"] = sc.hausdorff95_mm ? nlohmann::ordered_json(*sc.hausdorff95_mm) : nlohmann::ordered_json(nullptr);
    segs[std::string(to_string(seg))] = s;
  }
  j["per_segment"] = segs;
  std::vector<std::string> over;
  for (Segment s : r.mean_dice_over) over.emplace_back(to_string(s));
  j["mean_dice_over"] = over;
  j["mean_dice"] = r.mean_dice();
  return j;
}

std::string to_csv(const std::vector<MetricReport>& reports, bool header) {
  std::string out;
  if (header) out += "record_id,segment,dice,iou,hd,hd95\n";
  for (const auto& r : reports)
    for (const auto& [seg, sc] : r.per_segment) {
      out += r.record_id + "," + std::string(to_string(seg)) + "," + fmt(sc.dice) + "," + fmt(sc.iou) + ",";
      out += (sc.hausdorff_mm ? fmt(*sc.hausdorff_mm) : std::string()) + ",";
      out += (sc.hausdorff95_mm ? fmt(*sc.hausdorff95_mm) : std::string()) + "\n";
    }
  return out;
}

}  // namespace netseg
