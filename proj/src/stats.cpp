#include "netseg/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <tuple>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <boost/math/tools/roots.hpp>

#include "netseg/metrics.hpp"

namespace netseg {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + d * d / var);
}

struct EmState {
  std::vector<double> w, mu, var;
};

double e_step(std::span<const double> x, const EmState& s, std::vector<double>& resp) {
  const std::size_t k = s.w.size();
  CompensatedSum ll;
  std::vector<double> lp(k);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      lp[c] = s.w[c] > 0.0 ? std::log(s.w[c]) + log_normal_pdf(x[i], s.mu[c], s.var[c])
                           : -std::numeric_limits<double>::infinity();
      m = std::max(m, lp[c]);
    }
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(lp[c] - m);
    const double lse = m + std::log(z);
    ll.add(lse);
    for (std::size_t c = 0; c < k; ++c) resp[i * k + c] = std::exp(lp[c] - lse);
  }
  return ll.value();
}

void m_step(std::span<const double> x, const std::vector<double>& resp, EmState& s, double floor) {
  const std::size_t k = s.w.size();
  const double n = static_cast<double>(x.size());
  for (std::size_t c = 0; c < k; ++c) {
    CompensatedSum nk, sx;
    for (std::size_t i = 0; i < x.size(); ++i) {
      nk.add(resp[i * k + c]);
      sx.add(resp[i * k + c] * x[i]);
    }
    const double nc = nk.value();
    if (nc <= 0.0) {
      // dead component keeps its parameters with zero weight
      s.w[c] = 0.0;
      continue;
    }
    const double mu = sx.value() / nc;
    CompensatedSum sv;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - mu;
      sv.add(resp[i * k + c] * d * d);
    }
    s.w[c] = nc / n;
    s.mu[c] = mu;
    s.var[c] = std::max(sv.value() / nc, floor);
  }
}

EmState kmeanspp_init(std::span<const double> x, std::size_t k, std::mt19937_64& rng, double floor) {
  const std::size_t n = x.size();
  std::vector<double> centers;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  centers.push_back(x[pick(rng)]);
  std::vector<double> d2(n);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (x[i] - c) * (x[i] - c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(x[pick(rng)]);
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    const double r = u(rng);
    double acc = 0.0;
    std::size_t chosen = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc >= r && d2[i] > 0.0) {
        chosen = i;
        break;
      }
    }
    centers.push_back(x[chosen]);
  }
  // hard assignment to the nearest centre seeds weights and variances
  double gmean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double gvar = 0.0;
  for (double v : x) gvar += (v - gmean) * (v - gmean);
  gvar = std::max(gvar / static_cast<double>(n), floor);
  EmState s{std::vector<double>(k, 0.0), centers, std::vector<double>(k, gvar)};
  std::vector<double> cnt(k, 0.0), sum(k, 0.0), sq(k, 0.0);
  for (double v : x) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (std::abs(v - centers[c]) < std::abs(v - centers[best])) best = c;
    cnt[best] += 1.0;
    sum[best] += v;
    sq[best] += (v - centers[best]) * (v - centers[best]);
  }
  for (std::size_t c = 0; c < k; ++c) {
    s.w[c] = std::max(cnt[c], 0.5) / static_cast<double>(n);
    if (cnt[c] >= 2.0) s.var[c] = std::max(sq[c] / cnt[c], floor);
  }
  const double wsum = std::accumulate(s.w.begin(), s.w.end(), 0.0);
  for (double& w : s.w) w /= wsum;
  return s;
}

}  // namespace

GmmFit fit_gmm_1d(std::span<const double> samples, std::size_t k, std::uint64_t seed, std::size_t restarts,
                  const GmmOptions& options) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "component count must be positive");
  if (samples.size() < k)
    throw Error(ErrorCode::TooFewSamples, std::to_string(samples.size()) + " samples for " + std::to_string(k) + " components");
  for (double v : samples)
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite sample");
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  if (k > 1 && *lo == *hi) throw Error(ErrorCode::DegenerateData, "all samples are equal");
  restarts = std::max<std::size_t>(restarts, 1);

  std::mt19937_64 master(seed);
  const std::size_t n = samples.size();
  std::vector<double> resp(n * k);

  GmmFit best;
  best.log_likelihood = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < restarts; ++r) {
    std::mt19937_64 rng(master());
    EmState s = kmeanspp_init(samples, k, rng, options.variance_floor);
    double ll = e_step(samples, s, resp);
    int it = 0;
    for (; it < options.max_iterations; ++it) {
      m_step(samples, resp, s, options.variance_floor);
      const double next = e_step(samples, s, resp);
      if (next < ll - 1e-9 * (1.0 + std::abs(ll)))
        throw std::logic_error("EM log-likelihood decreased from " + std::to_string(ll) + " to " + std::to_string(next));
      const double change = next - ll;
      ll = next;
      if (std::abs(change) < options.tolerance) {
        ++it;
        break;
      }
    }
    // ties keep the earlier restart
    if (ll > best.log_likelihood) {
      best.k = k;
      best.weights = s.w;
      best.means = s.mu;
      best.variances = s.var;
      best.log_likelihood = ll;
      best.iterations = it;
      best.best_restart = r;
      best.assignments.assign(n, 0);
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t arg = 0;
        for (std::size_t c = 1; c < k; ++c)
          if (resp[i * k + c] > resp[i * k + arg]) arg = c;
        best.assignments[i] = arg;
      }
    }
  }

  // canonical order: ascending mean
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return best.means[a] < best.means[b]; });
  std::vector<std::size_t> rank(k);
  for (std::size_t i = 0; i < k; ++i) rank[order[i]] = i;
  GmmFit out = best;
  for (std::size_t i = 0; i < k; ++i) {
    out.weights[i] = best.weights[order[i]];
    out.means[i] = best.means[order[i]];
    out.variances[i] = best.variances[order[i]];
  }
  for (auto& a : out.assignments) a = rank[a];
  return out;
}

std::string_view to_string(VolumeGroup g) {
  switch (g) {
    case VolumeGroup::Low: return "low";
    case VolumeGroup::Medium: return "medium";
    case VolumeGroup::High: return "high";
  }
  return "?";
}

VolumePartition partition_by_volume(const std::map<std::string, std::size_t>& volumes, std::uint64_t seed,
                                    std::size_t restarts) {
  if (volumes.size() < 3)
    throw Error(ErrorCode::TooFewSamples, "volume grouping needs at least 3 records, got " + std::to_string(volumes.size()));
  // std::map iterates in record-id order, so the fit does not depend on insertion order
  std::vector<double> x;
  x.reserve(volumes.size());
  for (const auto& [id, v] : volumes) x.push_back(std::log1p(static_cast<double>(v)));
  GmmOptions opt;
  opt.variance_floor = kLogVolumeVarianceFloor;
  VolumePartition p;
  p.fit = fit_gmm_1d(x, 3, seed, restarts, opt);
  std::size_t i = 0;
  for (const auto& [id, v] : volumes) p.groups[id] = static_cast<VolumeGroup>(p.fit.assignments[i++]);
  return p;
}

// ---------------------------------------------------------------------------

double gamma_pdf(double x, double k, double theta) {
  if (x <= 0.0) return 0.0;
  return std::exp((k - 1.0) * std::log(x) - x / theta - std::lgamma(k) - k * std::log(theta));
}

double gamma_cdf(double x, double k, double theta) {
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_p(k, x / theta);
}

std::array<double, 2> gamma_loglik_gradient(std::span<const double> samples, double k, double theta) {
  CompensatedSum sx, slog;
  for (double v : samples) {
    sx.add(v);
    slog.add(std::log(v));
  }
  const double n = static_cast<double>(samples.size());
  const double mean = sx.value() / n, mean_log = slog.value() / n;
  return {-boost::math::digamma(k) - std::log(theta) + mean_log, -k / theta + mean / (theta * theta)};
}

GammaFit fit_gamma(std::span<const double> samples) {
  if (samples.size() < 2) throw Error(ErrorCode::TooFewSamples, "gamma fit needs at least 2 samples");
  CompensatedSum sx, slog;
  for (double v : samples) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::NonPositiveSample, "sample " + std::to_string(v) + " is not positive");
    sx.add(v);
    slog.add(std::log(v));
  }
  const double n = static_cast<double>(samples.size());
  const double mean = sx.value() / n;
  const double mean_log = slog.value() / n;
  CompensatedSum ss;
  for (double v : samples) ss.add((v - mean) * (v - mean));
  const double var = ss.value() / n;
  if (!(var > 1e-300) || var <= 1e-14 * mean * mean) throw Error(ErrorCode::ZeroVariance, "samples are constant");

  // log k - digamma(k) = log(mean) - mean(log x)
  const double s = std::log(mean) - mean_log;
  double k = mean * mean / var;  // method of moments seed
  GammaFit fit;
  for (int it = 0; it < 100; ++it) {
    const double f = std::log(k) - boost::math::digamma(k) - s;
    const double df = 1.0 / k - boost::math::trigamma(k);
    double next = k - f / df;
    if (!(next > 0.0)) next = k / 2.0;
    fit.iterations = it + 1;
    const double step = std::abs(next - k);
    k = next;
    if (step <= 1e-15 * k) break;
  }
  fit.shape_k = k;
  fit.scale_theta = mean / k;
  fit.log_likelihood = n * ((k - 1.0) * mean_log - mean / fit.scale_theta - std::lgamma(k) - k * std::log(fit.scale_theta));
  return fit;
}

double kolmogorov_pvalue(double statistic, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * statistic;
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0, sign = 1.0;
  for (int j = 1; j <= 200; ++j) {
    const double term = sign * std::exp(-2.0 * j * j * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-16 * std::abs(sum)) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_test_gamma(std::span<const double> samples, double k, double theta) {
  if (samples.empty()) throw Error(ErrorCode::TooFewSamples, "KS test needs samples");
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = gamma_cdf(x[i], k, theta);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return {d, kolmogorov_pvalue(d, x.size())};
}

std::string gamma_histogram_csv(std::span<const double> samples, const GammaFit& fit, std::size_t bins) {
  if (samples.empty() || bins == 0) return "bin_lo,bin_hi,count,density,fitted_density\n";
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = 0.0;
  const double hi = *hi_it > lo ? *hi_it : lo + 1.0;
  (void)lo_it;
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<std::size_t> counts(bins, 0);
  for (double v : samples) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    counts[std::min(b, bins - 1)]++;
  }
  std::string out = "bin_lo,bin_hi,count,density,fitted_density\n";
  char buf[256];
  for (std::size_t b = 0; b < bins; ++b) {
    const double a = lo + width * static_cast<double>(b);
    const double density = static_cast<double>(counts[b]) / (static_cast<double>(samples.size()) * width);
    std::snprintf(buf, sizeof buf, "%.10g,%.10g,%zu,%.10g,%.10g\n", a, a + width, counts[b], density,
                  gamma_pdf(a + width / 2.0, fit.shape_k, fit.scale_theta));
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------

double f_distribution_sf(double f, double df1, double df2) {
  if (!(f > 0.0)) return 1.0;
  return boost::math::ibeta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f));
}

namespace {

struct GroupStats {
  std::vector<double> means;
  std::vector<std::size_t> sizes;
  double ss_between = 0.0;
  double ss_within = 0.0;
  std::size_t total = 0;
};

GroupStats group_stats(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw Error(ErrorCode::TooFewGroups, "need at least 2 groups, got " + std::to_string(groups.size()));
  GroupStats g;
  CompensatedSum grand;
  for (const auto& grp : groups) {
    if (grp.size() < 2) throw Error(ErrorCode::TooFewSamples, "every group needs at least 2 samples");
    CompensatedSum s;
    for (double v : grp) {
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite sample");
      s.add(v);
      grand.add(v);
    }
    g.means.push_back(s.value() / static_cast<double>(grp.size()));
    g.sizes.push_back(grp.size());
    g.total += grp.size();
  }
  const double gm = grand.value() / static_cast<double>(g.total);
  CompensatedSum sb, sw;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const double d = g.means[i] - gm;
    sb.add(static_cast<double>(g.sizes[i]) * d * d);
    for (double v : groups[i]) sw.add((v - g.means[i]) * (v - g.means[i]));
  }
  g.ss_between = sb.value();
  g.ss_within = sw.value();
  return g;
}

}  // namespace

AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups) {
  const GroupStats g = group_stats(groups);
  AnovaResult r;
  r.df_between = groups.size() - 1;
  r.df_within = g.total - groups.size();
  r.ms_between = g.ss_between / static_cast<double>(r.df_between);
  r.ms_within = g.ss_within / static_cast<double>(r.df_within);
  if (!(r.ms_within > 0.0)) throw Error(ErrorCode::ZeroWithinVariance, "pooled within-group variance is zero");
  r.f_statistic = r.ms_between / r.ms_within;
  r.p_value = f_distribution_sf(r.f_statistic, static_cast<double>(r.df_between), static_cast<double>(r.df_within));
  return r;
}

namespace {

/// Composite 16-point Gauss–Legendre rule.
struct GaussLegendre16 {
  static constexpr std::array<double, 8> x = {0.0950125098376374401853, 0.2816035507792589132305, 0.4580167776572273863424,
                                              0.6178762444026437484467, 0.7554044083550030338951, 0.8656312023878317438805,
                                              0.9445750230732325760779, 0.9894009349916499325962};
  static constexpr std::array<double, 8> w = {0.1894506104550684962854, 0.1826034150449235888668, 0.1691565193950025381893,
                                              0.1495959888165767320815, 0.1246289712555338720525, 0.0951585116824927848099,
                                              0.0622535239386478928628, 0.0271524594117540948518};

  template <class F>
  static double integrate(F&& f, double a, double b, int panels) {
    const double h = (b - a) / panels;
    double total = 0.0;
    for (int p = 0; p < panels; ++p) {
      const double mid = a + (p + 0.5) * h, half = 0.5 * h;
      double s = 0.0;
      for (std::size_t i = 0; i < 8; ++i) s += w[i] * (f(mid - half * x[i]) + f(mid + half * x[i]));
      total += s * half;
    }
    return total;
  }
};

double phi(double z) { return 0.3989422804014326779 * std::exp(-0.5 * z * z); }
double Phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// P(range of k standard normals <= w).
double normal_range_cdf(double w, std::size_t k) {
  if (w <= 0.0) return 0.0;
  const double km1 = static_cast<double>(k - 1);
  auto f = [&](double z) {
    const double d = Phi(z) - Phi(z - w);
    return d > 0.0 ? phi(z) * std::pow(d, km1) : 0.0;
  };
  // the integrand vanishes outside [-8.5, 8.5 + w]
  const double v = static_cast<double>(k) * GaussLegendre16::integrate(f, -8.5, 8.5 + std::min(w, 30.0), 40);
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace

double studentized_range_cdf(double q, std::size_t k, double df) {
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "studentized range needs k >= 2");
  if (!(df > 0.0)) throw Error(ErrorCode::InvalidArgument, "degrees of freedom must be positive");
  if (q <= 0.0) return 0.0;
  if (df > 1e5) return normal_range_cdf(q, k);
  // s = sqrt(chi2_df / df); integrate its density against the normal-range CDF
  const boost::math::chi_squared chi(df);
  const double s_lo = std::sqrt(boost::math::quantile(chi, 1e-15) / df);
  const double s_hi = std::sqrt(boost::math::quantile(boost::math::complement(chi, 1e-15)) / df);
  const double log_norm = 0.5 * df * std::log(df) - std::lgamma(0.5 * df) - (0.5 * df - 1.0) * std::log(2.0);
  auto integrand = [&](double s) {
    if (s <= 0.0) return 0.0;
    const double log_f = log_norm + (df - 1.0) * std::log(s) - 0.5 * df * s * s;
    return std::exp(log_f) * normal_range_cdf(q * s, k);
  };
  const double v = GaussLegendre16::integrate(integrand, s_lo, s_hi, 48);
  return std::clamp(v, 0.0, 1.0);
}

std::optional<double> studentized_range_table_05(std::size_t k, std::size_t df) {
  // upper 5% points of the studentized range, k = 2..10
  static const std::map<std::size_t, std::array<double, 9>> table = {
      {1, {17.969, 26.976, 32.819, 37.082, 40.408, 43.119, 45.397, 47.357, 49.071}},
      {2, {6.085, 8.331, 9.798, 10.881, 11.734, 12.435, 13.027, 13.539, 13.988}},
      {3, {4.501, 5.910, 6.825, 7.502, 8.037, 8.478, 8.852, 9.177, 9.462}},
      {4, {3.926, 5.040, 5.757, 6.287, 6.706, 7.053, 7.347, 7.602, 7.826}},
      {5, {3.635, 4.602, 5.218, 5.673, 6.033, 6.330, 6.582, 6.801, 6.995}},
      {6, {3.460, 4.339, 4.896, 5.305, 5.628, 5.895, 6.122, 6.319, 6.493}},
      {7, {3.344, 4.165, 4.681, 5.060, 5.359, 5.606, 5.815, 5.997, 6.158}},
      {8, {3.261, 4.041, 4.529, 4.886, 5.167, 5.399, 5.596, 5.767, 5.918}},
      {9, {3.199, 3.948, 4.415, 4.755, 5.024, 5.244, 5.432, 5.595, 5.738}},
      {10, {3.151, 3.877, 4.327, 4.654, 4.912, 5.124, 5.304, 5.460, 5.598}},
      {11, {3.113, 3.820, 4.256, 4.574, 4.823, 5.028, 5.202, 5.353, 5.486}},
      {12, {3.081, 3.773, 4.199, 4.508, 4.750, 4.950, 5.119, 5.265, 5.395}},
      {13, {3.055, 3.734, 4.151, 4.453, 4.690, 4.884, 5.049, 5.192, 5.318}},
      {14, {3.033, 3.701, 4.111, 4.407, 4.639, 4.829, 4.990, 5.130, 5.253}},
      {15, {3.014, 3.673, 4.076, 4.367, 4.595, 4.782, 4.940, 5.077, 5.198}},
      {16, {2.998, 3.649, 4.046, 4.333, 4.557, 4.741, 4.896, 5.031, 5.150}},
      {17, {2.984, 3.628, 4.020, 4.303, 4.524, 4.705, 4.858, 4.991, 5.108}},
      {18, {2.971, 3.609, 3.997, 4.276, 4.494, 4.673, 4.824, 4.955, 5.071}},
      {19, {2.960, 3.593, 3.977, 4.253, 4.468, 4.645, 4.794, 4.924, 5.037}},
      {20, {2.950, 3.578, 3.958, 4.232, 4.445, 4.620, 4.768, 4.895, 5.008}},
      {24, {2.919, 3.532, 3.901, 4.166, 4.373, 4.541, 4.684, 4.807, 4.915}},
      {30, {2.888, 3.486, 3.845, 4.102, 4.301, 4.464, 4.601, 4.720, 4.824}},
      {40, {2.858, 3.442, 3.791, 4.039, 4.232, 4.388, 4.521, 4.634, 4.735}},
      {60, {2.829, 3.399, 3.737, 3.977, 4.163, 4.314, 4.441, 4.550, 4.646}},
      {120, {2.800, 3.356, 3.685, 3.917, 4.096, 4.241, 4.363, 4.468, 4.560}},
  };
  if (k < 2 || k > 10) return std::nullopt;
  auto it = table.find(df);
  if (it == table.end()) return std::nullopt;
  return it->second[k - 2];
}

double studentized_range_critical(double alpha, std::size_t k, double df) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  static std::mutex mu;
  static std::map<std::tuple<double, std::size_t, double>, double> cache;
  {
    std::lock_guard<std::mutex> lock(mu);
    if (auto it = cache.find({alpha, k, df}); it != cache.end()) return it->second;
  }
  const double target = 1.0 - alpha;
  double result = std::numeric_limits<double>::quiet_NaN();
  try {
    auto f = [&](double q) { return studentized_range_cdf(q, k, df) - target; };
    double lo = 0.5, hi = 8.0;
    while (f(hi) < 0.0 && hi < 1e4) hi *= 2.0;
    while (f(lo) > 0.0 && lo > 1e-6) lo /= 2.0;
    std::uintmax_t iters = 100;
    const auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(40), iters);
    result = 0.5 * (a + b);
  } catch (const std::exception&) {
    result = std::numeric_limits<double>::quiet_NaN();
  }
  if (!std::isfinite(result)) {
    const auto idf = static_cast<std::size_t>(df);
    std::optional<double> t;
    if (std::abs(alpha - 0.05) < 1e-12 && static_cast<double>(idf) == df) t = studentized_range_table_05(k, idf);
    if (!t) throw Error(ErrorCode::InvalidArgument, "studentized range quantile failed to converge");
    result = *t;
  }
  std::lock_guard<std::mutex> lock(mu);
  cache[{alpha, k, df}] = result;
  return result;
}

TukeyResult tukey_hsd(const std::vector<std::vector<double>>& groups, double alpha) {
  if (!(alpha > 0.0 && alpha <= 0.5)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 0.5]");
  const GroupStats g = group_stats(groups);
  TukeyResult r;
  r.alpha = alpha;
  r.df_within = g.total - groups.size();
  r.ms_within = g.ss_within / static_cast<double>(r.df_within);
  if (!(r.ms_within > 0.0)) throw Error(ErrorCode::ZeroWithinVariance, "pooled within-group variance is zero");
  const std::size_t k = groups.size();
  const double df = static_cast<double>(r.df_within);
  r.q_critical = studentized_range_critical(alpha, k, df);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) {
      TukeyPair p;
      p.group_a = a;
      p.group_b = b;
      p.mean_diff = g.means[a] - g.means[b];
      const double se = std::sqrt(r.ms_within / 2.0 *
                                  (1.0 / static_cast<double>(g.sizes[a]) + 1.0 / static_cast<double>(g.sizes[b])));
      p.q_statistic = std::abs(p.mean_diff) / se;
      p.p_value = std::clamp(1.0 - studentized_range_cdf(p.q_statistic, k, df), 0.0, 1.0);
      p.significant = p.q_statistic > r.q_critical;
      r.pairs.push_back(p);
    }
  return r;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Region r) {
  switch (r) {
    case Region::NCR: return "NCR";
    case Region::ED: return "ED";
    case Region::NET: return "NET";
    case Region::ET: return "ET";
  }
  return "?";
}

RegionIntensities intensity_by_region(std::span<const MultiModalRecord> records) {
  RegionIntensities out;
  for (const auto& rec : records) {
    if (!rec.labels || rec.labels->schema() != Schema::Unified4Label)
      throw Error(ErrorCode::InvalidArgument, "record " + rec.record_id + " lacks unified labels");
    const LabelVolume& lab = *rec.labels;
    for (Modality m : kModalities) {
      const Volume& v = rec.channel(m);
      std::array<CompensatedSum, 5> sum;
      std::array<std::size_t, 5> cnt{};
      for (std::size_t i = 0; i < v.size(); ++i) {
        const std::uint8_t l = lab[i];
        if (l >= 1 && l <= 4) {
          sum[l].add(v[i]);
          ++cnt[l];
        }
      }
      for (Region r : kRegions) {
        const std::size_t l = static_cast<std::size_t>(r) + 1;
        if (cnt[l] == 0) {
          ++out.skipped;
          continue;
        }
        out.samples[static_cast<std::size_t>(m)][static_cast<std::size_t>(r)].push_back(sum[l].value() /
                                                                                        static_cast<double>(cnt[l]));
      }
    }
  }
  return out;
}

std::vector<ModalityAnalysis> analyze_intensities(const RegionIntensities& ri, double alpha) {
  std::vector<ModalityAnalysis> out;
  for (Modality m : kModalities) {
    ModalityAnalysis a;
    a.modality = m;
    std::vector<std::vector<double>> groups;
    for (Region r : kRegions)
      if (ri.at(m, r).size() >= 2) {
        groups.push_back(ri.at(m, r));
        a.regions.push_back(r);
      }
    if (groups.size() < 2) continue;
    a.anova = anova_oneway(groups);
    a.tukey = tukey_hsd(groups, alpha);
    out.push_back(std::move(a));
  }
  return out;
}

nlohmann::ordered_json to_json(const GmmFit& f) {
  nlohmann::ordered_json j;
  j["k"] = f.k;
  j["weights"] = f.weights;
  j["means"] = f.means;
  j["variances"] = f.variances;
  j["log_likelihood"] = f.log_likelihood;
  j["iterations"] = f.iterations;
  j["best_restart"] = f.best_restart;
  return j;
}

nlohmann::ordered_json to_json(const GammaFit& f) {
  nlohmann::ordered_json j;
  j["shape_k"] = f.shape_k;
  j["scale_theta"] = f.scale_theta;
  j["log_likelihood"] = f.log_likelihood;
  return j;
}

nlohmann::ordered_json to_json(const AnovaResult& a) {
  nlohmann::ordered_json j;
  j["f_statistic"] = a.f_statistic;
  j["p_value"] = a.p_value;
  j["df_between"] = a.df_between;
  j["df_within"] = a.df_within;
  return j;
}

nlohmann::ordered_json to_json(const TukeyResult& t) {
  nlohmann::ordered_json j;
  j["alpha"] = t.alpha;
  j["q_critical"] = t.q_critical;
  j["df_within"] = t.df_within;
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (const auto& p : t.pairs) {
    nlohmann::ordered_json e;
    e["group_a"] = p.group_a;
    e["group_b"] = p.group_b;
    e["mean_diff"] = p.mean_diff;
    e["q_statistic"] = p.q_statistic;
    e["p_value"] = p.p_value;
    e["significant"] = p.significant;
    pairs.push_back(e);
  }
  j["pairs"] = pairs;
  return j;
}

nlohmann::ordered_json to_json(const ModalityAnalysis& m) {
  nlohmann::ordered_json j;
  j["modality"] = std::string(to_string(m.modality));
  std::vector<std::string> regions;
  for (Region r : m.regions) regions.emplace_back(to_string(r));
  j["regions"] = regions;
  j["anova"] = to_json(m.anova);
  j["tukey"] = to_json(m.tukey);
  return j;
}

}  // namespace netseg
