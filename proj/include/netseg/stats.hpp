#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "netseg/volume.hpp"

namespace netseg {

// ---------------------------------------------------------------------------
// Gaussian mixture clustering

struct GmmOptions {
  double tolerance = 1e-8;  // stop when the log-likelihood changes by less than this
  int max_iterations = 500;
  double variance_floor = 1e-12;
};

/// Components are sorted by ascending mean; assignments index into that order.
struct GmmFit {
  std::size_t k = 0;
  std::vector<double> weights, means, variances;
  double log_likelihood = 0.0;
  std::vector<std::size_t> assignments;
  int iterations = 0;
  std::size_t best_restart = 0;
};

/// EM from the best of `restarts` k-means++ initialisations.
GmmFit fit_gmm_1d(std::span<const double> samples, std::size_t k, std::uint64_t seed, std::size_t restarts = 10,
                  const GmmOptions& options = {});

enum class VolumeGroup { Low = 0, Medium = 1, High = 2 };
std::string_view to_string(VolumeGroup g);

struct VolumePartition {
  std::map<std::string, VolumeGroup> groups;
  GmmFit fit;  // fitted on log(1 + volume)
};

/// Variance floor (log-volume units) used when partitioning; keeps singleton groups from
/// collapsing onto a zero-width component.
inline constexpr double kLogVolumeVarianceFloor = 1e-2;

VolumePartition partition_by_volume(const std::map<std::string, std::size_t>& volumes, std::uint64_t seed = 0,
                                    std::size_t restarts = 20);

// ---------------------------------------------------------------------------
// Gamma maximum likelihood

struct GammaFit {
  double shape_k = 0.0;
  double scale_theta = 0.0;
  double log_likelihood = 0.0;
  int iterations = 0;
};

GammaFit fit_gamma(std::span<const double> samples);
/// Gradient of the mean log-likelihood with respect to (k, theta).
std::array<double, 2> gamma_loglik_gradient(std::span<const double> samples, double k, double theta);
double gamma_cdf(double x, double k, double theta);
double gamma_pdf(double x, double k, double theta);

struct KsResult {
  double statistic = 0.0;
  double p_value = 0.0;
};

/// One-sample Kolmogorov–Smirnov test against a fitted gamma law.
KsResult ks_test_gamma(std::span<const double> samples, double k, double theta);
/// Asymptotic Kolmogorov survival function with the small-sample correction of Stephens.
double kolmogorov_pvalue(double statistic, std::size_t n);

/// CSV with columns bin_lo,bin_hi,count,density,fitted_density for external plotting.
std::string gamma_histogram_csv(std::span<const double> samples, const GammaFit& fit, std::size_t bins = 30);

// ---------------------------------------------------------------------------
// Analysis of variance

struct AnovaResult {
  double f_statistic = 0.0;
  double p_value = 1.0;
  std::size_t df_between = 0;
  std::size_t df_within = 0;
  double ms_between = 0.0;
  double ms_within = 0.0;
};

AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups);

/// Survival function of the F distribution through the regularized incomplete beta function.
double f_distribution_sf(double f, double df1, double df2);

/// CDF of the studentized range for k means and df error degrees of freedom, by quadrature.
double studentized_range_cdf(double q, std::size_t k, double df);
/// Critical value q such that cdf(q) = 1 - alpha. Uses the embedded table when quadrature fails.
double studentized_range_critical(double alpha, std::size_t k, double df);
/// Tabulated upper 5% points for k in [2, 10] and common df; nullopt outside the table.
std::optional<double> studentized_range_table_05(std::size_t k, std::size_t df);

struct TukeyPair {
  std::size_t group_a = 0;
  std::size_t group_b = 0;
  double mean_diff = 0.0;  // mean_a - mean_b
  double q_statistic = 0.0;
  double p_value = 1.0;
  bool significant = false;
};

struct TukeyResult {
  std::vector<TukeyPair> pairs;
  double alpha = 0.05;
  double q_critical = 0.0;
  double ms_within = 0.0;
  std::size_t df_within = 0;
};

TukeyResult tukey_hsd(const std::vector<std::vector<double>>& groups, double alpha = 0.05);

// ---------------------------------------------------------------------------
// Region intensities

/// Tumor compartments by their unified label: NCR 1, ED 2, NET 3, ET 4.
enum class Region { NCR = 0, ED = 1, NET = 2, ET = 3 };
inline constexpr std::array<Region, 4> kRegions = {Region::NCR, Region::ED, Region::NET, Region::ET};
std::string_view to_string(Region r);

struct RegionIntensities {
  /// samples[modality][region]: one mean normalized intensity per record with that region present.
  std::array<std::array<std::vector<double>, 4>, 4> samples;
  std::size_t skipped = 0;  // (record, region, modality) triples without voxels

  const std::vector<double>& at(Modality m, Region r) const {
    return samples[static_cast<std::size_t>(m)][static_cast<std::size_t>(r)];
  }
};

/// Records must carry unified labels; channels are expected to be normalized already.
RegionIntensities intensity_by_region(std::span<const MultiModalRecord> records);

struct ModalityAnalysis {
  Modality modality;
  AnovaResult anova;
  TukeyResult tukey;
  std::vector<Region> regions;  // group order used for the tests
};

/// One ANOVA and Tukey HSD per modality over the regions that have at least two samples.
std::vector<ModalityAnalysis> analyze_intensities(const RegionIntensities& ri, double alpha = 0.05);

nlohmann::ordered_json to_json(const GmmFit& f);
nlohmann::ordered_json to_json(const GammaFit& f);
nlohmann::ordered_json to_json(const AnovaResult& a);
nlohmann::ordered_json to_json(const TukeyResult& t);
nlohmann::ordered_json to_json(const ModalityAnalysis& m);

}  // namespace netseg
