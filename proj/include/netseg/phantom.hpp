#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "netseg/volume.hpp"

namespace netseg {

enum class PhantomRegion { Background = 0, Healthy = 1, NCR = 2, ED = 3, NET = 4, ET = 5 };
inline constexpr std::size_t kPhantomRegions = 6;
std::string_view to_string(PhantomRegion r);

struct Intensity {
  double mean = 0.0;
  double sd = 0.0;
};

/// table[modality][region]
using IntensityTable = std::array<std::array<Intensity, kPhantomRegions>, 4>;

/// Synthetic defaults: NET matches ED in T2 and ET in T1, and stands apart in T1C and FLAIR.
IntensityTable default_intensity_table();

/// Radii are in units of the ellipsoid level function: a voxel at normalized radius r (after
/// anisotropic scaling and radial jitter) belongs to the first shell whose radius exceeds r.
struct PhantomGeometry {
  std::array<double, 3> center{0.5, 0.5, 0.5};  // fraction of each extent
  std::array<double, 3> axes{1.0, 1.0, 1.0};    // anisotropic scale per axis
  double ncr_radius = 3.0;
  double et_radius = 5.0;
  double net_radius = 9.0;
  double ed_radius = 13.0;
  double brain_fraction = 0.92;  // brain ellipsoid semi-axis as a fraction of half extent
  double jitter = 0.15;          // amplitude of the sinusoidal radial perturbation
};

struct PhantomSpec {
  Shape3 shape{32, 64, 64};
  Spacing3 spacing{};
  std::uint64_t seed = 0;
  PhantomGeometry geometry;
  IntensityTable intensities = default_intensity_table();
  double net_volume_scale = 1.0;  // multiplier for the NET rim thickness
  /// When set, NET is exactly this many voxels: the ones just outside the ET shell.
  std::optional<std::size_t> target_net_voxels;
  double gain_jitter = 0.0;  // per-channel multiplicative gain sd

  /// Throws InvalidSpec.
  void validate() const;
};

nlohmann::ordered_json to_json(const PhantomSpec& s);
PhantomSpec phantom_spec_from_json(const nlohmann::json& j);

/// Unified labels only; cheap enough for large cohorts.
LabelVolume generate_labels(const PhantomSpec& spec);
/// Labels plus the four channels drawn from the intensity table.
MultiModalRecord generate(const PhantomSpec& spec, std::string record_id = "phantom");

struct CohortSpec {
  std::size_t n = 1;
  PhantomSpec base;
  double gamma_shape = 2.0;
  double gamma_scale = 1500.0;  // NET volume in voxels ~ Gamma(shape, scale)
  std::uint64_t seed = 0;
  double center_jitter = 0.05;  // fraction of extent
};

nlohmann::ordered_json to_json(const CohortSpec& c);
CohortSpec cohort_spec_from_json(const nlohmann::json& j);

/// Per-record specs: NET volume drawn from the gamma law, tumor radii scaled by the cube root of
/// volume over mean volume, derived seeds per record.
std::vector<PhantomSpec> cohort_specs(const CohortSpec& c);
std::vector<MultiModalRecord> generate_cohort(const CohortSpec& c);

std::string cohort_record_id(std::size_t i);

}  // namespace netseg
