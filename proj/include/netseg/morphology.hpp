#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "netseg/volume.hpp"

namespace netseg {

/// A symmetric binary structuring element. Either a neighbourhood ball (connectivity 6, 18
/// or 26, applied `radius` times) or an explicit odd-sized kernel.
class StructuringElement {
 public:
  static StructuringElement ball(int connectivity, int radius = 1);
  /// Kernel values in (d, h, w) order with odd extents; throws InvalidArgument if asymmetric.
  static StructuringElement kernel(Shape3 extent, std::vector<std::uint8_t> values);

  int connectivity() const { return connectivity_; }
  int radius() const { return radius_; }
  bool is_ball() const { return connectivity_ != 0; }
  /// All offsets of the element, centre included.
  std::vector<std::array<int, 3>> offsets() const;

 private:
  int connectivity_ = 6;
  int radius_ = 1;
  std::vector<std::array<int, 3>> kernel_offsets_;
};

/// Voxels outside the grid count as background for every operator.
Mask erode(const Mask& mask, const StructuringElement& se);
Mask dilate(const Mask& mask, const StructuringElement& se);
Mask open(const Mask& mask, const StructuringElement& se);
Mask close(const Mask& mask, const StructuringElement& se);

/// Drops connected components smaller than min_voxels.
Mask remove_small_components(const Mask& mask, std::size_t min_voxels, int connectivity);

/// Connected-component sizes in label order.
std::vector<std::size_t> component_sizes(const Mask& mask, int connectivity);

enum class FilterOp { Erode, Dilate, Open, Close, RemoveSmall };

struct FilterStep {
  FilterOp op = FilterOp::Open;
  int connectivity = 6;
  int radius = 1;
  std::size_t min_voxels = 0;

  bool operator==(const FilterStep&) const = default;
};

using FilterSequence = std::vector<FilterStep>;

/// open(6,1) -> close(6,1) -> remove_small(min 10, 26-connected)
FilterSequence default_net_filters();
Mask apply_filters(const Mask& mask, const FilterSequence& steps);

/// Config form: [{"op": "open", "connectivity": 6, "radius": 1}, {"op": "remove_small", "min_voxels": 10}]
FilterSequence filters_from_json(const nlohmann::json& j);
nlohmann::json filters_to_json(const FilterSequence& steps);

}  // namespace netseg
