#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "netseg/error.hpp"

namespace netseg {

/// Grid extent in (axial, coronal, sagittal) order; the sagittal index varies fastest in memory.
struct Shape3 {
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return d * h * w; }
  bool operator==(const Shape3&) const = default;
  Shape3 operator*(std::size_t f) const { return {d * f, h * f, w * f}; }
};

std::string to_string(const Shape3& s);

struct Spacing3 {
  double d = 1.0;
  double h = 1.0;
  double w = 1.0;
  bool operator==(const Spacing3&) const = default;
};

/// Dense 3D field with shape and voxel-spacing metadata.
template <class T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  explicit Grid(Shape3 shape, T fill = T{}, Spacing3 spacing = {})
      : shape_(shape), spacing_(spacing), data_(shape.size(), fill) {
    if (shape.d == 0 || shape.h == 0 || shape.w == 0)
      throw Error(ErrorCode::InvalidArgument, "grid dimensions must be positive, got " + to_string(shape));
  }
  Grid(Shape3 shape, std::vector<T> data, Spacing3 spacing = {})
      : shape_(shape), spacing_(spacing), data_(std::move(data)) {
    if (shape.d == 0 || shape.h == 0 || shape.w == 0)
      throw Error(ErrorCode::InvalidArgument, "grid dimensions must be positive, got " + to_string(shape));
    if (data_.size() != shape.size())
      throw Error(ErrorCode::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                                " does not match shape " + to_string(shape));
  }

  const Shape3& shape() const { return shape_; }
  const Spacing3& spacing() const { return spacing_; }
  void set_spacing(Spacing3 s) { spacing_ = s; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (i * shape_.h + j) * shape_.w + k; }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) { return data_[index(i, j, k)]; }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const { return data_[index(i, j, k)]; }
  T& operator[](std::size_t n) { return data_[n]; }
  const T& operator[](std::size_t n) const { return data_[n]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool operator==(const Grid&) const = default;

 private:
  Shape3 shape_{};
  Spacing3 spacing_{};
  std::vector<T> data_;
};

/// Scalar MRI intensities.
using Volume = Grid<float>;
/// Binary mask, voxels hold 0 or 1.
using Mask = Grid<std::uint8_t>;

enum class Schema { Brats2015, Brats2018, Brats2021, Unified4Label };

std::string_view to_string(Schema s);
/// Accepts brats2015, brats2018, brats2021, unified.
Schema parse_schema(std::string_view name);
bool label_valid(Schema s, std::uint8_t label);

/// Small-integer labels tagged with the BraTS schema that gives them meaning.
class LabelVolume : public Grid<std::uint8_t> {
 public:
  LabelVolume() = default;
  LabelVolume(Grid<std::uint8_t> grid, Schema schema);
  LabelVolume(Shape3 shape, Schema schema, Spacing3 spacing = {})
      : Grid<std::uint8_t>(shape, 0, spacing), schema_(schema) {}

  Schema schema() const { return schema_; }
  void set_schema(Schema s) { schema_ = s; }
  /// Throws InvalidLabel when a voxel carries a label outside the schema.
  void validate() const;

  bool operator==(const LabelVolume&) const = default;

 private:
  Schema schema_ = Schema::Unified4Label;
};

enum class Modality { T1 = 0, T2 = 1, T1C = 2, Flair = 3 };
inline constexpr std::array<Modality, 4> kModalities = {Modality::T1, Modality::T2, Modality::T1C, Modality::Flair};
std::string_view to_string(Modality m);

/// Four co-registered channels plus optional labels.
struct MultiModalRecord {
  std::string record_id;
  std::array<Volume, 4> channels;  // indexed by Modality
  std::optional<LabelVolume> labels;

  const Volume& channel(Modality m) const { return channels[static_cast<std::size_t>(m)]; }
  Volume& channel(Modality m) { return channels[static_cast<std::size_t>(m)]; }
  const Shape3& shape() const { return channels[0].shape(); }
  /// Throws ShapeMismatch or InvalidArgument (non-finite intensities).
  void validate() const;
};

struct Offset3 {
  std::size_t d = 0, h = 0, w = 0;
  bool operator==(const Offset3&) const = default;
};

/// Start offsets of a centered crop: floor((source - target) / 2) per axis.
Offset3 center_crop_offsets(const Shape3& source, const Shape3& target);

template <class T>
Grid<T> center_crop(const Grid<T>& vol, const Shape3& target) {
  const Offset3 o = center_crop_offsets(vol.shape(), target);
  Grid<T> out(target, T{}, vol.spacing());
  for (std::size_t i = 0; i < target.d; ++i)
    for (std::size_t j = 0; j < target.h; ++j) {
      const T* src = &vol(i + o.d, j + o.h, o.w);
      std::copy(src, src + target.w, &out(i, j, 0));
    }
  return out;
}

LabelVolume center_crop(const LabelVolume& labels, const Shape3& target);
MultiModalRecord center_crop(const MultiModalRecord& record, const Shape3& target);

/// Nearest-neighbour upscaling: every voxel becomes a factor^3 block of the same value.
template <class T>
Grid<T> upscale_repeat(const Grid<T>& vol, std::size_t factor) {
  if (factor == 0) throw Error(ErrorCode::InvalidArgument, "upscale factor must be >= 1");
  const Shape3 s = vol.shape();
  Spacing3 sp = vol.spacing();
  sp.d /= static_cast<double>(factor);
  sp.h /= static_cast<double>(factor);
  sp.w /= static_cast<double>(factor);
  Grid<T> out(s * factor, T{}, sp);
  for (std::size_t i = 0; i < out.shape().d; ++i)
    for (std::size_t j = 0; j < out.shape().h; ++j) {
      const T* src = &vol(i / factor, j / factor, 0);
      T* dst = &out(i, j, 0);
      for (std::size_t k = 0; k < out.shape().w; ++k) dst[k] = src[k / factor];
    }
  return out;
}

LabelVolume upscale_repeat(const LabelVolume& labels, std::size_t factor);

/// Voxel count per label value; labels 0..4 are always reported.
std::map<std::uint8_t, std::size_t> count_label_voxels(const Grid<std::uint8_t>& labels);

/// Z-score over the masked voxels; voxels outside the mask become 0.
Volume normalize_intensity(const Volume& vol, const Mask& brain_mask);

/// Voxels where any channel is nonzero.
Mask nonzero_mask(const MultiModalRecord& record);

/// Per-channel z-score over the nonzero brain region.
MultiModalRecord normalize_record(const MultiModalRecord& record);

std::size_t count_nonzero(const Mask& m);

}  // namespace netseg
