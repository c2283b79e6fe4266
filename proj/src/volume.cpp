#include "netseg/volume.hpp"

#include <algorithm>
#include <cmath>

namespace netseg {

std::string to_string(const Shape3& s) {
  return std::to_string(s.d) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

std::string_view to_string(Schema s) {
  switch (s) {
    case Schema::Brats2015: return "brats2015";
    case Schema::Brats2018: return "brats2018";
    case Schema::Brats2021: return "brats2021";
    case Schema::Unified4Label: return "unified";
  }
  return "unknown";
}

Schema parse_schema(std::string_view name) {
  if (name == "brats2015") return Schema::Brats2015;
  if (name == "brats2018") return Schema::Brats2018;
  if (name == "brats2021") return Schema::Brats2021;
  if (name == "unified") return Schema::Unified4Label;
  throw Error(ErrorCode::UnknownSchema, "unknown label schema '" + std::string(name) + "'");
}

bool label_valid(Schema s, std::uint8_t label) {
  if (label > 4) return false;
  // 2018 and 2021 leave label 3 empty
  if ((s == Schema::Brats2018 || s == Schema::Brats2021) && label == 3) return false;
  return true;
}

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::T1: return "t1";
    case Modality::T2: return "t2";
    case Modality::T1C: return "t1c";
    case Modality::Flair: return "flair";
  }
  return "unknown";
}

LabelVolume::LabelVolume(Grid<std::uint8_t> grid, Schema schema) : Grid<std::uint8_t>(std::move(grid)), schema_(schema) {
  validate();
}

void LabelVolume::validate() const {
  for (std::size_t n = 0; n < size(); ++n) {
    if (!label_valid(schema_, (*this)[n]))
      throw Error(ErrorCode::InvalidLabel, "label " + std::to_string((*this)[n]) + " is not valid for schema " +
                                               std::string(to_string(schema_)));
  }
}

void MultiModalRecord::validate() const {
  const Shape3 s = channels[0].shape();
  for (Modality m : kModalities) {
    const Volume& v = channel(m);
    if (v.shape() != s)
      throw Error(ErrorCode::ShapeMismatch, "record " + record_id + ": channel " + std::string(to_string(m)) +
                                                " has shape " + to_string(v.shape()) + ", expected " + to_string(s));
    for (float x : v.data())
      if (!std::isfinite(x))
        throw Error(ErrorCode::InvalidArgument,
                    "record " + record_id + ": non-finite intensity in channel " + std::string(to_string(m)));
  }
  if (labels && labels->shape() != s)
    throw Error(ErrorCode::ShapeMismatch,
                "record " + record_id + ": labels shape " + to_string(labels->shape()) + " vs " + to_string(s));
}

Offset3 center_crop_offsets(const Shape3& source, const Shape3& target) {
  if (target.d > source.d || target.h > source.h || target.w > source.w)
    throw Error(ErrorCode::TargetTooLarge, "crop target " + to_string(target) + " exceeds " + to_string(source));
  if (target.d == 0 || target.h == 0 || target.w == 0)
    throw Error(ErrorCode::InvalidArgument, "crop target must be positive");
  return {(source.d - target.d) / 2, (source.h - target.h) / 2, (source.w - target.w) / 2};
}

LabelVolume center_crop(const LabelVolume& labels, const Shape3& target) {
  LabelVolume out;
  static_cast<Grid<std::uint8_t>&>(out) = center_crop(static_cast<const Grid<std::uint8_t>&>(labels), target);
  out.set_schema(labels.schema());
  return out;
}

MultiModalRecord center_crop(const MultiModalRecord& record, const Shape3& target) {
  MultiModalRecord out;
  out.record_id = record.record_id;
  for (std::size_t c = 0; c < 4; ++c) out.channels[c] = center_crop(record.channels[c], target);
  if (record.labels) out.labels = center_crop(*record.labels, target);
  return out;
}

LabelVolume upscale_repeat(const LabelVolume& labels, std::size_t factor) {
  LabelVolume out;
  static_cast<Grid<std::uint8_t>&>(out) = upscale_repeat(static_cast<const Grid<std::uint8_t>&>(labels), factor);
  out.set_schema(labels.schema());
  return out;
}

std::map<std::uint8_t, std::size_t> count_label_voxels(const Grid<std::uint8_t>& labels) {
  std::array<std::size_t, 256> hist{};
  for (std::uint8_t v : labels.data()) ++hist[v];
  std::map<std::uint8_t, std::size_t> out;
  for (std::size_t l = 0; l < hist.size(); ++l)
    if (l <= 4 || hist[l] > 0) out[static_cast<std::uint8_t>(l)] = hist[l];
  return out;
}

std::size_t count_nonzero(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.data().begin(), m.data().end(), [](std::uint8_t v) { return v != 0; }));
}

Volume normalize_intensity(const Volume& vol, const Mask& brain_mask) {
  if (brain_mask.shape() != vol.shape())
    throw Error(ErrorCode::ShapeMismatch, "mask " + to_string(brain_mask.shape()) + " vs volume " + to_string(vol.shape()));
  // two-pass mean/variance in double
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < vol.size(); ++i)
    if (brain_mask[i]) {
      sum += vol[i];
      ++n;
    }
  if (n == 0) throw Error(ErrorCode::EmptyMask, "brain mask is empty");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < vol.size(); ++i)
    if (brain_mask[i]) {
      const double d = vol[i] - mean;
      ss += d * d;
    }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd > 0.0) || sd <= 1e-12 * std::max(1.0, std::abs(mean)))
    throw Error(ErrorCode::ZeroVariance, "masked intensities are constant");
  Volume out(vol.shape(), 0.0f, vol.spacing());
  for (std::size_t i = 0; i < vol.size(); ++i)
    if (brain_mask[i]) out[i] = static_cast<float>((vol[i] - mean) / sd);
  return out;
}

Mask nonzero_mask(const MultiModalRecord& record) {
  Mask m(record.shape(), 0, record.channels[0].spacing());
  for (const Volume& v : record.channels)
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] != 0.0f) m[i] = 1;
  return m;
}

MultiModalRecord normalize_record(const MultiModalRecord& record) {
  const Mask brain = nonzero_mask(record);
  MultiModalRecord out;
  out.record_id = record.record_id;
  out.labels = record.labels;
  for (std::size_t c = 0; c < 4; ++c) out.channels[c] = normalize_intensity(record.channels[c], brain);
  return out;
}

}  // namespace netseg
