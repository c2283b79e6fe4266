#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "netseg/volume.hpp"

namespace netseg {

enum class DataType : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Float32 = 16,
};

std::size_t datatype_size(DataType dt);
std::string_view to_string(DataType dt);
DataType parse_datatype(std::string_view name);

/// The fields of a single-file NIfTI-1 header that this codec interprets.
/// Orientation fields are carried through unchanged.
struct NiftiHeader {
  static constexpr std::size_t kSize = 348;

  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = 0;
  std::int16_t bitpix = 0;
  std::array<float, 8> pixdim{};
  float vox_offset = 352.0f;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  std::int8_t xyzt_units = 0;
  std::string descrip;
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  std::array<float, 6> quatern{};  // b, c, d, qoffset x, y, z
  std::array<float, 12> srow{};    // srow_x, srow_y, srow_z
  std::array<char, 4> magic{'n', '+', '1', '\0'};
  bool big_endian = false;

  /// Spatial extent, trailing singleton dimensions folded away.
  Shape3 shape() const;
  Spacing3 spacing() const;
  std::size_t voxel_count() const;
};

/// Parses and validates a header from its 348 raw bytes.
NiftiHeader parse_nifti_header(std::span<const std::uint8_t> bytes);
std::array<std::uint8_t, NiftiHeader::kSize> serialize_nifti_header(const NiftiHeader& h);

/// Decodes a whole in-memory .nii file; the byte buffer is the only allocation sized by the input.
Grid<double> decode_nifti(std::span<const std::uint8_t> file, NiftiHeader* header_out = nullptr);
std::vector<std::uint8_t> encode_nifti(const Grid<double>& values, DataType dt);

Volume read_volume(const std::filesystem::path& path);
LabelVolume read_labels(const std::filesystem::path& path, Schema schema);
Mask read_mask(const std::filesystem::path& path);

/// Throws ValueOutOfRange when a value does not fit the integer datatype.
void write_volume(const Volume& vol, const std::filesystem::path& path, DataType dt = DataType::Float32);
void write_labels(const LabelVolume& labels, const std::filesystem::path& path);
void write_mask(const Mask& mask, const std::filesystem::path& path);

/// Raw format: `<stem>.json` sidecar (shape, spacing, datatype) plus `<stem>.raw` little-endian blob.
void write_raw(const Grid<double>& values, const std::filesystem::path& stem, DataType dt);
Grid<double> read_raw(const std::filesystem::path& stem, DataType* dt_out = nullptr);

}  // namespace netseg
