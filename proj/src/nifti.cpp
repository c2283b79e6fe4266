#include "netseg/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#ifdef NETSEG_HAVE_ZLIB
#include <zlib.h>
#endif

namespace netseg {

namespace {

constexpr std::size_t kMaxVoxels = std::size_t{1} << 31;

template <class T>
T byteswap_value(T v) {
  std::array<std::uint8_t, sizeof(T)> b;
  std::memcpy(b.data(), &v, sizeof(T));
  std::reverse(b.begin(), b.end());
  std::memcpy(&v, b.data(), sizeof(T));
  return v;
}

/// Reads a little- or big-endian field at a fixed header offset.
class FieldReader {
 public:
  FieldReader(std::span<const std::uint8_t> bytes, bool big_endian) : bytes_(bytes), swap_(big_endian != (std::endian::native == std::endian::big)) {}

  template <class T>
  T get(std::size_t offset) const {
    T v;
    std::memcpy(&v, bytes_.data() + offset, sizeof(T));
    return swap_ ? byteswap_value(v) : v;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  bool swap_;
};

class FieldWriter {
 public:
  explicit FieldWriter(std::array<std::uint8_t, NiftiHeader::kSize>& out) : out_(out) {}

  template <class T>
  void put(std::size_t offset, T v) {
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    std::memcpy(out_.data() + offset, &v, sizeof(T));
  }

 private:
  std::array<std::uint8_t, NiftiHeader::kSize>& out_;
};

bool supported(std::int16_t code) {
  return code == static_cast<std::int16_t>(DataType::UInt8) || code == static_cast<std::int16_t>(DataType::Int16) ||
         code == static_cast<std::int16_t>(DataType::Float32);
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  const std::string p = path.string();
  if (ends_with(p, ".gz")) {
#ifdef NETSEG_HAVE_ZLIB
    gzFile f = gzopen(p.c_str(), "rb");
    if (!f) throw Error(ErrorCode::Io, "cannot open " + p);
    std::vector<std::uint8_t> out;
    std::array<std::uint8_t, 1 << 16> buf;
    int n = 0;
    while ((n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0) out.insert(out.end(), buf.begin(), buf.begin() + n);
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw Error(ErrorCode::TruncatedFile, "corrupt gzip stream in " + p);
    return out;
#else
    throw Error(ErrorCode::Io, "gzip support is disabled in this build: " + p);
#endif
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + p);
  in.seekg(0, std::ios::end);
  const auto len = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> out(len);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(len));
  if (!in) throw Error(ErrorCode::Io, "failed reading " + p);
  return out;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  const std::string p = path.string();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (ends_with(p, ".gz")) {
#ifdef NETSEG_HAVE_ZLIB
    // fixed compression level and no timestamp keep the output reproducible
    gzFile f = gzopen(p.c_str(), "wb6");
    if (!f) throw Error(ErrorCode::Io, "cannot create " + p);
    const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
    if (n != static_cast<int>(bytes.size())) throw Error(ErrorCode::Io, "failed writing " + p);
    return;
#else
    throw Error(ErrorCode::Io, "gzip support is disabled in this build: " + p);
#endif
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot create " + p);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "failed writing " + p);
}

double load_sample(const std::uint8_t* p, DataType dt, bool swap) {
  switch (dt) {
    case DataType::UInt8:
      return *p;
    case DataType::Int16: {
      std::int16_t v;
      std::memcpy(&v, p, 2);
      return swap ? byteswap_value(v) : v;
    }
    case DataType::Float32: {
      float v;
      std::memcpy(&v, p, 4);
      return swap ? byteswap_value(v) : v;
    }
  }
  return 0.0;
}

void check_representable(double v, DataType dt) {
  switch (dt) {
    case DataType::UInt8:
      if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v))
        throw Error(ErrorCode::ValueOutOfRange, "value " + std::to_string(v) + " does not fit unsigned 8-bit");
      return;
    case DataType::Int16:
      if (!(v >= -32768.0 && v <= 32767.0) || v != std::floor(v))
        throw Error(ErrorCode::ValueOutOfRange, "value " + std::to_string(v) + " does not fit signed 16-bit");
      return;
    case DataType::Float32:
      if (!std::isfinite(v) || std::abs(v) > std::numeric_limits<float>::max())
        throw Error(ErrorCode::ValueOutOfRange, "value " + std::to_string(v) + " does not fit 32-bit float");
      return;
  }
}

void store_sample(std::uint8_t* p, double v, DataType dt) {
  switch (dt) {
    case DataType::UInt8:
      *p = static_cast<std::uint8_t>(v);
      return;
    case DataType::Int16: {
      auto s = static_cast<std::int16_t>(v);
      if constexpr (std::endian::native == std::endian::big) s = byteswap_value(s);
      std::memcpy(p, &s, 2);
      return;
    }
    case DataType::Float32: {
      auto f = static_cast<float>(v);
      if constexpr (std::endian::native == std::endian::big) f = byteswap_value(f);
      std::memcpy(p, &f, 4);
      return;
    }
  }
}

template <class T>
Grid<double> to_double(const Grid<T>& g) {
  std::vector<double> v(g.data().begin(), g.data().end());
  return Grid<double>(g.shape(), std::move(v), g.spacing());
}

}  // namespace

std::size_t datatype_size(DataType dt) {
  switch (dt) {
    case DataType::UInt8: return 1;
    case DataType::Int16: return 2;
    case DataType::Float32: return 4;
  }
  return 0;
}

std::string_view to_string(DataType dt) {
  switch (dt) {
    case DataType::UInt8: return "uint8";
    case DataType::Int16: return "int16";
    case DataType::Float32: return "float32";
  }
  return "unknown";
}

DataType parse_datatype(std::string_view name) {
  if (name == "uint8") return DataType::UInt8;
  if (name == "int16") return DataType::Int16;
  if (name == "float32") return DataType::Float32;
  throw Error(ErrorCode::UnsupportedDatatype, "unsupported datatype '" + std::string(name) + "'");
}

Shape3 NiftiHeader::shape() const {
  auto ext = [&](int a) -> std::size_t { return a <= dim[0] ? static_cast<std::size_t>(dim[a]) : 1; };
  return {ext(3), ext(2), ext(1)};
}

Spacing3 NiftiHeader::spacing() const {
  auto sp = [&](int a) -> double {
    const double v = std::abs(static_cast<double>(pixdim[a]));
    return (a <= dim[0] && std::isfinite(v) && v > 0.0) ? v : 1.0;
  };
  return {sp(3), sp(2), sp(1)};
}

std::size_t NiftiHeader::voxel_count() const {
  std::size_t n = 1;
  for (int a = 1; a <= dim[0]; ++a) n *= static_cast<std::size_t>(dim[a]);
  return n;
}

NiftiHeader parse_nifti_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < NiftiHeader::kSize)
    throw Error(ErrorCode::TruncatedFile, "header needs 348 bytes, got " + std::to_string(bytes.size()));

  NiftiHeader h;
  // byte order: dim[0] must lie in [1, 7]
  {
    const auto le = FieldReader(bytes, false).get<std::int16_t>(40);
    const auto be = FieldReader(bytes, true).get<std::int16_t>(40);
    if (le >= 1 && le <= 7)
      h.big_endian = false;
    else if (be >= 1 && be <= 7)
      h.big_endian = true;
    else
      throw Error(ErrorCode::DimensionOverflow, "dim[0] outside [1, 7] in either byte order");
  }
  const FieldReader r(bytes, h.big_endian);

  if (r.get<std::int32_t>(0) != static_cast<std::int32_t>(NiftiHeader::kSize))
    throw Error(ErrorCode::BadMagic, "sizeof_hdr is not 348");
  std::memcpy(h.magic.data(), bytes.data() + 344, 4);
  if (std::memcmp(h.magic.data(), "n+1\0", 4) != 0) {
    if (std::memcmp(h.magic.data(), "ni1\0", 4) == 0)
      throw Error(ErrorCode::BadMagic, "two-file NIfTI (hdr/img pair) is not supported");
    throw Error(ErrorCode::BadMagic, "magic is not \"n+1\"");
  }

  for (int a = 0; a < 8; ++a) h.dim[a] = r.get<std::int16_t>(40 + 2 * a);
  h.datatype = r.get<std::int16_t>(70);
  h.bitpix = r.get<std::int16_t>(72);
  for (int a = 0; a < 8; ++a) h.pixdim[a] = r.get<float>(76 + 4 * a);
  h.vox_offset = r.get<float>(108);
  h.scl_slope = r.get<float>(112);
  h.scl_inter = r.get<float>(116);
  h.xyzt_units = static_cast<std::int8_t>(bytes[123]);
  {
    const char* d = reinterpret_cast<const char*>(bytes.data() + 148);
    h.descrip.assign(d, strnlen(d, 80));
  }
  h.qform_code = r.get<std::int16_t>(252);
  h.sform_code = r.get<std::int16_t>(254);
  for (int i = 0; i < 6; ++i) h.quatern[i] = r.get<float>(256 + 4 * i);
  for (int i = 0; i < 12; ++i) h.srow[i] = r.get<float>(280 + 4 * i);

  std::size_t count = 1;
  for (int a = 1; a <= h.dim[0]; ++a) {
    if (h.dim[a] < 1) throw Error(ErrorCode::DimensionOverflow, "dim[" + std::to_string(a) + "] is not positive");
    if (a > 3 && h.dim[a] != 1)
      throw Error(ErrorCode::DimensionOverflow, "only 3D volumes are supported (dim[" + std::to_string(a) + "] > 1)");
    count *= static_cast<std::size_t>(h.dim[a]);
    if (count > kMaxVoxels) throw Error(ErrorCode::DimensionOverflow, "voxel count exceeds 2^31");
  }
  if (!supported(h.datatype))
    throw Error(ErrorCode::UnsupportedDatatype, "datatype code " + std::to_string(h.datatype) + " is not supported");
  if (h.bitpix != 0 && static_cast<std::size_t>(h.bitpix) != 8 * datatype_size(static_cast<DataType>(h.datatype)))
    throw Error(ErrorCode::UnsupportedDatatype, "bitpix " + std::to_string(h.bitpix) + " disagrees with datatype");
  if (!std::isfinite(h.vox_offset) || h.vox_offset < static_cast<float>(NiftiHeader::kSize) || h.vox_offset > 1e9f)
    throw Error(ErrorCode::TruncatedFile, "vox_offset is invalid");
  if (!std::isfinite(h.scl_slope) || !std::isfinite(h.scl_inter))
    throw Error(ErrorCode::ValueOutOfRange, "non-finite intensity scaling");
  return h;
}

std::array<std::uint8_t, NiftiHeader::kSize> serialize_nifti_header(const NiftiHeader& h) {
  std::array<std::uint8_t, NiftiHeader::kSize> out{};
  FieldWriter w(out);
  w.put<std::int32_t>(0, static_cast<std::int32_t>(NiftiHeader::kSize));
  out[38] = 'r';  // regular
  for (int a = 0; a < 8; ++a) w.put<std::int16_t>(40 + 2 * a, h.dim[a]);
  w.put<std::int16_t>(70, h.datatype);
  w.put<std::int16_t>(72, h.bitpix);
  for (int a = 0; a < 8; ++a) w.put<float>(76 + 4 * a, h.pixdim[a]);
  w.put<float>(108, h.vox_offset);
  w.put<float>(112, h.scl_slope);
  w.put<float>(116, h.scl_inter);
  out[123] = static_cast<std::uint8_t>(h.xyzt_units);
  std::memcpy(out.data() + 148, h.descrip.data(), std::min<std::size_t>(h.descrip.size(), 79));
  w.put<std::int16_t>(252, h.qform_code);
  w.put<std::int16_t>(254, h.sform_code);
  for (int i = 0; i < 6; ++i) w.put<float>(256 + 4 * i, h.quatern[i]);
  for (int i = 0; i < 12; ++i) w.put<float>(280 + 4 * i, h.srow[i]);
  std::memcpy(out.data() + 344, h.magic.data(), 4);
  return out;
}

Grid<double> decode_nifti(std::span<const std::uint8_t> file, NiftiHeader* header_out) {
  const NiftiHeader h = parse_nifti_header(file);
  const auto dt = static_cast<DataType>(h.datatype);
  const std::size_t count = h.voxel_count();
  const std::size_t offset = static_cast<std::size_t>(h.vox_offset);
  const std::size_t bytes = count * datatype_size(dt);
  if (file.size() < offset || file.size() - offset < bytes)
    throw Error(ErrorCode::TruncatedFile, "header declares " + std::to_string(bytes) + " data bytes at offset " +
                                              std::to_string(offset) + ", file has " + std::to_string(file.size()));

  const bool swap = h.big_endian != (std::endian::native == std::endian::big);
  const bool scaled = h.scl_slope != 0.0f;
  std::vector<double> values(count);
  const std::uint8_t* p = file.data() + offset;
  const std::size_t step = datatype_size(dt);
  for (std::size_t n = 0; n < count; ++n) {
    double v = load_sample(p + n * step, dt, swap);
    if (scaled) v = v * h.scl_slope + h.scl_inter;
    values[n] = v;
  }
  if (header_out) *header_out = h;
  return Grid<double>(h.shape(), std::move(values), h.spacing());
}

std::vector<std::uint8_t> encode_nifti(const Grid<double>& values, DataType dt) {
  const Shape3 s = values.shape();
  if (s.d > 32767 || s.h > 32767 || s.w > 32767)
    throw Error(ErrorCode::DimensionOverflow, "extent exceeds NIfTI-1 limit: " + to_string(s));
  for (double v : values.data()) check_representable(v, dt);

  NiftiHeader h;
  h.dim = {3, static_cast<std::int16_t>(s.w), static_cast<std::int16_t>(s.h), static_cast<std::int16_t>(s.d), 1, 1, 1, 1};
  h.datatype = static_cast<std::int16_t>(dt);
  h.bitpix = static_cast<std::int16_t>(8 * datatype_size(dt));
  const Spacing3 sp = values.spacing();
  h.pixdim = {1.0f, static_cast<float>(sp.w), static_cast<float>(sp.h), static_cast<float>(sp.d), 0, 0, 0, 0};
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // millimetres
  h.descrip = "netseg";

  const auto header = serialize_nifti_header(h);
  std::vector<std::uint8_t> out(352 + values.size() * datatype_size(dt), 0);
  std::copy(header.begin(), header.end(), out.begin());
  const std::size_t step = datatype_size(dt);
  for (std::size_t n = 0; n < values.size(); ++n) store_sample(out.data() + 352 + n * step, values[n], dt);
  return out;
}

Volume read_volume(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const Grid<double> g = decode_nifti(bytes);
  std::vector<float> v(g.size());
  for (std::size_t n = 0; n < g.size(); ++n) {
    if (!std::isfinite(g[n]) || std::abs(g[n]) > std::numeric_limits<float>::max())
      throw Error(ErrorCode::ValueOutOfRange, "non-finite voxel value in " + path.string());
    v[n] = static_cast<float>(g[n]);
  }
  return Volume(g.shape(), std::move(v), g.spacing());
}

LabelVolume read_labels(const std::filesystem::path& path, Schema schema) {
  const auto bytes = read_file(path);
  const Grid<double> g = decode_nifti(bytes);
  std::vector<std::uint8_t> v(g.size());
  for (std::size_t n = 0; n < g.size(); ++n) {
    const double x = g[n];
    if (!(x >= 0.0 && x <= 4.0) || x != std::floor(x))
      throw Error(ErrorCode::InvalidLabel, "voxel value " + std::to_string(x) + " is not a label in " + path.string());
    v[n] = static_cast<std::uint8_t>(x);
  }
  return LabelVolume(Grid<std::uint8_t>(g.shape(), std::move(v), g.spacing()), schema);
}

Mask read_mask(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const Grid<double> g = decode_nifti(bytes);
  std::vector<std::uint8_t> v(g.size());
  for (std::size_t n = 0; n < g.size(); ++n) v[n] = g[n] != 0.0 ? 1 : 0;
  return Mask(g.shape(), std::move(v), g.spacing());
}

void write_volume(const Volume& vol, const std::filesystem::path& path, DataType dt) {
  write_file(path, encode_nifti(to_double(vol), dt));
}

void write_labels(const LabelVolume& labels, const std::filesystem::path& path) {
  write_file(path, encode_nifti(to_double<std::uint8_t>(labels), DataType::UInt8));
}

void write_mask(const Mask& mask, const std::filesystem::path& path) {
  write_file(path, encode_nifti(to_double(mask), DataType::UInt8));
}

void write_raw(const Grid<double>& values, const std::filesystem::path& stem, DataType dt) {
  for (double v : values.data()) check_representable(v, dt);
  const std::size_t step = datatype_size(dt);
  std::vector<std::uint8_t> blob(values.size() * step);
  for (std::size_t n = 0; n < values.size(); ++n) store_sample(blob.data() + n * step, values[n], dt);
  const Shape3 s = values.shape();
  const Spacing3 sp = values.spacing();
  nlohmann::ordered_json meta;
  meta["shape"] = {s.d, s.h, s.w};
  meta["spacing"] = {sp.d, sp.h, sp.w};
  meta["datatype"] = std::string(to_string(dt));
  meta["byte_order"] = "little";
  const std::string text = meta.dump(2) + "\n";
  auto json_path = stem;
  json_path += ".json";
  auto raw_path = stem;
  raw_path += ".raw";
  write_file(json_path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  write_file(raw_path, blob);
}

Grid<double> read_raw(const std::filesystem::path& stem, DataType* dt_out) {
  auto json_path = stem;
  json_path += ".json";
  auto raw_path = stem;
  raw_path += ".raw";
  const auto meta_bytes = read_file(json_path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_bytes.begin(), meta_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, "bad raw sidecar " + json_path.string() + ": " + e.what());
  }
  try {
    const auto shape = meta.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3) throw Error(ErrorCode::DimensionOverflow, "raw sidecar shape must have 3 entries");
    const Shape3 s{shape[0], shape[1], shape[2]};
    if (s.d == 0 || s.h == 0 || s.w == 0 || s.d > kMaxVoxels || s.h > kMaxVoxels || s.w > kMaxVoxels ||
        s.d * s.h > kMaxVoxels || s.size() > kMaxVoxels)
      throw Error(ErrorCode::DimensionOverflow, "raw sidecar shape is invalid");
    Spacing3 sp;
    if (meta.contains("spacing")) {
      const auto v = meta.at("spacing").get<std::vector<double>>();
      if (v.size() != 3) throw Error(ErrorCode::DimensionOverflow, "raw sidecar spacing must have 3 entries");
      sp = {v[0], v[1], v[2]};
    }
    const DataType dt = parse_datatype(meta.at("datatype").get<std::string>());
    const auto blob = read_file(raw_path);
    const std::size_t step = datatype_size(dt);
    if (blob.size() < s.size() * step)
      throw Error(ErrorCode::TruncatedFile, "raw blob is shorter than the declared shape");
    const bool swap = std::endian::native == std::endian::big;
    std::vector<double> values(s.size());
    for (std::size_t n = 0; n < values.size(); ++n) values[n] = load_sample(blob.data() + n * step, dt, swap);
    if (dt_out) *dt_out = dt;
    return Grid<double>(s, std::move(values), sp);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, "bad raw sidecar " + json_path.string() + ": " + e.what());
  }
}

}  // namespace netseg
