#pragma once

// NIfTI-1 (.nii / .nii.gz) volumes and masks, plus slicing along the
// acquisition axis.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <zlib.h>

#include "fetalbet/error.hpp"
#include "fetalbet/image.hpp"

namespace fetalbet {

#pragma pack(push, 1)
struct NiftiHeader {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(NiftiHeader) == 348);

namespace nifti_type {
inline constexpr std::int16_t uint8 = 2;
inline constexpr std::int16_t int16 = 4;
inline constexpr std::int16_t int32 = 8;
inline constexpr std::int16_t float32 = 16;
inline constexpr std::int16_t float64 = 64;
inline constexpr std::int16_t int8 = 256;
inline constexpr std::int16_t uint16 = 512;
inline constexpr std::int16_t uint32 = 768;
}  // namespace nifti_type

using Dims3 = std::array<std::size_t, 3>;
using Spacing3 = std::array<double, 3>;

// Header with axis-aligned geometry; used when no reference file exists.
inline NiftiHeader make_nifti_header(const Dims3& dims, const Spacing3& spacing) {
  NiftiHeader h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  for (int i = 0; i < 3; ++i) {
    h.dim[i + 1] = static_cast<std::int16_t>(dims[static_cast<std::size_t>(i)]);
    h.pixdim[i + 1] = static_cast<float>(spacing[static_cast<std::size_t>(i)]);
  }
  for (int i = 4; i < 8; ++i) {
    h.dim[i] = 1;
    h.pixdim[i] = 1.0f;
  }
  h.pixdim[0] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // mm
  h.qform_code = 1;
  h.sform_code = 1;
  h.srow_x[0] = static_cast<float>(spacing[0]);
  h.srow_y[1] = static_cast<float>(spacing[1]);
  h.srow_z[2] = static_cast<float>(spacing[2]);
  std::memcpy(h.magic, "n+1\0", 4);
  return h;
}

struct Volume {
  std::vector<float> voxels;  // x fastest, then y, then z
  Dims3 dims{0, 0, 0};
  Spacing3 spacing{1.0, 1.0, 1.0};
  int slice_axis = 2;
  std::string source_path;
  NiftiHeader header{};

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x + dims[0] * (y + dims[1] * z);
  }
  float& at(std::size_t x, std::size_t y, std::size_t z) { return voxels[index(x, y, z)]; }
  float at(std::size_t x, std::size_t y, std::size_t z) const { return voxels[index(x, y, z)]; }
  std::size_t size() const noexcept { return dims[0] * dims[1] * dims[2]; }
  std::size_t slice_count() const noexcept { return dims[static_cast<std::size_t>(slice_axis)]; }

  static Volume create(const Dims3& dims, const Spacing3& spacing, int slice_axis = -1) {
    Volume v;
    v.dims = dims;
    v.spacing = spacing;
    v.voxels.assign(dims[0] * dims[1] * dims[2], 0.0f);
    v.header = make_nifti_header(dims, spacing);
    v.slice_axis = slice_axis >= 0 ? slice_axis : 0;
    if (slice_axis < 0) {
      for (int a = 1; a < 3; ++a)
        if (spacing[static_cast<std::size_t>(a)] >= spacing[static_cast<std::size_t>(v.slice_axis)])
          v.slice_axis = a;
    }
    return v;
  }
};

struct MaskVolume {
  std::vector<std::uint8_t> labels;
  Dims3 dims{0, 0, 0};
  Spacing3 spacing{1.0, 1.0, 1.0};

  std::size_t size() const noexcept { return dims[0] * dims[1] * dims[2]; }
  static MaskVolume like(const Volume& v) {
    return MaskVolume{std::vector<std::uint8_t>(v.size(), 0), v.dims, v.spacing};
  }
};

// Lowest-resolution (largest spacing) axis; ties go to the later axis.
inline int default_slice_axis(const Spacing3& spacing) {
  int axis = 0;
  for (int a = 1; a < 3; ++a)
    if (spacing[static_cast<std::size_t>(a)] >= spacing[static_cast<std::size_t>(axis)]) axis = a;
  return axis;
}

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline std::vector<unsigned char> read_all(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw IoError("cannot read '" + path + "': no such file");
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open '" + path + "'");
  std::vector<unsigned char> out;
  std::array<unsigned char, 1 << 16> buf{};
  for (;;) {
    const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      gzclose(f);
      throw IoError("read error in '" + path + "'");
    }
    if (n == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  }
  gzclose(f);
  return out;
}

inline void write_all(const std::string& path, const std::vector<unsigned char>& bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty() && !std::filesystem::exists(parent))
    throw IoError("cannot write '" + path + "': directory does not exist");
  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb6");
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    const int rc = gzclose(f);
    if (n != static_cast<int>(bytes.size()) || rc != Z_OK)
      throw IoError("write failed for '" + path + "'");
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

template <typename T>
void byteswap(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  std::reverse(p, p + sizeof(T));
}

inline void swap_header(NiftiHeader& h) {
  byteswap(h.sizeof_hdr);
  byteswap(h.extents);
  byteswap(h.session_error);
  for (auto& d : h.dim) byteswap(d);
  byteswap(h.intent_p1);
  byteswap(h.intent_p2);
  byteswap(h.intent_p3);
  byteswap(h.intent_code);
  byteswap(h.datatype);
  byteswap(h.bitpix);
  byteswap(h.slice_start);
  for (auto& p : h.pixdim) byteswap(p);
  byteswap(h.vox_offset);
  byteswap(h.scl_slope);
  byteswap(h.scl_inter);
  byteswap(h.slice_end);
  byteswap(h.cal_max);
  byteswap(h.cal_min);
  byteswap(h.slice_duration);
  byteswap(h.toffset);
  byteswap(h.glmax);
  byteswap(h.glmin);
  byteswap(h.qform_code);
  byteswap(h.sform_code);
  byteswap(h.quatern_b);
  byteswap(h.quatern_c);
  byteswap(h.quatern_d);
  byteswap(h.qoffset_x);
  byteswap(h.qoffset_y);
  byteswap(h.qoffset_z);
  for (auto& s : h.srow_x) byteswap(s);
  for (auto& s : h.srow_y) byteswap(s);
  for (auto& s : h.srow_z) byteswap(s);
}

template <typename T>
double read_scalar(const unsigned char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap) byteswap(v);
  return static_cast<double>(v);
}

inline std::size_t type_size(std::int16_t datatype) {
  switch (datatype) {
    case nifti_type::uint8:
    case nifti_type::int8: return 1;
    case nifti_type::int16:
    case nifti_type::uint16: return 2;
    case nifti_type::int32:
    case nifti_type::uint32:
    case nifti_type::float32: return 4;
    case nifti_type::float64: return 8;
    default: return 0;
  }
}

inline double decode(const unsigned char* p, std::int16_t datatype, bool swap) {
  switch (datatype) {
    case nifti_type::uint8: return read_scalar<std::uint8_t>(p, swap);
    case nifti_type::int8: return read_scalar<std::int8_t>(p, swap);
    case nifti_type::int16: return read_scalar<std::int16_t>(p, swap);
    case nifti_type::uint16: return read_scalar<std::uint16_t>(p, swap);
    case nifti_type::int32: return read_scalar<std::int32_t>(p, swap);
    case nifti_type::uint32: return read_scalar<std::uint32_t>(p, swap);
    case nifti_type::float32: return read_scalar<float>(p, swap);
    case nifti_type::float64: return read_scalar<double>(p, swap);
    default: return 0.0;
  }
}

struct RawNifti {
  NiftiHeader header{};
  std::vector<unsigned char> bytes;
  std::size_t data_offset = 0;
  bool swapped = false;
};

inline RawNifti read_nifti(const std::string& path) {
  RawNifti raw;
  raw.bytes = read_all(path);
  if (raw.bytes.size() < sizeof(NiftiHeader))
    throw FormatError("'" + path + "' is too short to be a NIfTI file");
  std::memcpy(&raw.header, raw.bytes.data(), sizeof(NiftiHeader));
  if (raw.header.sizeof_hdr != 348) {
    swap_header(raw.header);
    raw.swapped = true;
    if (raw.header.sizeof_hdr != 348) throw FormatError("'" + path + "' is not a NIfTI-1 file");
  }
  if (std::memcmp(raw.header.magic, "n+1", 3) != 0)
    throw FormatError("'" + path + "': only single-file NIfTI-1 (n+1) is supported");
  raw.data_offset = static_cast<std::size_t>(std::max(352.0f, raw.header.vox_offset));
  return raw;
}

}  // namespace detail

// Reads every 3D volume in a file: one for 3D data, one per timepoint for 4D.
inline std::vector<Volume> load_volumes(const std::string& path,
                                        std::optional<int> slice_axis = std::nullopt) {
  auto raw = detail::read_nifti(path);
  const NiftiHeader& h = raw.header;
  const int ndim = h.dim[0];
  if (ndim < 3 || ndim > 7)
    throw FormatError("'" + path + "' holds " + std::to_string(ndim) +
                      "D data; a 3D volume is required");
  for (int i = 5; i <= ndim; ++i)
    if (h.dim[i] > 1) throw FormatError("'" + path + "' has more than 4 dimensions");
  Dims3 dims{};
  Spacing3 spacing{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (h.dim[i + 1] < 1) throw FormatError("'" + path + "' has a non-positive dimension");
    dims[i] = static_cast<std::size_t>(h.dim[i + 1]);
    spacing[i] = static_cast<double>(std::fabs(h.pixdim[i + 1]));
    if (!(spacing[i] > 0) || !std::isfinite(spacing[i]))
      throw FormatError("'" + path + "' has non-positive voxel spacing");
  }
  const std::size_t frames = ndim >= 4 ? static_cast<std::size_t>(std::max<std::int16_t>(1, h.dim[4])) : 1;
  const std::size_t tsize = detail::type_size(h.datatype);
  if (tsize == 0)
    throw FormatError("'" + path + "' uses unsupported datatype " + std::to_string(h.datatype));
  const std::size_t per_volume = dims[0] * dims[1] * dims[2];
  if (raw.bytes.size() < raw.data_offset + per_volume * frames * tsize)
    throw FormatError("'" + path + "' is truncated");
  const bool scaled = h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
  int axis = slice_axis.value_or(default_slice_axis(spacing));
  detail::require(axis >= 0 && axis < 3, "slice axis must be 0, 1 or 2");

  std::vector<Volume> out;
  for (std::size_t t = 0; t < frames; ++t) {
    Volume v;
    v.dims = dims;
    v.spacing = spacing;
    v.slice_axis = axis;
    v.source_path = path;
    v.header = h;
    v.header.dim[0] = 3;
    v.header.dim[4] = 1;
    v.voxels.resize(per_volume);
    const unsigned char* base = raw.bytes.data() + raw.data_offset + t * per_volume * tsize;
    for (std::size_t i = 0; i < per_volume; ++i) {
      double value = detail::decode(base + i * tsize, h.datatype, raw.swapped);
      if (scaled) value = value * h.scl_slope + h.scl_inter;
      if (!std::isfinite(value))
        throw ValidationError("'" + path + "' contains non-finite voxel values");
      v.voxels[i] = static_cast<float>(value);
    }
    out.push_back(std::move(v));
  }
  return out;
}

// Loads a single 3D volume. 4D files with more than one timepoint must go
// through load_volumes().
inline Volume load_volume(const std::string& path, std::optional<int> slice_axis = std::nullopt) {
  auto all = load_volumes(path, slice_axis);
  if (all.size() != 1)
    throw FormatError("'" + path + "' is 4D with " + std::to_string(all.size()) +
                      " timepoints; load it with load_volumes()");
  return std::move(all.front());
}

inline MaskVolume load_mask(const std::string& path) {
  Volume v = load_volume(path);
  MaskVolume m{std::vector<std::uint8_t>(v.size()), v.dims, v.spacing};
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float value = v.voxels[i];
    if (value != 0.0f && value != 1.0f)
      throw ValidationError("'" + path + "' is not a binary mask (found value " +
                            std::to_string(value) + ")");
    m.labels[i] = value != 0.0f ? 1 : 0;
  }
  return m;
}

namespace detail {

inline std::vector<unsigned char> encode_nifti(NiftiHeader h, const void* data, std::size_t bytes) {
  h.sizeof_hdr = 348;
  h.vox_offset = 352.0f;
  std::memcpy(h.magic, "n+1\0", 4);
  std::vector<unsigned char> out(352 + bytes, 0);
  std::memcpy(out.data(), &h, sizeof(h));
  std::memcpy(out.data() + 352, data, bytes);
  return out;
}

inline NiftiHeader geometry_header(const Volume& reference, std::size_t frames) {
  NiftiHeader h = reference.header;
  if (h.sizeof_hdr != 348) h = make_nifti_header(reference.dims, reference.spacing);
  h.dim[0] = static_cast<std::int16_t>(frames > 1 ? 4 : 3);
  for (std::size_t i = 0; i < 3; ++i) h.dim[i + 1] = static_cast<std::int16_t>(reference.dims[i]);
  h.dim[4] = static_cast<std::int16_t>(frames);
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.intent_code = 0;
  return h;
}

}  // namespace detail

inline void save_volume(const Volume& volume, const std::string& path) {
  NiftiHeader h = detail::geometry_header(volume, 1);
  h.datatype = nifti_type::float32;
  h.bitpix = 32;
  detail::write_all(path, detail::encode_nifti(h, volume.voxels.data(), volume.voxels.size() * sizeof(float)));
}

// Writes a uint8 mask reusing the reference's geometry header. Several masks
// (one per timepoint of a 4D reference) are written as a 4D file.
inline void save_masks(const std::vector<MaskVolume>& masks, const Volume& reference,
                       const std::string& path) {
  detail::require(!masks.empty(), "save_masks: nothing to write");
  std::vector<std::uint8_t> all;
  for (const auto& m : masks) {
    if (m.dims != reference.dims)
      throw ContractError("mask shape " + std::to_string(m.dims[0]) + "x" + std::to_string(m.dims[1]) +
                          "x" + std::to_string(m.dims[2]) + " does not match reference " +
                          std::to_string(reference.dims[0]) + "x" + std::to_string(reference.dims[1]) +
                          "x" + std::to_string(reference.dims[2]));
    detail::require(m.labels.size() == m.size(), "mask label buffer size mismatch");
    for (auto v : m.labels) all.push_back(v != 0 ? 1 : 0);
  }
  NiftiHeader h = detail::geometry_header(reference, masks.size());
  h.datatype = nifti_type::uint8;
  h.bitpix = 8;
  h.cal_min = 0.0f;
  h.cal_max = 1.0f;
  detail::write_all(path, detail::encode_nifti(h, all.data(), all.size()));
}

inline void save_mask(const MaskVolume& mask, const Volume& reference, const std::string& path) {
  save_masks({mask}, reference, path);
}

// Float volumes (e.g. probability maps) over the reference geometry.
inline void save_float_volumes(const std::vector<std::vector<float>>& frames, const Volume& reference,
                               const std::string& path) {
  std::vector<float> all;
  for (const auto& f : frames) {
    detail::require(f.size() == reference.size(), "save_float_volumes: frame size mismatch");
    all.insert(all.end(), f.begin(), f.end());
  }
  NiftiHeader h = detail::geometry_header(reference, frames.size());
  h.datatype = nifti_type::float32;
  h.bitpix = 32;
  detail::write_all(path, detail::encode_nifti(h, all.data(), all.size() * sizeof(float)));
}

// ---------------------------------------------------------------------------
// Slicing. In-plane rows run along the lower-numbered remaining axis and
// columns along the higher one.

struct SliceProvenance {
  std::string subject_id;
  std::string stack_id;
  std::size_t slice_index = 0;
};

struct Slice2D {
  Image pixels;
  double row_mm = 1.0;
  double col_mm = 1.0;
  SliceProvenance provenance;
};

inline std::array<int, 2> inplane_axes(int slice_axis) {
  switch (slice_axis) {
    case 0: return {1, 2};
    case 1: return {0, 2};
    default: return {0, 1};
  }
}

namespace detail {

inline std::size_t voxel_index(const Dims3& dims, int slice_axis, std::size_t s, std::size_t r,
                               std::size_t c) {
  std::array<std::size_t, 3> p{};
  const auto [a, b] = inplane_axes(slice_axis);
  p[static_cast<std::size_t>(slice_axis)] = s;
  p[static_cast<std::size_t>(a)] = r;
  p[static_cast<std::size_t>(b)] = c;
  return p[0] + dims[0] * (p[1] + dims[1] * p[2]);
}

inline std::pair<std::size_t, std::size_t> inplane_dims(const Dims3& dims, int slice_axis) {
  const auto [a, b] = inplane_axes(slice_axis);
  return {dims[static_cast<std::size_t>(a)], dims[static_cast<std::size_t>(b)]};
}

}  // namespace detail

inline std::vector<Slice2D> iterate_slices(const Volume& volume) {
  const int axis = volume.slice_axis;
  const auto [rows, cols] = detail::inplane_dims(volume.dims, axis);
  const auto [a, b] = inplane_axes(axis);
  std::vector<Slice2D> out;
  const std::size_t count = volume.dims[static_cast<std::size_t>(axis)];
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    Slice2D sl;
    sl.pixels = Image(rows, cols);
    sl.row_mm = volume.spacing[static_cast<std::size_t>(a)];
    sl.col_mm = volume.spacing[static_cast<std::size_t>(b)];
    sl.provenance.stack_id = volume.source_path;
    sl.provenance.slice_index = s;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        sl.pixels(r, c) = volume.voxels[detail::voxel_index(volume.dims, axis, s, r, c)];
    out.push_back(std::move(sl));
  }
  return out;
}

inline std::vector<Mask> iterate_mask_slices(const MaskVolume& mask, int slice_axis) {
  const auto [rows, cols] = detail::inplane_dims(mask.dims, slice_axis);
  std::vector<Mask> out;
  for (std::size_t s = 0; s < mask.dims[static_cast<std::size_t>(slice_axis)]; ++s) {
    Mask m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        m(r, c) = mask.labels[detail::voxel_index(mask.dims, slice_axis, s, r, c)];
    out.push_back(std::move(m));
  }
  return out;
}

// Inverse of iterate_slices for voxel data.
template <typename T>
std::vector<T> stack_slices(const std::vector<Image2D<T>>& slices, const Dims3& dims, int slice_axis) {
  const auto [rows, cols] = detail::inplane_dims(dims, slice_axis);
  detail::require(slices.size() == dims[static_cast<std::size_t>(slice_axis)],
                  "stack_slices: slice count does not match the volume");
  std::vector<T> out(dims[0] * dims[1] * dims[2]);
  for (std::size_t s = 0; s < slices.size(); ++s) {
    detail::require(slices[s].rows() == rows && slices[s].cols() == cols,
                    "stack_slices: slice " + std::to_string(s) + " has shape " +
                        shape_string(slices[s]) + ", expected " + shape_string(rows, cols));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        out[detail::voxel_index(dims, slice_axis, s, r, c)] = slices[s](r, c);
  }
  return out;
}

}  // namespace fetalbet
