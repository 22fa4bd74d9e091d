#include "jobvs/volume_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

namespace jobvs {
namespace {

namespace fs = std::filesystem;

#pragma pack(push, 1)
struct Nifti1Header {
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
  float scl_slope, scl_inter;
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
static_assert(sizeof(Nifti1Header) == 348);

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

enum : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
};

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

enum class Format { nifti_gz, nifti, raw };

Format format_of(const fs::path& path) {
  const std::string name = path.filename().string();
  if (ends_with(name, ".nii.gz")) return Format::nifti_gz;
  if (ends_with(name, ".nii")) return Format::nifti;
  if (ends_with(name, ".raw")) return Format::raw;
  throw DataError("unsupported volume format: " + path.string());
}

fs::path sidecar_of(const fs::path& raw_path) {
  fs::path p = raw_path;
  p.replace_extension(".json");
  return p;
}

std::vector<char> read_all(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing file: " + path.string());
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open: " + path.string());
  std::vector<char> out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw DataError("corrupt compressed stream: " + path.string());
  return out;
}

void write_all(const fs::path& path, const std::vector<char>& bytes, bool compress) {
  if (!path.parent_path().empty() && !fs::is_directory(path.parent_path()))
    throw DataError("output directory does not exist: " + path.parent_path().string());
  if (compress) {
    gzFile f = gzopen(path.c_str(), "wb6");
    if (!f) throw DataError("cannot write: " + path.string());
    const bool ok = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size())) == static_cast<int>(bytes.size());
    if (gzclose(f) != Z_OK || !ok) throw DataError("failed writing: " + path.string());
  } else {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write: " + path.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw DataError("failed writing: " + path.string());
  }
}

template <class T>
T byteswap_value(T v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

void swap_header(Nifti1Header& h) {
  auto sw = [](auto& v) { v = byteswap_value(v); };
  sw(h.sizeof_hdr);
  for (auto& d : h.dim) sw(d);
  sw(h.datatype);
  sw(h.bitpix);
  for (auto& p : h.pixdim) sw(p);
  sw(h.vox_offset);
  sw(h.scl_slope);
  sw(h.scl_inter);
  sw(h.qform_code);
  sw(h.sform_code);
  sw(h.qoffset_x);
  sw(h.qoffset_y);
  sw(h.qoffset_z);
  for (int i = 0; i < 4; ++i) {
    sw(h.srow_x[i]);
    sw(h.srow_y[i]);
    sw(h.srow_z[i]);
  }
}

template <class Src>
void convert_payload(const char* src, std::size_t n, bool swap, std::vector<double>& out) {
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Src v;
    std::memcpy(&v, src + i * sizeof(Src), sizeof(Src));
    if (swap) v = byteswap_value(v);
    out[i] = static_cast<double>(v);
  }
}

struct Decoded {
  Shape3 shape{};
  Vec3 spacing{};
  Vec3 origin{};
  std::int16_t datatype = 0;
  std::vector<double> values;
};

Decoded decode_nifti(const fs::path& path) {
  std::vector<char> bytes = read_all(path);
  if (bytes.size() < sizeof(Nifti1Header)) throw DataError("truncated NIfTI header: " + path.string());
  Nifti1Header h;
  std::memcpy(&h, bytes.data(), sizeof h);
  bool swap = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    swap = true;
    if (h.sizeof_hdr != 348) throw DataError("not a NIfTI-1 file: " + path.string());
  }
  if (std::memcmp(h.magic, "n+1", 4) != 0 && std::memcmp(h.magic, "ni1", 4) != 0)
    throw DataError("bad NIfTI magic: " + path.string());
  const int ndim = h.dim[0];
  if (ndim < 3 || ndim > 7) throw DataError("NIfTI payload is not 3D: " + path.string());
  for (int d = 4; d <= ndim; ++d)
    if (h.dim[d] > 1) throw DataError("NIfTI payload is not 3D: " + path.string());
  Decoded out;
  for (int a = 0; a < 3; ++a) {
    if (h.dim[a + 1] < 1) throw DataError("NIfTI dimension < 1: " + path.string());
    out.shape[a] = static_cast<std::size_t>(h.dim[a + 1]);
    out.spacing[a] = std::abs(static_cast<double>(h.pixdim[a + 1]));
  }
  if (h.sform_code > 0) {
    out.origin = {h.srow_x[3], h.srow_y[3], h.srow_z[3]};
  } else if (h.qform_code > 0) {
    out.origin = {h.qoffset_x, h.qoffset_y, h.qoffset_z};
  }
  const std::size_t n = voxel_count(out.shape);
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  std::size_t elem = 0;
  switch (h.datatype) {
    case kUInt8: elem = 1; break;
    case kInt16: elem = 2; break;
    case kInt32: elem = 4; break;
    case kFloat32: elem = 4; break;
    case kFloat64: elem = 8; break;
    default: throw DataError("unsupported NIfTI datatype " + std::to_string(h.datatype));
  }
  if (offset < sizeof(Nifti1Header) || bytes.size() < offset + n * elem)
    throw DataError("truncated NIfTI payload: " + path.string());
  const char* src = bytes.data() + offset;
  out.datatype = h.datatype;
  switch (h.datatype) {
    case kUInt8: convert_payload<std::uint8_t>(src, n, false, out.values); break;
    case kInt16: convert_payload<std::int16_t>(src, n, swap, out.values); break;
    case kInt32: convert_payload<std::int32_t>(src, n, swap, out.values); break;
    case kFloat32: convert_payload<float>(src, n, swap, out.values); break;
    case kFloat64: convert_payload<double>(src, n, swap, out.values); break;
  }
  const double slope = h.scl_slope;
  if (slope != 0.0 && std::isfinite(slope) && (slope != 1.0 || h.scl_inter != 0.0)) {
    for (double& v : out.values) v = v * slope + h.scl_inter;
  }
  return out;
}

Decoded decode_raw(const fs::path& path) {
  const fs::path side = sidecar_of(path);
  if (!fs::exists(side)) throw DataError("missing sidecar: " + side.string());
  nlohmann::json meta;
  try {
    std::ifstream is(side);
    meta = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed sidecar " + side.string() + ": " + e.what());
  }
  Decoded out;
  try {
    const auto& shape = meta.at("shape");
    if (shape.size() != 3) throw DataError("raw payload is not 3D: " + path.string());
    for (int a = 0; a < 3; ++a) {
      const auto d = shape.at(a).get<long long>();
      if (d < 1) throw DataError("raw dimension < 1: " + path.string());
      out.shape[a] = static_cast<std::size_t>(d);
      out.spacing[a] = meta.at("spacing").at(a).get<double>();
      out.origin[a] = meta.contains("origin") ? meta["origin"].at(a).get<double>() : 0.0;
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed sidecar " + side.string() + ": " + e.what());
  }
  std::vector<char> bytes = read_all(path);
  const std::size_t n = voxel_count(out.shape);
  if (bytes.size() != n * sizeof(float)) throw DataError("raw payload size mismatch: " + path.string());
  out.datatype = kFloat32;
  convert_payload<float>(bytes.data(), n, false, out.values);
  return out;
}

Decoded decode(const fs::path& path) {
  return format_of(path) == Format::raw ? decode_raw(path) : decode_nifti(path);
}

template <class T>
Image<T> to_image(Decoded&& d) {
  Image<T> img;
  std::vector<T> data(d.values.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(d.values[i]);
  img.grid = Grid3<T>(d.shape, std::move(data));
  img.spacing = d.spacing;
  img.origin = d.origin;
  validate(img);
  return img;
}

template <class T>
std::vector<char> encode_nifti(const Image<T>& img) {
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  for (int a = 0; a < 3; ++a) {
    if (img.shape()[a] > 32767) throw DataError("axis too large for NIfTI-1");
    h.dim[a + 1] = static_cast<std::int16_t>(img.shape()[a]);
    h.pixdim[a + 1] = static_cast<float>(img.spacing[a]);
  }
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  h.pixdim[0] = 1.0f;
  if constexpr (std::is_same_v<T, float>) {
    h.datatype = kFloat32;
    h.bitpix = 32;
  } else {
    h.datatype = kUInt8;
    h.bitpix = 8;
  }
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // mm
  h.qform_code = 1;
  h.sform_code = 1;
  h.qoffset_x = static_cast<float>(img.origin[0]);
  h.qoffset_y = static_cast<float>(img.origin[1]);
  h.qoffset_z = static_cast<float>(img.origin[2]);
  h.srow_x[0] = static_cast<float>(img.spacing[0]);
  h.srow_y[1] = static_cast<float>(img.spacing[1]);
  h.srow_z[2] = static_cast<float>(img.spacing[2]);
  h.srow_x[3] = h.qoffset_x;
  h.srow_y[3] = h.qoffset_y;
  h.srow_z[3] = h.qoffset_z;
  std::memcpy(h.magic, "n+1", 4);

  std::vector<char> bytes(352 + img.grid.size() * sizeof(T), 0);
  std::memcpy(bytes.data(), &h, sizeof h);
  std::memcpy(bytes.data() + 352, img.grid.values().data(), img.grid.size() * sizeof(T));
  return bytes;
}

template <class T>
void save_image(const Image<T>& img, const fs::path& path) {
  validate(img);
  const Format fmt = format_of(path);
  if (fmt != Format::raw) {
    write_all(path, encode_nifti(img), fmt == Format::nifti_gz);
    return;
  }
  std::vector<char> bytes(img.grid.size() * sizeof(float));
  for (std::size_t i = 0; i < img.grid.size(); ++i) {
    const float v = static_cast<float>(img.grid[i]);
    std::memcpy(bytes.data() + i * sizeof(float), &v, sizeof v);
  }
  write_all(path, bytes, false);
  nlohmann::json meta = {
      {"shape", img.shape()},
      {"spacing", img.spacing},
      {"origin", img.origin},
  };
  std::ofstream os(sidecar_of(path));
  if (!os) throw DataError("cannot write sidecar for " + path.string());
  os << meta.dump(2) << "\n";
}

}  // namespace

Volume load_volume(const fs::path& path) { return to_image<float>(decode(path)); }

LabelVolume load_label_volume(const fs::path& path) {
  Decoded d = decode(path);
  for (double v : d.values)
    if (v != 0.0 && v != 1.0) throw DataError("label volume is not binary: " + path.string());
  return to_image<std::uint8_t>(std::move(d));
}

void save_volume(const Volume& vol, const fs::path& path) { save_image(vol, path); }
void save_volume(const LabelVolume& vol, const fs::path& path) { save_image(vol, path); }

}  // namespace jobvs
