/*
 * neuroquant : amyloid status prediction from multi-contrast MRI
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "core/nifti_io.h"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "core/error.h"

namespace nq {

namespace {

// On-disk layout of the fixed NIfTI-1 header. Field names and offsets per
// the published nifti1.h reference.
#pragma pack(push, 1)
struct RawHeader {
  std::int32_t sizeof_hdr;    // 0
  char data_type[10];         // 4
  char db_name[18];           // 14
  std::int32_t extents;       // 32
  std::int16_t session_error; // 36
  char regular;               // 38
  char dim_info;              // 39
  std::int16_t dim[8];        // 40
  float intent_p1;            // 56
  float intent_p2;            // 60
  float intent_p3;            // 64
  std::int16_t intent_code;   // 68
  std::int16_t datatype;      // 70
  std::int16_t bitpix;        // 72
  std::int16_t slice_start;   // 74
  float pixdim[8];            // 76
  float vox_offset;           // 108
  float scl_slope;            // 112
  float scl_inter;            // 116
  std::int16_t slice_end;     // 120
  char slice_code;            // 122
  char xyzt_units;            // 123
  float cal_max;              // 124
  float cal_min;              // 128
  float slice_duration;       // 132
  float toffset;              // 136
  std::int32_t glmax;         // 140
  std::int32_t glmin;         // 144
  char descrip[80];           // 148
  char aux_file[24];          // 228
  std::int16_t qform_code;    // 252
  std::int16_t sform_code;    // 254
  float quatern_b;            // 256
  float quatern_c;            // 260
  float quatern_d;            // 264
  float qoffset_x;            // 268
  float qoffset_y;            // 272
  float qoffset_z;            // 276
  float srow_x[4];            // 280
  float srow_y[4];            // 296
  float srow_z[4];            // 312
  char intent_name[16];       // 328
  char magic[4];              // 344
};
#pragma pack(pop)
static_assert(sizeof(RawHeader) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int32_t kHeaderSize = 348;
constexpr float kVoxOffset = 352.0f;  // header + 4 extension bytes

void swap_bytes(void* p, int width) {
  auto* b = static_cast<std::uint8_t*>(p);
  for (int i = 0; i < width / 2; ++i) std::swap(b[i], b[width - 1 - i]);
}

void swap_header(RawHeader& h) {
  swap_bytes(&h.sizeof_hdr, 4);
  swap_bytes(&h.extents, 4);
  swap_bytes(&h.session_error, 2);
  for (auto& d : h.dim) swap_bytes(&d, 2);
  swap_bytes(&h.intent_p1, 4);
  swap_bytes(&h.intent_p2, 4);
  swap_bytes(&h.intent_p3, 4);
  swap_bytes(&h.intent_code, 2);
  swap_bytes(&h.datatype, 2);
  swap_bytes(&h.bitpix, 2);
  swap_bytes(&h.slice_start, 2);
  for (auto& d : h.pixdim) swap_bytes(&d, 4);
  swap_bytes(&h.vox_offset, 4);
  swap_bytes(&h.scl_slope, 4);
  swap_bytes(&h.scl_inter, 4);
  swap_bytes(&h.slice_end, 2);
  swap_bytes(&h.cal_max, 4);
  swap_bytes(&h.cal_min, 4);
  swap_bytes(&h.slice_duration, 4);
  swap_bytes(&h.toffset, 4);
  swap_bytes(&h.glmax, 4);
  swap_bytes(&h.glmin, 4);
  swap_bytes(&h.qform_code, 2);
  swap_bytes(&h.sform_code, 2);
  swap_bytes(&h.quatern_b, 4);
  swap_bytes(&h.quatern_c, 4);
  swap_bytes(&h.quatern_d, 4);
  swap_bytes(&h.qoffset_x, 4);
  swap_bytes(&h.qoffset_y, 4);
  swap_bytes(&h.qoffset_z, 4);
  for (auto& v : h.srow_x) swap_bytes(&v, 4);
  for (auto& v : h.srow_y) swap_bytes(&v, 4);
  for (auto& v : h.srow_z) swap_bytes(&v, 4);
}

bool valid_datatype(std::int16_t code) {
  switch (static_cast<NiftiDatatype>(code)) {
    case NiftiDatatype::Uint8:
    case NiftiDatatype::Int16:
    case NiftiDatatype::Int32:
    case NiftiDatatype::Float32:
    case NiftiDatatype::Float64:
      return true;
  }
  return false;
}

template <typename T>
double decode_at(const std::uint8_t* p, bool swapped) {
  T raw;
  std::memcpy(&raw, p, sizeof(T));
  if (swapped) swap_bytes(&raw, sizeof(T));
  return static_cast<double>(raw);
}

template <typename T>
void encode_integer(const std::vector<double>& data, std::uint8_t* out) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double rounded = std::nearbyint(data[i]);
    if (rounded < static_cast<double>(std::numeric_limits<T>::min()) ||
        rounded > static_cast<double>(std::numeric_limits<T>::max()))
      throw Error(ErrorCode::RangeOverflow,
                  "value " + std::to_string(data[i]) +
                      " not representable in the requested integer datatype");
    T v = static_cast<T>(rounded);
    std::memcpy(out + i * sizeof(T), &v, sizeof(T));
  }
}

NiftiHeader to_parsed(const RawHeader& raw, bool swapped) {
  NiftiHeader h;
  for (int i = 0; i < 8; ++i) h.dim[i] = raw.dim[i];
  h.datatype = static_cast<NiftiDatatype>(raw.datatype);
  for (int i = 0; i < 8; ++i) h.pixdim[i] = raw.pixdim[i];
  h.scl_slope = raw.scl_slope;
  h.scl_inter = raw.scl_inter;
  h.vox_offset = raw.vox_offset;
  h.qform_code = raw.qform_code;
  h.sform_code = raw.sform_code;
  h.quatern[0] = raw.quatern_b;
  h.quatern[1] = raw.quatern_c;
  h.quatern[2] = raw.quatern_d;
  h.qoffset[0] = raw.qoffset_x;
  h.qoffset[1] = raw.qoffset_y;
  h.qoffset[2] = raw.qoffset_z;
  for (int j = 0; j < 4; ++j) {
    h.srow[0][j] = raw.srow_x[j];
    h.srow[1][j] = raw.srow_y[j];
    h.srow[2][j] = raw.srow_z[j];
  }
  char buf[81] = {0};
  std::memcpy(buf, raw.descrip, 80);
  h.descrip = buf;
  h.swapped = swapped;
  return h;
}

RawHeader parse_raw(const std::vector<std::uint8_t>& bytes, bool& swapped) {
  if (bytes.size() < sizeof(RawHeader))
    throw Error(ErrorCode::TruncatedData, "file shorter than the 348-byte header");
  RawHeader raw;
  std::memcpy(&raw, bytes.data(), sizeof(RawHeader));
  swapped = false;
  if (raw.sizeof_hdr != kHeaderSize) {
    swap_header(raw);
    swapped = true;
    if (raw.sizeof_hdr != kHeaderSize)
      throw Error(ErrorCode::BadMagic, "header size field is not 348");
  }
  if (std::memcmp(raw.magic, "n+1\0", 4) != 0)
    throw Error(ErrorCode::BadMagic, "magic is not 'n+1' (single-file NIfTI-1)");
  return raw;
}

}  // namespace

int nifti_datatype_size(NiftiDatatype dt) {
  switch (dt) {
    case NiftiDatatype::Uint8: return 1;
    case NiftiDatatype::Int16: return 2;
    case NiftiDatatype::Int32: return 4;
    case NiftiDatatype::Float32: return 4;
    case NiftiDatatype::Float64: return 8;
  }
  throw Error(ErrorCode::UnsupportedDatatype, "unknown datatype code");
}

Mat4 NiftiHeader::affine() const {
  Mat4 a = Mat4::identity();
  if (sform_code > 0) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) a.m[r][c] = srow[r][c];
    return a;
  }
  if (qform_code > 0) {
    const double b = quatern[0], c = quatern[1], d = quatern[2];
    double aa = 1.0 - b * b - c * c - d * d;
    aa = aa < 0.0 ? 0.0 : std::sqrt(aa);
    const double qfac = pixdim[0] < 0.0f ? -1.0 : 1.0;
    const double sx = pixdim[1], sy = pixdim[2], sz = pixdim[3];
    a.m[0][0] = (aa * aa + b * b - c * c - d * d) * sx;
    a.m[0][1] = (2 * b * c - 2 * aa * d) * sy;
    a.m[0][2] = (2 * b * d + 2 * aa * c) * sz * qfac;
    a.m[1][0] = (2 * b * c + 2 * aa * d) * sx;
    a.m[1][1] = (aa * aa + c * c - b * b - d * d) * sy;
    a.m[1][2] = (2 * c * d - 2 * aa * b) * sz * qfac;
    a.m[2][0] = (2 * b * d - 2 * aa * c) * sx;
    a.m[2][1] = (2 * c * d + 2 * aa * b) * sy;
    a.m[2][2] = (aa * aa + d * d - b * b - c * c) * sz * qfac;
    a.m[0][3] = qoffset[0];
    a.m[1][3] = qoffset[1];
    a.m[2][3] = qoffset[2];
    return a;
  }
  a.m[0][0] = pixdim[1];
  a.m[1][1] = pixdim[2];
  a.m[2][2] = pixdim[3];
  return a;
}

NiftiHeader parse_nifti_header(const std::vector<std::uint8_t>& bytes) {
  const auto& plain = is_gzip(bytes) ? gzip_decompress(bytes) : bytes;
  bool swapped = false;
  const RawHeader raw = parse_raw(plain, swapped);
  return to_parsed(raw, swapped);
}

bool is_gzip(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::vector<std::uint8_t> gzip_decompress(const std::vector<std::uint8_t>& bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 16) != Z_OK)
    throw Error(ErrorCode::Internal, "inflateInit2 failed");
  std::vector<std::uint8_t> out;
  out.reserve(bytes.size() * 4);
  std::uint8_t buf[1 << 16];
  zs.next_in = const_cast<std::uint8_t*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  int ret = Z_OK;
  do {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    ret = inflate(&zs, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error(ErrorCode::TruncatedData, "gzip stream is corrupt or truncated");
    }
    out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
  } while (ret != Z_STREAM_END && (zs.avail_in > 0 || zs.avail_out == 0));
  inflateEnd(&zs);
  if (ret != Z_STREAM_END)
    throw Error(ErrorCode::TruncatedData, "gzip stream ended early");
  return out;
}

std::vector<std::uint8_t> gzip_compress(const std::vector<std::uint8_t>& bytes) {
  z_stream zs{};
  if (deflateInit2(&zs, 6, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw Error(ErrorCode::Internal, "deflateInit2 failed");
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  zs.next_in = const_cast<std::uint8_t*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  int ret;
  do {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    ret = deflate(&zs, Z_FINISH);
    out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
  } while (ret != Z_STREAM_END);
  deflateEnd(&zs);
  return out;
}

Volume3D read_nifti(const std::vector<std::uint8_t>& bytes,
                    bool permissive_nonfinite) {
  const std::vector<std::uint8_t>& plain =
      is_gzip(bytes) ? gzip_decompress(bytes) : bytes;
  bool swapped = false;
  const RawHeader raw = parse_raw(plain, swapped);

  if (!valid_datatype(raw.datatype))
    throw Error(ErrorCode::UnsupportedDatatype,
                "datatype code " + std::to_string(raw.datatype));
  const auto dt = static_cast<NiftiDatatype>(raw.datatype);

  const int ndim = raw.dim[0];
  if (ndim < 1 || ndim > 7)
    throw Error(ErrorCode::UnsupportedDatatype,
                "dim[0] out of range: " + std::to_string(ndim));
  std::array<int, 3> shape = {1, 1, 1};
  for (int i = 1; i <= std::min(ndim, 3); ++i) {
    if (raw.dim[i] < 1)
      throw Error(ErrorCode::TruncatedData, "spatial dim < 1");
    shape[i - 1] = raw.dim[i];
  }
  for (int i = 4; i <= ndim; ++i) {
    if (raw.dim[i] > 1)
      throw Error(ErrorCode::UnsupportedDatatype,
                  "only 3D volumes supported (trailing dims must be 1)");
  }

  const std::size_t count =
      static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
  const int elem = nifti_datatype_size(dt);
  const std::size_t offset = static_cast<std::size_t>(raw.vox_offset);
  if (offset < sizeof(RawHeader))
    throw Error(ErrorCode::BadMagic, "vox_offset points inside the header");
  if (plain.size() < offset + count * elem)
    throw Error(ErrorCode::TruncatedData,
                "data section shorter than dims imply");

  double slope = raw.scl_slope;
  if (slope == 0.0) slope = 1.0;  // format convention
  const double inter = raw.scl_inter;

  std::vector<double> data(count);
  const std::uint8_t* p = plain.data() + offset;
  for (std::size_t i = 0; i < count; ++i, p += elem) {
    double v;
    switch (dt) {
      case NiftiDatatype::Uint8: v = decode_at<std::uint8_t>(p, false); break;
      case NiftiDatatype::Int16: v = decode_at<std::int16_t>(p, swapped); break;
      case NiftiDatatype::Int32: v = decode_at<std::int32_t>(p, swapped); break;
      case NiftiDatatype::Float32: v = decode_at<float>(p, swapped); break;
      case NiftiDatatype::Float64: v = decode_at<double>(p, swapped); break;
      default: v = 0;
    }
    data[i] = v * slope + inter;
  }
  if (!permissive_nonfinite) {
    for (double v : data)
      if (!std::isfinite(v))
        throw Error(ErrorCode::NonFinite, "volume contains NaN/Inf voxels");
  }

  const NiftiHeader parsed = to_parsed(raw, swapped);
  Mat4 affine = parsed.affine();
  // guard against all-zero pixdim in headers that rely on the affine
  for (int c = 0; c < 3; ++c) {
    if (norm(affine.column3(c)) < 1e-12) affine.m[c][c] = 1.0;
  }
  return Volume3D::create(shape, affine, std::move(data), permissive_nonfinite);
}

std::vector<std::uint8_t> write_nifti(const Volume3D& vol, NiftiDatatype dt,
                                      const std::string& descrip) {
  RawHeader raw{};
  raw.sizeof_hdr = kHeaderSize;
  raw.regular = 'r';
  raw.dim[0] = 3;
  raw.dim[1] = static_cast<std::int16_t>(vol.nx());
  raw.dim[2] = static_cast<std::int16_t>(vol.ny());
  raw.dim[3] = static_cast<std::int16_t>(vol.nz());
  for (int i = 4; i < 8; ++i) raw.dim[i] = 1;
  raw.datatype = static_cast<std::int16_t>(dt);
  raw.bitpix = static_cast<std::int16_t>(8 * nifti_datatype_size(dt));
  raw.pixdim[0] = 1.0f;
  for (int i = 0; i < 3; ++i)
    raw.pixdim[i + 1] = static_cast<float>(vol.spacing()[i]);
  raw.vox_offset = kVoxOffset;
  raw.scl_slope = 1.0f;
  raw.scl_inter = 0.0f;
  raw.xyzt_units = 2;  // NIFTI_UNITS_MM
  std::strncpy(raw.descrip, descrip.c_str(), sizeof(raw.descrip) - 1);
  raw.sform_code = 1;  // scanner-anatomical
  raw.qform_code = 0;
  for (int j = 0; j < 4; ++j) {
    raw.srow_x[j] = static_cast<float>(vol.affine().m[0][j]);
    raw.srow_y[j] = static_cast<float>(vol.affine().m[1][j]);
    raw.srow_z[j] = static_cast<float>(vol.affine().m[2][j]);
  }
  std::memcpy(raw.magic, "n+1\0", 4);

  const int elem = nifti_datatype_size(dt);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(kVoxOffset) +
                                vol.size() * elem);
  std::memcpy(out.data(), &raw, sizeof(RawHeader));
  std::uint8_t* p = out.data() + static_cast<std::size_t>(kVoxOffset);
  const auto& data = vol.data();
  switch (dt) {
    case NiftiDatatype::Uint8: encode_integer<std::uint8_t>(data, p); break;
    case NiftiDatatype::Int16: encode_integer<std::int16_t>(data, p); break;
    case NiftiDatatype::Int32: encode_integer<std::int32_t>(data, p); break;
    case NiftiDatatype::Float32: {
      for (std::size_t i = 0; i < data.size(); ++i) {
        const float v = static_cast<float>(data[i]);
        std::memcpy(p + i * 4, &v, 4);
      }
      break;
    }
    case NiftiDatatype::Float64:
      std::memcpy(p, data.data(), data.size() * 8);
      break;
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::string& path,
                      const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoError, "cannot create " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::IoError, "short write to " + path);
}

Volume3D read_nifti_file(const std::string& path, bool permissive_nonfinite) {
  return read_nifti(read_file_bytes(path), permissive_nonfinite);
}

void write_nifti_file(const Volume3D& vol, const std::string& path,
                      NiftiDatatype dt, const std::string& descrip) {
  auto bytes = write_nifti(vol, dt, descrip);
  if (path.size() > 3 && path.substr(path.size() - 3) == ".gz")
    bytes = gzip_compress(bytes);
  write_file_bytes(path, bytes);
}

}  // namespace nq
