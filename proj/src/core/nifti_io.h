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

#ifndef NEUROQUANT_CORE_NIFTI_IO_H
#define NEUROQUANT_CORE_NIFTI_IO_H

#include <cstdint>
#include <string>
#include <vector>

#include "core/volume.h"

namespace nq {

// NIfTI-1 single-file (.nii) reader/writer. Supports the five common
// datatypes below, optional gzip wrapping (sniffed by the 0x1f8b prefix),
// and both byte orders on read (detected via the header-size field).
// Output is always little-endian. NIfTI-2 and .hdr/.img pairs are out of
// scope.
enum class NiftiDatatype : std::int16_t {
  Uint8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
};

int nifti_datatype_size(NiftiDatatype dt);

// Parsed view of the fixed 348-byte header (byte-order normalized).
struct NiftiHeader {
  std::int16_t dim[8] = {0};
  NiftiDatatype datatype = NiftiDatatype::Float64;
  float pixdim[8] = {0};
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
  float vox_offset = 352.0f;
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  float quatern[3] = {0};  // b, c, d
  float qoffset[3] = {0};
  float srow[3][4] = {{0}};
  std::string descrip;
  bool swapped = false;  // input was byte-swapped (big-endian source)

  // affine per the format's precedence: sform if sform_code>0, else qform
  // if qform_code>0, else diag(pixdim)
  Mat4 affine() const;
};

// Header-only parse (validates magic/size, not the data section length).
NiftiHeader parse_nifti_header(const std::vector<std::uint8_t>& bytes);

// Decode a complete single-file NIfTI-1 byte image (optionally gzipped).
// Voxels become raw*scl_slope + scl_inter in double precision
// (slope 0 is treated as 1 per the format convention).
Volume3D read_nifti(const std::vector<std::uint8_t>& bytes,
                    bool permissive_nonfinite = false);

// Encode as a single-file NIfTI-1 image (uncompressed). Integer datatypes
// round to nearest and throw RangeOverflow when a value cannot be
// represented. `descrip` lands in the header's 80-char description field.
std::vector<std::uint8_t> write_nifti(const Volume3D& vol, NiftiDatatype dt,
                                      const std::string& descrip = "");

// File helpers; a ".gz" suffix selects gzip compression on write, while
// reads sniff the actual content.
Volume3D read_nifti_file(const std::string& path,
                         bool permissive_nonfinite = false);
void write_nifti_file(const Volume3D& vol, const std::string& path,
                      NiftiDatatype dt = NiftiDatatype::Float64,
                      const std::string& descrip = "");

// gzip (RFC 1952) helpers used by the reader/writer; deterministic output.
bool is_gzip(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> gzip_compress(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> gzip_decompress(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path,
                      const std::vector<std::uint8_t>& bytes);

}  // namespace nq

#endif
