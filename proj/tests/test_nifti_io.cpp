#include <doctest.h>

#include <cstring>
#include <random>

#include "core/error.h"
#include "core/nifti_io.h"

using namespace nq;

namespace {

// Hand-built single-file NIfTI-1 image, assembled field by field at the
// offsets of the published standard. Independent of the writer under test.
std::vector<std::uint8_t> hand_built_nifti(std::int16_t datatype,
                                           const std::vector<std::uint8_t>& payload,
                                           float slope, float inter,
                                           std::int16_t nx = 1, std::int16_t ny = 1,
                                           std::int16_t nz = 1) {
  std::vector<std::uint8_t> f(352 + payload.size(), 0);
  auto put16 = [&](std::size_t off, std::int16_t v) { std::memcpy(&f[off], &v, 2); };
  auto put32i = [&](std::size_t off, std::int32_t v) { std::memcpy(&f[off], &v, 4); };
  auto put32f = [&](std::size_t off, float v) { std::memcpy(&f[off], &v, 4); };

  put32i(0, 348);        // sizeof_hdr
  put16(40, 3);          // dim[0]
  put16(42, nx);         // dim[1]
  put16(44, ny);
  put16(46, nz);
  put16(48, 1);
  put16(50, 1);
  put16(52, 1);
  put16(54, 1);
  put16(70, datatype);   // datatype
  put32f(76, 1.0f);      // pixdim[0] (qfac)
  put32f(80, 1.0f);      // pixdim[1..3]
  put32f(84, 1.0f);
  put32f(88, 1.0f);
  put32f(108, 352.0f);   // vox_offset
  put32f(112, slope);    // scl_slope
  put32f(116, inter);    // scl_inter
  // qform/sform codes left 0 -> affine from pixdim
  f[344] = 'n'; f[345] = '+'; f[346] = '1'; f[347] = 0;  // magic
  std::memcpy(f.data() + 352, payload.data(), payload.size());
  return f;
}

std::vector<std::uint8_t> float_payload(std::initializer_list<float> vals) {
  std::vector<std::uint8_t> p(vals.size() * 4);
  std::size_t i = 0;
  for (float v : vals) { std::memcpy(&p[i * 4], &v, 4); ++i; }
  return p;
}

}  // namespace

TEST_SUITE_BEGIN("nifti_io");

TEST_CASE("hand-built single-voxel float32 file decodes to 2.5") {
  const auto bytes = hand_built_nifti(16, float_payload({2.5f}), 1.0f, 0.0f);
  const Volume3D vol = read_nifti(bytes);
  CHECK(vol.shape() == std::array<int, 3>{1, 1, 1});
  CHECK(vol.data()[0] == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(vol.spacing()[0] == doctest::Approx(1.0));
}

TEST_CASE("int16 voxel with slope 2 inter 1 decodes to 7") {
  std::vector<std::uint8_t> p(2);
  const std::int16_t raw = 3;
  std::memcpy(p.data(), &raw, 2);
  const auto bytes = hand_built_nifti(4, p, 2.0f, 1.0f);
  const Volume3D vol = read_nifti(bytes);
  CHECK(vol.data()[0] == doctest::Approx(7.0));
}

TEST_CASE("slope zero is treated as one") {
  const auto bytes = hand_built_nifti(16, float_payload({4.0f}), 0.0f, 0.0f);
  CHECK(read_nifti(bytes).data()[0] == doctest::Approx(4.0));
}

TEST_CASE("scaling matches raw*slope+inter for random parameters") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int trial = 0; trial < 50; ++trial) {
    const float slope = static_cast<float>(u(rng));
    const float inter = static_cast<float>(u(rng));
    const std::int16_t raw = static_cast<std::int16_t>(u(rng));
    std::vector<std::uint8_t> p(2);
    std::memcpy(p.data(), &raw, 2);
    const auto bytes = hand_built_nifti(4, p, slope, inter);
    const double expect =
        static_cast<double>(raw) * (slope == 0.0f ? 1.0 : double(slope)) +
        double(inter);
    CHECK(read_nifti(bytes).data()[0] == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("roundtrip identity through the writer") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::vector<double> data(3 * 4 * 5);
  for (auto& v : data) v = u(rng);
  const auto vol = Volume3D::axis_aligned({3, 4, 5}, {1.0, 1.25, 2.0},
                                          std::move(data), "LPI", {4, -3, 9});
  const Volume3D back = read_nifti(write_nifti(vol, NiftiDatatype::Float64));
  CHECK(back.shape() == vol.shape());
  CHECK(back.orientation() == vol.orientation());
  for (int i = 0; i < 3; ++i)
    CHECK(back.spacing()[i] == doctest::Approx(vol.spacing()[i]).epsilon(1e-6));
  for (std::size_t i = 0; i < vol.size(); ++i)
    CHECK(back.data()[i] == vol.data()[i]);  // float64: bit-exact

  // write -> read -> write reproduces the same bytes
  const auto bytes1 = write_nifti(vol, NiftiDatatype::Float64);
  const auto bytes2 = read_nifti(bytes1).data() == vol.data()
                          ? write_nifti(read_nifti(bytes1), NiftiDatatype::Float64)
                          : std::vector<std::uint8_t>{};
  CHECK(bytes1 == bytes2);
}

TEST_CASE("float32 data from disk survives a float32 rewrite bit-exactly") {
  const auto bytes = hand_built_nifti(
      16, float_payload({0.125f, -3.75f, 100.0f, 0.0f}), 1.0f, 0.0f, 4, 1, 1);
  const Volume3D vol = read_nifti(bytes);
  const auto rewritten = write_nifti(vol, NiftiDatatype::Float32);
  const Volume3D back = read_nifti(rewritten);
  for (std::size_t i = 0; i < vol.size(); ++i)
    CHECK(back.data()[i] == vol.data()[i]);
}

TEST_CASE("uint8 values roundtrip exactly; out-of-range overflows") {
  std::vector<double> vals = {0, 1, 17, 254, 255};
  const auto vol = Volume3D::axis_aligned({5, 1, 1}, {1, 1, 1}, std::move(vals));
  const Volume3D back = read_nifti(write_nifti(vol, NiftiDatatype::Uint8));
  for (std::size_t i = 0; i < vol.size(); ++i)
    CHECK(back.data()[i] == vol.data()[i]);

  const auto big = Volume3D::axis_aligned({1, 1, 1}, {1, 1, 1}, {1e9});
  CHECK_THROWS_WITH_AS(write_nifti(big, NiftiDatatype::Int16),
                       doctest::Contains("RangeOverflow"), Error);
}

TEST_CASE("gzip transparency") {
  const auto bytes = hand_built_nifti(16, float_payload({2.5f}), 1.0f, 0.0f);
  const auto zipped = gzip_compress(bytes);
  CHECK(is_gzip(zipped));
  const Volume3D a = read_nifti(bytes);
  const Volume3D b = read_nifti(zipped);
  CHECK(a.data() == b.data());
  CHECK(a.shape() == b.shape());
}

TEST_CASE("error paths") {
  auto bytes = hand_built_nifti(16, float_payload({2.5f}), 1.0f, 0.0f);

  SUBCASE("bad magic") {
    bytes[344] = 'x';
    CHECK_THROWS_AS(read_nifti(bytes), Error);
    try {
      read_nifti(bytes);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BadMagic);
    }
  }
  SUBCASE("unsupported datatype") {
    bytes[70] = 32;  // complex64
    try {
      read_nifti(bytes);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::UnsupportedDatatype);
    }
  }
  SUBCASE("truncated data") {
    bytes.resize(353);
    try {
      read_nifti(bytes);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::TruncatedData);
    }
  }
  SUBCASE("non-finite voxels rejected unless permissive") {
    auto nanfile =
        hand_built_nifti(16, float_payload({std::nanf("1")}), 1.0f, 0.0f);
    try {
      read_nifti(nanfile);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonFinite);
    }
    const Volume3D v = read_nifti(nanfile, /*permissive_nonfinite=*/true);
    CHECK(std::isnan(v.data()[0]));
  }
}

TEST_CASE("qform fallback builds the affine from the quaternion") {
  // quaternion (b,c,d) = (0,0,1) is a 180-degree rotation about z:
  // columns (-1,0,0), (0,-1,0), (0,0,1) -> orientation LPS
  auto bytes = hand_built_nifti(16, float_payload({1.0f}), 1.0f, 0.0f);
  auto put16 = [&](std::size_t off, std::int16_t v) { std::memcpy(&bytes[off], &v, 2); };
  auto put32f = [&](std::size_t off, float v) { std::memcpy(&bytes[off], &v, 4); };
  put16(252, 1);      // qform_code
  put32f(264, 1.0f);  // quatern_d
  put32f(268, 7.0f);  // qoffset_x
  put32f(272, -3.0f);
  put32f(276, 2.0f);
  const Volume3D vol = read_nifti(bytes);
  CHECK(vol.orientation() == "LPS");
  CHECK(vol.affine().m[0][0] == doctest::Approx(-1.0));
  CHECK(vol.affine().m[1][1] == doctest::Approx(-1.0));
  CHECK(vol.affine().m[2][2] == doctest::Approx(1.0));
  CHECK(vol.affine().m[0][3] == doctest::Approx(7.0));

  SUBCASE("sform wins over qform when both are set") {
    put16(254, 1);  // sform_code
    // srow: identity spacing, origin 0 -> RAS
    put32f(280, 1.0f);
    put32f(296 + 4, 1.0f);
    put32f(312 + 8, 1.0f);
    const Volume3D v2 = read_nifti(bytes);
    CHECK(v2.orientation() == "RAS");
  }
}

TEST_CASE("byte-swapped header is detected and decoded") {
  auto bytes = hand_built_nifti(4, {0, 0}, 1.0f, 0.0f);
  // flip every multi-byte field we rely on into big-endian order
  auto swap_at = [&](std::size_t off, int width) {
    for (int i = 0; i < width / 2; ++i) std::swap(bytes[off + i], bytes[off + width - 1 - i]);
  };
  swap_at(0, 4);
  for (std::size_t off = 40; off < 56; off += 2) swap_at(off, 2);
  swap_at(70, 2);
  for (std::size_t off = 76; off < 108; off += 4) swap_at(off, 4);
  swap_at(108, 4);
  swap_at(112, 4);
  swap_at(116, 4);
  const std::int16_t raw_be = 0x0102;  // stored big-endian in the payload
  bytes[352] = 0x01;
  bytes[353] = 0x02;
  const Volume3D vol = read_nifti(bytes);
  CHECK(vol.data()[0] == doctest::Approx(static_cast<double>(raw_be)));
}

TEST_CASE("trailing dims of one are accepted, larger are rejected") {
  auto bytes = hand_built_nifti(16, float_payload({1.0f}), 1.0f, 0.0f);
  auto put16 = [&](std::size_t off, std::int16_t v) { std::memcpy(&bytes[off], &v, 2); };
  put16(40, 5);  // dim[0] = 5 with dim[4]=dim[5]=1
  CHECK_NOTHROW(read_nifti(bytes));
  put16(48, 2);  // dim[4] = 2 -> a 4D series
  try {
    read_nifti(bytes);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnsupportedDatatype);
  }
}

TEST_SUITE_END();
