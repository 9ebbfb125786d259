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

#include "core/volume.h"

#include <algorithm>
#include <cmath>

#include "core/error.h"

namespace nq {

namespace {

const char kAxisLetters[3][2] = {{'R', 'L'}, {'A', 'P'}, {'S', 'I'}};

bool valid_shape(const std::array<int, 3>& shape) {
  return shape[0] >= 1 && shape[1] >= 1 && shape[2] >= 1;
}

// Fill `out` (x fastest, out_shape order) with src sampled through the
// affine voxel->voxel map `chain`. The source point advances by chain's
// first column per x step, which keeps the inner loop free of matrix
// applications.
void sample_affine_grid(const Volume3D& src, const Mat4& chain,
                        const std::array<int, 3>& out_shape,
                        std::vector<double>& out) {
  const Vec3 col_x = chain.column3(0);
  std::size_t i = 0;
  for (int z = 0; z < out_shape[2]; ++z) {
    for (int y = 0; y < out_shape[1]; ++y) {
      Vec3 p = chain.apply({0.0, static_cast<double>(y), static_cast<double>(z)});
      for (int x = 0; x < out_shape[0]; ++x, ++i) {
        out[i] = trilinear_sample(src, p);
        p[0] += col_x[0];
        p[1] += col_x[1];
        p[2] += col_x[2];
      }
    }
  }
}

}  // namespace

std::string orientation_code(const Mat4& affine, double tol) {
  std::string code = "???";
  bool used[3] = {false, false, false};
  for (int col = 0; col < 3; ++col) {
    const Vec3 c = affine.column3(col);
    const double len = norm(c);
    if (len < 1e-12) return "OBL";
    int dominant = 0;
    double best = 0.0;
    for (int row = 0; row < 3; ++row) {
      if (std::abs(c[row]) > best) {
        best = std::abs(c[row]);
        dominant = row;
      }
    }
    // off-axis components must be negligible for a grid-aligned volume
    for (int row = 0; row < 3; ++row) {
      if (row != dominant && std::abs(c[row]) > tol * len) return "OBL";
    }
    if (used[dominant]) return "OBL";
    used[dominant] = true;
    code[col] = kAxisLetters[dominant][c[dominant] < 0 ? 1 : 0];
  }
  return code;
}

Volume3D Volume3D::create(const std::array<int, 3>& shape, const Mat4& affine,
                          std::vector<double> data, bool allow_nonfinite) {
  if (!valid_shape(shape))
    throw Error(ErrorCode::ShapeMismatch, "volume dims must be >= 1");
  const std::size_t n = static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
  if (data.size() != n)
    throw Error(ErrorCode::ShapeMismatch, "data length does not match dims");
  if (!affine.is_affine(1e-9))
    throw Error(ErrorCode::ObliqueAffine, "affine last row must be (0,0,0,1)");
  if (!allow_nonfinite) {
    for (double v : data)
      if (!std::isfinite(v))
        throw Error(ErrorCode::NonFinite, "volume contains NaN/Inf voxels");
  }
  Volume3D vol;
  vol.shape_ = shape;
  vol.affine_ = affine;
  for (int c = 0; c < 3; ++c) {
    vol.spacing_[c] = norm(affine.column3(c));
    if (vol.spacing_[c] <= 0.0)
      throw Error(ErrorCode::ObliqueAffine, "affine column with zero norm");
  }
  vol.orientation_ = orientation_code(affine);
  vol.data_ = std::move(data);
  return vol;
}

Volume3D Volume3D::axis_aligned(const std::array<int, 3>& shape,
                                const Vec3& spacing, std::vector<double> data,
                                const std::string& orientation,
                                const Vec3& origin) {
  if (orientation.size() != 3)
    throw Error(ErrorCode::ConfigError, "orientation code must have 3 letters");
  Mat4 affine = Mat4::identity();
  for (int col = 0; col < 3; ++col) {
    int axis = -1;
    double sign = 1.0;
    for (int a = 0; a < 3; ++a) {
      if (orientation[col] == kAxisLetters[a][0]) { axis = a; sign = 1.0; }
      if (orientation[col] == kAxisLetters[a][1]) { axis = a; sign = -1.0; }
    }
    if (axis < 0)
      throw Error(ErrorCode::ConfigError, "bad orientation letter");
    for (int row = 0; row < 3; ++row) affine.m[row][col] = 0.0;
    affine.m[axis][col] = sign * spacing[col];
  }
  affine.m[0][3] = origin[0];
  affine.m[1][3] = origin[1];
  affine.m[2][3] = origin[2];
  return create(shape, affine, std::move(data));
}

Vec3 Volume3D::world_to_voxel(const Vec3& world) const {
  if (!inverse_valid_) {
    inverse_affine_ = affine_inverse(affine_);
    inverse_valid_ = true;
  }
  return inverse_affine_.apply(world);
}

Vec3 Volume3D::world_center() const {
  return affine_.apply({(shape_[0] - 1) / 2.0, (shape_[1] - 1) / 2.0,
                        (shape_[2] - 1) / 2.0});
}

bool Volume3D::same_grid(const Volume3D& other, double tol) const {
  if (shape_ != other.shape_) return false;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (std::abs(affine_.m[i][j] - other.affine_.m[i][j]) > tol) return false;
  return true;
}

Volume3D Volume3D::with_data(std::vector<double> data) const {
  return create(shape_, affine_, std::move(data));
}

BrainMask BrainMask::from_volume(const Volume3D& vol, double threshold) {
  std::vector<double> bin(vol.size());
  for (std::size_t i = 0; i < vol.size(); ++i)
    bin[i] = vol.data()[i] >= threshold ? 1.0 : 0.0;
  BrainMask m;
  m.vol_ = vol.with_data(std::move(bin));
  return m;
}

std::size_t BrainMask::count() const {
  std::size_t n = 0;
  for (double v : vol_.data()) n += (v != 0.0);
  return n;
}

Mat4 RigidTransform::matrix(const Vec3& center) const {
  Mat4 r = Mat4::from_rotation(rx, ry, rz);
  // x -> R*(x - c) + c + t
  for (int i = 0; i < 3; ++i) {
    r.m[i][3] = center[i] + (i == 0 ? tx : i == 1 ? ty : tz);
    for (int j = 0; j < 3; ++j) r.m[i][3] -= r.m[i][j] * center[j];
  }
  return r;
}

RigidTransform RigidTransform::inverse() const {
  const Mat4 r = Mat4::from_rotation(rx, ry, rz);
  const Mat4 rinv = affine_inverse(r);
  const auto angles = euler_from_rotation(rinv);
  const Vec3 t = {tx, ty, tz};
  const Vec3 ti = rinv.apply_vector(t);
  return {angles[0], angles[1], angles[2], -ti[0], -ti[1], -ti[2]};
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  // (this ∘ other)(x) = R1*(R2*(x-c)+t2) + c + t1 about a shared center
  const Mat4 r1 = Mat4::from_rotation(rx, ry, rz);
  const Mat4 r2 = Mat4::from_rotation(other.rx, other.ry, other.rz);
  const Mat4 r = mat_mul(r1, r2);
  const auto angles = euler_from_rotation(r);
  const Vec3 t2 = {other.tx, other.ty, other.tz};
  const Vec3 rt2 = r1.apply_vector(t2);
  return {angles[0], angles[1], angles[2], rt2[0] + tx, rt2[1] + ty, rt2[2] + tz};
}

Volume3D reorient_to_lpi(const Volume3D& vol) {
  const std::string code = orientation_code(vol.affine());
  if (code == "OBL")
    throw Error(ErrorCode::ObliqueAffine,
                "cannot reorient a volume with oblique axes");
  if (code == "LPI") return vol;

  // For each world axis find the source voxel axis pointing along it and
  // whether it must be flipped to point toward L/P/I (the negative world
  // direction).
  int src_axis[3];   // src_axis[world axis] = voxel axis of input
  bool flip[3];      // flip[world axis]
  for (int w = 0; w < 3; ++w) src_axis[w] = -1;
  for (int col = 0; col < 3; ++col) {
    const Vec3 c = vol.affine().column3(col);
    int dominant = 0;
    double best = 0.0;
    for (int row = 0; row < 3; ++row)
      if (std::abs(c[row]) > best) { best = std::abs(c[row]); dominant = row; }
    src_axis[dominant] = col;
    flip[dominant] = c[dominant] > 0;  // positive world direction -> flip
  }

  const auto& in_shape = vol.shape();
  std::array<int, 3> out_shape = {in_shape[src_axis[0]], in_shape[src_axis[1]],
                                  in_shape[src_axis[2]]};

  // out affine column w = (sign-fixed) source column; origin picks up the
  // far-end offset of every flipped axis so world positions are unchanged.
  Mat4 out_affine = Mat4::identity();
  Vec3 origin = {vol.affine().m[0][3], vol.affine().m[1][3], vol.affine().m[2][3]};
  for (int w = 0; w < 3; ++w) {
    Vec3 c = vol.affine().column3(src_axis[w]);
    if (flip[w]) {
      const double n1 = in_shape[src_axis[w]] - 1;
      origin = origin + n1 * c;
      c = -1.0 * c;
    }
    for (int row = 0; row < 3; ++row) out_affine.m[row][w] = c[row];
  }
  for (int row = 0; row < 3; ++row) out_affine.m[row][3] = origin[row];

  std::vector<double> out(vol.size());
  std::array<int, 3> src_idx;
  for (int z = 0; z < out_shape[2]; ++z) {
    for (int y = 0; y < out_shape[1]; ++y) {
      for (int x = 0; x < out_shape[0]; ++x) {
        const int out_idx[3] = {x, y, z};
        for (int w = 0; w < 3; ++w) {
          int v = out_idx[w];
          if (flip[w]) v = in_shape[src_axis[w]] - 1 - v;
          src_idx[src_axis[w]] = v;
        }
        out[static_cast<std::size_t>(x) +
            static_cast<std::size_t>(out_shape[0]) *
                (y + static_cast<std::size_t>(out_shape[1]) * z)] =
            vol.at(src_idx[0], src_idx[1], src_idx[2]);
      }
    }
  }
  return Volume3D::create(out_shape, out_affine, std::move(out));
}

double trilinear_sample(const Volume3D& vol, const Vec3& point) {
  const auto& s = vol.shape();
  // The grid occupies the voxel-edge extent [-0.5, n-0.5] per axis; points
  // beyond it return the fill value 0, points within it interpolate with
  // corner indices clamped to the voxel-center range [0, n-1]. This keeps
  // interpolation exact on constant fields over the whole extent.
  for (int a = 0; a < 3; ++a) {
    if (point[a] < -0.5 || point[a] > static_cast<double>(s[a]) - 0.5) return 0.0;
  }
  const double px = std::clamp(point[0], 0.0, static_cast<double>(s[0] - 1));
  const double py = std::clamp(point[1], 0.0, static_cast<double>(s[1] - 1));
  const double pz = std::clamp(point[2], 0.0, static_cast<double>(s[2] - 1));
  int x0 = static_cast<int>(std::floor(px));
  int y0 = static_cast<int>(std::floor(py));
  int z0 = static_cast<int>(std::floor(pz));
  // keep the +1 corner in range when the point sits on the far edge
  x0 = std::min(x0, s[0] - 2 < 0 ? 0 : s[0] - 2);
  y0 = std::min(y0, s[1] - 2 < 0 ? 0 : s[1] - 2);
  z0 = std::min(z0, s[2] - 2 < 0 ? 0 : s[2] - 2);
  const double fx = px - x0, fy = py - y0, fz = pz - z0;
  const int x1 = std::min(x0 + 1, s[0] - 1);
  const int y1 = std::min(y0 + 1, s[1] - 1);
  const int z1 = std::min(z0 + 1, s[2] - 1);

  const double c000 = vol.at(x0, y0, z0), c100 = vol.at(x1, y0, z0);
  const double c010 = vol.at(x0, y1, z0), c110 = vol.at(x1, y1, z0);
  const double c001 = vol.at(x0, y0, z1), c101 = vol.at(x1, y0, z1);
  const double c011 = vol.at(x0, y1, z1), c111 = vol.at(x1, y1, z1);

  const double c00 = c000 + fx * (c100 - c000);
  const double c10 = c010 + fx * (c110 - c010);
  const double c01 = c001 + fx * (c101 - c001);
  const double c11 = c011 + fx * (c111 - c011);
  const double c0 = c00 + fy * (c10 - c00);
  const double c1 = c01 + fy * (c11 - c01);
  return c0 + fz * (c1 - c0);
}

Volume3D resample_isotropic(const Volume3D& vol, double target_spacing_mm) {
  if (!(target_spacing_mm > 0.0))
    throw Error(ErrorCode::ConfigError, "target spacing must be > 0");
  const auto& s = vol.shape();
  std::array<int, 3> out_shape;
  Mat4 out_affine = vol.affine();
  for (int a = 0; a < 3; ++a) {
    out_shape[a] = std::max(
        1, static_cast<int>(std::llround(s[a] * vol.spacing()[a] / target_spacing_mm)));
    // rescale column to unit direction * target spacing
    const Vec3 c = vol.affine().column3(a);
    const double len = norm(c);
    for (int row = 0; row < 3; ++row)
      out_affine.m[row][a] = c[row] / len * target_spacing_mm;
  }
  return resample_to_grid(vol, Volume3D::create(out_shape, out_affine,
                                                std::vector<double>(
                                                    static_cast<std::size_t>(out_shape[0]) *
                                                    out_shape[1] * out_shape[2])));
}

Volume3D resample_to_grid(const Volume3D& vol, const Volume3D& target) {
  const Mat4 to_src = mat_mul(affine_inverse(vol.affine()), target.affine());
  std::vector<double> out(target.size());
  sample_affine_grid(vol, to_src, target.shape(), out);
  return Volume3D::create(target.shape(), target.affine(), std::move(out));
}

Volume3D gaussian_blur(const Volume3D& vol, double sigma_mm) {
  if (sigma_mm <= 0.0) return vol;
  const auto& s = vol.shape();
  std::vector<double> cur = vol.data();
  std::vector<double> next(cur.size());
  for (int axis = 0; axis < 3; ++axis) {
    const double sigma_vox = sigma_mm / vol.spacing()[axis];
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_vox)));
    std::vector<double> kernel(2 * radius + 1);
    for (int k = -radius; k <= radius; ++k)
      kernel[k + radius] = std::exp(-0.5 * (k / sigma_vox) * (k / sigma_vox));
    const int stride_arr[3] = {1, s[0], s[0] * s[1]};
    const int stride = stride_arr[axis];
    const int extent = s[axis];
    std::size_t i = 0;
    for (int z = 0; z < s[2]; ++z)
      for (int y = 0; y < s[1]; ++y)
        for (int x = 0; x < s[0]; ++x, ++i) {
          const int pos_arr[3] = {x, y, z};
          const int pos = pos_arr[axis];
          double acc = 0, wsum = 0;
          const int k_lo = std::max(-radius, -pos);
          const int k_hi = std::min(radius, extent - 1 - pos);
          for (int k = k_lo; k <= k_hi; ++k) {
            const double w = kernel[k + radius];
            acc += w * cur[i + static_cast<std::ptrdiff_t>(k) * stride];
            wsum += w;
          }
          next[i] = acc / wsum;
        }
    std::swap(cur, next);
  }
  return vol.with_data(std::move(cur));
}

std::pair<double, double> mask_percentiles(const Volume3D& vol,
                                           const BrainMask& mask,
                                           double lo_pct, double hi_pct) {
  if (!mask.same_grid(vol))
    throw Error(ErrorCode::GridMismatch, "mask grid differs from volume grid");
  if (!(lo_pct < hi_pct))
    throw Error(ErrorCode::ConfigError, "lo percentile must be < hi percentile");
  std::vector<double> inside;
  inside.reserve(mask.count());
  for (std::size_t i = 0; i < vol.size(); ++i)
    if (mask.at(i)) inside.push_back(vol.data()[i]);
  if (inside.empty())
    throw Error(ErrorCode::EmptyMask, "normalization mask has no voxels");
  std::sort(inside.begin(), inside.end());
  return {percentile_sorted(inside, lo_pct), percentile_sorted(inside, hi_pct)};
}

Volume3D percentile_normalize(const Volume3D& vol, const BrainMask& mask,
                              double lo_pct, double hi_pct) {
  const auto [p_lo, p_hi] = mask_percentiles(vol, mask, lo_pct, hi_pct);
  const double range = p_hi - p_lo;
  if (range < 1e-12)
    throw Error(ErrorCode::DegenerateIntensityRange,
                "percentile window has zero width");
  std::vector<double> out(vol.size(), 0.0);
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (!mask.at(i)) continue;
    out[i] = std::clamp((vol.data()[i] - p_lo) / range, 0.0, 1.0);
  }
  return vol.with_data(std::move(out));
}

Volume3D apply_rigid(const Volume3D& vol, const RigidTransform& t) {
  const Vec3 center = vol.world_center();
  const Mat4 world_inv = affine_inverse(t.matrix(center));
  // voxel -> world -> T^-1 -> source voxel, folded into one matrix
  const Mat4 chain =
      mat_mul(affine_inverse(vol.affine()), mat_mul(world_inv, vol.affine()));
  std::vector<double> out(vol.size());
  sample_affine_grid(vol, chain, vol.shape(), out);
  return vol.with_data(std::move(out));
}

Volume3D resample_through_rigid(const Volume3D& moving, const Volume3D& target,
                                const RigidTransform& t) {
  const Mat4 chain =
      mat_mul(affine_inverse(moving.affine()),
              mat_mul(affine_inverse(t.matrix(moving.world_center())),
                      target.affine()));
  std::vector<double> out(target.size());
  sample_affine_grid(moving, chain, target.shape(), out);
  return Volume3D::create(target.shape(), target.affine(), std::move(out));
}

RigidTransform draw_random_rotation(std::mt19937_64& rng, double max_angle_rad,
                                    double per_axis_prob, bool axes_fired[3]) {
  RigidTransform t;
  double* angles[3] = {&t.rx, &t.ry, &t.rz};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int a = 0; a < 3; ++a) {
    const bool fire = unit(rng) < per_axis_prob;
    if (axes_fired) axes_fired[a] = fire;
    if (fire) {
      std::uniform_real_distribution<double> ang(-max_angle_rad, max_angle_rad);
      *angles[a] = ang(rng);
    }
  }
  return t;
}

std::vector<Volume3D> random_rotation_augment(const std::vector<Volume3D>& channels,
                                              std::mt19937_64& rng,
                                              double max_angle_rad,
                                              double per_axis_prob) {
  if (channels.empty()) return {};
  for (std::size_t c = 1; c < channels.size(); ++c)
    if (!channels[c].same_grid(channels[0]))
      throw Error(ErrorCode::GridMismatch, "augment channels must share a grid");

  bool fired[3];
  const RigidTransform t =
      draw_random_rotation(rng, max_angle_rad, per_axis_prob, fired);
  if (!fired[0] && !fired[1] && !fired[2]) return channels;
  std::vector<Volume3D> out;
  out.reserve(channels.size());
  for (const auto& ch : channels) out.push_back(apply_rigid(ch, t));
  return out;
}

}  // namespace nq
