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

#ifndef NEUROQUANT_CORE_VOLUME_H
#define NEUROQUANT_CORE_VOLUME_H

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "core/mathutil.h"

namespace nq {

// A 3D scalar grid with voxel spacing, an orientation code, and a
// voxel-index -> world-mm affine. This is the universal image currency of
// the pipeline. Data is stored with x fastest:
//   linear index = x + nx*(y + ny*z)
// which matches the on-disk order of NIfTI-1 spatial data.
//
// World coordinates follow the NIfTI convention (+x right, +y anterior,
// +z superior); the orientation code names the anatomical direction of each
// *increasing* voxel axis, e.g. "LPI" means +i goes left, +j posterior,
// +k inferior. Volumes whose axes do not align with the world axes get the
// code "OBL" and are rejected by reorientation.
class Volume3D {
public:
  Volume3D() = default;

  // Validates the affine, derives spacing (column norms) and the orientation
  // code. Throws NonFinite if data contains NaN/Inf (unless allow_nonfinite),
  // ShapeMismatch if data length differs from nx*ny*nz.
  static Volume3D create(const std::array<int, 3>& shape, const Mat4& affine,
                         std::vector<double> data, bool allow_nonfinite = false);

  // Axis-aligned volume: affine = diag(spacing) with +RAS directions unless
  // an orientation code is given ("LPI" flips all three signs, etc.).
  static Volume3D axis_aligned(const std::array<int, 3>& shape,
                               const Vec3& spacing, std::vector<double> data,
                               const std::string& orientation = "RAS",
                               const Vec3& origin = {0, 0, 0});

  const std::array<int, 3>& shape() const { return shape_; }
  const Vec3& spacing() const { return spacing_; }
  const Mat4& affine() const { return affine_; }
  const std::string& orientation() const { return orientation_; }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& mutable_data() { return data_; }

  int nx() const { return shape_[0]; }
  int ny() const { return shape_[1]; }
  int nz() const { return shape_[2]; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(shape_[0]) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(shape_[1]) * static_cast<std::size_t>(z));
  }
  double at(int x, int y, int z) const { return data_[index(x, y, z)]; }
  double& at(int x, int y, int z) { return data_[index(x, y, z)]; }

  Vec3 voxel_to_world(const Vec3& idx) const { return affine_.apply(idx); }
  Vec3 world_to_voxel(const Vec3& world) const;
  // world coordinate of the geometric center of the voxel grid
  Vec3 world_center() const;

  bool same_grid(const Volume3D& other, double tol = 1e-9) const;

  // Replace voxel values, keeping the grid. Length must match.
  Volume3D with_data(std::vector<double> data) const;

private:
  std::array<int, 3> shape_{0, 0, 0};
  Vec3 spacing_{1, 1, 1};
  Mat4 affine_ = Mat4::identity();
  std::string orientation_ = "RAS";
  std::vector<double> data_;
  mutable Mat4 inverse_affine_;
  mutable bool inverse_valid_ = false;
};

// Orientation code ("RAS", "LPI", ...) implied by an affine's column sign
// pattern; "OBL" when a column is not aligned with a world axis within tol
// (relative to the column norm) or the dominant axes do not form a
// permutation.
std::string orientation_code(const Mat4& affine, double tol = 1e-3);

// Binary mask sharing a companion volume's grid. Voxels are 0 or 1.
class BrainMask {
public:
  BrainMask() = default;
  // Binarize at threshold; values >= threshold become 1.
  static BrainMask from_volume(const Volume3D& vol, double threshold = 0.5);

  const Volume3D& volume() const { return vol_; }
  bool at(std::size_t i) const { return vol_.data()[i] != 0.0; }
  std::size_t count() const;
  bool same_grid(const Volume3D& other) const { return vol_.same_grid(other); }

private:
  Volume3D vol_;
};

// Six rigid degrees of freedom: rotation angles about the x/y/z axes through
// a volume's world-space center (applied as Rz*Ry*Rx), then a translation in
// world mm.
struct RigidTransform {
  double rx = 0, ry = 0, rz = 0;  // radians
  double tx = 0, ty = 0, tz = 0;  // mm

  // World-space map x -> R*(x - center) + center + t.
  Mat4 matrix(const Vec3& center) const;
  // Transform such that inverse().matrix(c) == matrix(c)^-1 for every c.
  RigidTransform inverse() const;
  // this ∘ other (apply `other` first), about a shared center.
  RigidTransform compose(const RigidTransform& other) const;

  std::array<double, 6> params() const { return {rx, ry, rz, tx, ty, tz}; }
  static RigidTransform from_params(const std::array<double, 6>& p) {
    return {p[0], p[1], p[2], p[3], p[4], p[5]};
  }
};

// --- geometric and intensity preprocessing --------------------------------

// Reindex the data so the orientation code becomes LPI, rewriting the affine
// so every voxel keeps its world coordinate. Throws ObliqueAffine when the
// volume's axes are not grid-aligned.
Volume3D reorient_to_lpi(const Volume3D& vol);

// 8-corner trilinear interpolation at continuous voxel-index coordinates.
// Points beyond the voxel-edge extent [-0.5, n-0.5] return the fill value 0;
// within the outermost half-voxel shell the edge value is held (corner
// clamping), so constant fields interpolate exactly over the whole extent.
double trilinear_sample(const Volume3D& vol, const Vec3& point);

// Resample to isotropic spacing. Output dims: round(n_i*s_i/target), min 1;
// axis directions preserved, origin kept at the same world point.
Volume3D resample_isotropic(const Volume3D& vol, double target_spacing_mm);

// Resample `vol` onto the exact grid of `target` (world-coordinate lookup).
Volume3D resample_to_grid(const Volume3D& vol, const Volume3D& target);

// Separable gaussian smoothing; sigma in mm, kernel truncated at 3 sigma,
// edges renormalized. sigma <= 0 returns the input unchanged.
Volume3D gaussian_blur(const Volume3D& vol, double sigma_mm);

// Percentile window of the in-mask intensities (linear-interpolation
// convention).
std::pair<double, double> mask_percentiles(const Volume3D& vol,
                                           const BrainMask& mask,
                                           double lo_pct, double hi_pct);

// Map in-mask intensities to [0,1] by the (lo,hi) percentile window and set
// out-of-mask voxels to 0. Throws DegenerateIntensityRange when the window
// collapses.
Volume3D percentile_normalize(const Volume3D& vol, const BrainMask& mask,
                              double lo_pct = 5.0, double hi_pct = 95.0);

// Value at each voxel of `target` sampled from `moving` through the rigid
// map T (same convention as rigid_register: T carries moving onto the
// target's world frame, rotating about moving's world center).
Volume3D resample_through_rigid(const Volume3D& moving, const Volume3D& target,
                                const RigidTransform& t);

// Value at voxel p is sampled from T^-1 applied to p's world coordinate;
// the grid is unchanged, out-of-grid reads fill with 0. Rotation center is
// the volume's world center.
Volume3D apply_rigid(const Volume3D& vol, const RigidTransform& t);

// The augmentation draw on its own: per axis, with probability
// per_axis_prob, an angle uniform in [-max_angle, max_angle]. axes_fired
// (optional) records which axes rotated.
RigidTransform draw_random_rotation(std::mt19937_64& rng, double max_angle_rad,
                                    double per_axis_prob,
                                    bool axes_fired[3] = nullptr);

// Per-axis: with probability per_axis_prob draw an angle uniformly in
// [-max_angle, max_angle]; compose one rotation and apply it to every
// channel identically. Deterministic given the rng.
std::vector<Volume3D> random_rotation_augment(const std::vector<Volume3D>& channels,
                                              std::mt19937_64& rng,
                                              double max_angle_rad = 0.2,
                                              double per_axis_prob = 0.3);

}  // namespace nq

#endif
