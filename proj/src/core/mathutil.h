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

#ifndef NEUROQUANT_CORE_MATHUTIL_H
#define NEUROQUANT_CORE_MATHUTIL_H

#include <array>
#include <cmath>
#include <vector>

namespace nq {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator*(double s, const Vec3& a) {
  return {s * a[0], s * a[1], s * a[2]};
}
inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

// 4x4 homogeneous matrix, row-major. Used for voxel-index -> world-mm maps
// and rigid motions; the last row is always (0,0,0,1) for valid affines.
struct Mat4 {
  std::array<std::array<double, 4>, 4> m{};

  static Mat4 identity();
  static Mat4 from_rotation(double rx, double ry, double rz);  // Rz*Ry*Rx

  double& operator()(int r, int c) { return m[r][c]; }
  double operator()(int r, int c) const { return m[r][c]; }

  Vec3 column3(int c) const { return {m[0][c], m[1][c], m[2][c]}; }
  Vec3 apply(const Vec3& p) const;
  Vec3 apply_vector(const Vec3& v) const;  // no translation
  bool is_affine(double tol = 1e-12) const;
};

Mat4 mat_mul(const Mat4& a, const Mat4& b);
// Inverse of an affine 4x4 (last row 0,0,0,1). Throws on singular matrices.
Mat4 affine_inverse(const Mat4& a);

// Euler angles (rx, ry, rz) of a rotation matrix under the Rz*Ry*Rx
// convention. Valid for |ry| < pi/2, which covers the small-angle regime
// used throughout (augmentation and registration).
std::array<double, 3> euler_from_rotation(const Mat4& r);

// Percentile with the sorted-order linear-interpolation convention:
// rank h = (n-1)*p/100, result = v[floor(h)] + frac(h)*(v[floor(h)+1]-v[floor(h)]).
// `sorted` must be ascending and nonempty.
double percentile_sorted(const std::vector<double>& sorted, double pct);

// --- special functions for the statistics suite ---------------------------

// standard normal survival function P(Z > z)
double normal_sf(double z);
// standard normal quantile (inverse CDF), |relative error| < 1e-9
double normal_quantile(double p);
// regularized upper incomplete gamma Q(a, x)
double gamma_q(double a, double x);
// regularized incomplete beta I_x(a, b)
double beta_inc(double a, double b, double x);
// survival function of the chi-squared distribution with k dof
double chi2_sf(double x, double k);
// two-sided p-value for Student's t with (possibly fractional) dof
double student_t_two_sided(double t, double dof);
// log of the binomial coefficient C(n, k)
double log_choose(int n, int k);

}  // namespace nq

#endif
