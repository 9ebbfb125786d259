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

#include "core/registration.h"

#include <algorithm>
#include <cmath>
#include <queue>

#include "core/error.h"

namespace nq {

namespace {

// MSE of (fixed - moving∘T) evaluated at a deterministic stride over the
// fixed grid; out-of-grid moving samples contribute the fill value 0.
class MseObjective {
public:
  MseObjective(const Volume3D& moving, const Volume3D& fixed,
               std::size_t max_samples)
      : moving_(moving), fixed_(fixed), center_(moving.world_center()) {
    const std::size_t total = fixed.size();
    stride_ = 1;
    while (total / stride_ > max_samples) ++stride_;
  }

  double operator()(const RigidTransform& t) const {
    const Mat4 chain = mat_mul(affine_inverse(moving_.affine()),
                               mat_mul(affine_inverse(t.matrix(center_)),
                                       fixed_.affine()));
    double sse = 0;
    std::size_t count = 0;
    const auto& s = fixed_.shape();
    std::size_t i = 0;
    for (int z = 0; z < s[2]; ++z)
      for (int y = 0; y < s[1]; ++y)
        for (int x = 0; x < s[0]; ++x, ++i) {
          if (i % stride_) continue;
          const double m = trilinear_sample(
              moving_, chain.apply({double(x), double(y), double(z)}));
          const double d = fixed_.data()[i] - m;
          sse += d * d;
          ++count;
        }
    return sse / static_cast<double>(count);
  }

  double overlap_fraction(const RigidTransform& t) const {
    const Mat4 chain = mat_mul(affine_inverse(moving_.affine()),
                               mat_mul(affine_inverse(t.matrix(center_)),
                                       fixed_.affine()));
    std::size_t inside = 0, count = 0;
    const auto& s = fixed_.shape();
    const auto& ms = moving_.shape();
    std::size_t i = 0;
    for (int z = 0; z < s[2]; ++z)
      for (int y = 0; y < s[1]; ++y)
        for (int x = 0; x < s[0]; ++x, ++i) {
          if (i % stride_) continue;
          ++count;
          const Vec3 p = chain.apply({double(x), double(y), double(z)});
          bool in = true;
          for (int a = 0; a < 3; ++a)
            if (p[a] < -0.5 || p[a] > ms[a] - 0.5) in = false;
          inside += in;
        }
    return static_cast<double>(inside) / static_cast<double>(count);
  }

private:
  const Volume3D& moving_;
  const Volume3D& fixed_;
  Vec3 center_;
  std::size_t stride_;
};

// Golden-section minimization of f along one coordinate within
// [x - h, x + h]; returns the refined coordinate and its value.
template <typename F>
std::pair<double, double> golden_section(const F& f, double x, double h,
                                         double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = x - h, b = x + h;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return fc < fd ? std::make_pair(c, fc) : std::make_pair(d, fd);
}

}  // namespace

RegistrationResult rigid_register(const Volume3D& moving, const Volume3D& fixed,
                                  const RegistrationConfig& cfg) {
  RegistrationResult result;
  const double base_spacing =
      *std::max_element(fixed.spacing().begin(), fixed.spacing().end());

  {
    MseObjective check(moving, fixed, cfg.max_samples_per_level);
    if (check.overlap_fraction(RigidTransform{}) < cfg.min_overlap_fraction)
      throw Error(ErrorCode::EmptyOverlap,
                  "volumes share <10% of the fixed grid at the identity pose");
  }

  RigidTransform t;  // identity start
  for (std::size_t level = 0; level < cfg.pyramid.size(); ++level) {
    const double factor = cfg.pyramid[level];
    const double target = base_spacing * factor;
    // anti-alias before decimating
    const double sigma = factor > 1.0 ? 0.5 * target : 0.0;
    const Volume3D fixed_l =
        resample_isotropic(gaussian_blur(fixed, sigma), target);
    const Volume3D moving_l =
        resample_isotropic(gaussian_blur(moving, sigma), target);
    const MseObjective objective(moving_l, fixed_l, cfg.max_samples_per_level);

    result.level_offsets.push_back(result.objective_trace.size());
    double current = objective(t);
    result.objective_trace.push_back(current);

    // finer levels start from tighter brackets; sqrt decay keeps enough
    // search range to absorb a coarse-level miss
    const double level_scale = std::sqrt(factor / cfg.pyramid.front());
    double rot_h = cfg.rotation_bracket_rad * level_scale;
    double trans_h = cfg.translation_bracket_mm * level_scale;

    bool level_converged = false;
    for (int sweep = 0; sweep < cfg.max_sweeps_per_level; ++sweep) {
      auto params = t.params();
      double max_change = 0;
      for (int p = 0; p < 6; ++p) {
        const double h = p < 3 ? rot_h : trans_h;
        const double line_tol = std::max(h * 1e-3, cfg.param_tolerance * 0.1);
        auto line = [&](double value) {
          auto trial = params;
          trial[p] = value;
          return objective(RigidTransform::from_params(trial));
        };
        const auto [best_x, best_f] = golden_section(line, params[p], h, line_tol);
        if (best_f < current) {
          max_change = std::max(max_change, std::abs(best_x - params[p]));
          params[p] = best_x;
          current = best_f;
          result.objective_trace.push_back(current);
        }
      }
      t = RigidTransform::from_params(params);
      ++result.iterations;
      rot_h *= 0.6;
      trans_h *= 0.6;
      if (max_change < cfg.param_tolerance) {
        level_converged = true;
        break;
      }
    }
    result.converged = level_converged;
  }

  result.transform = t;
  MseObjective full(moving, fixed, cfg.max_samples_per_level);
  result.final_mse = full(t);
  return result;
}

double otsu_threshold(const Volume3D& vol) {
  const auto [mn_it, mx_it] =
      std::minmax_element(vol.data().begin(), vol.data().end());
  const double mn = *mn_it, mx = *mx_it;
  if (!(mx > mn))
    throw Error(ErrorCode::DegenerateIntensityRange,
                "volume has no dynamic range");
  constexpr int kBins = 256;
  std::vector<double> hist(kBins, 0.0);
  const double scale = kBins / (mx - mn);
  for (double v : vol.data()) {
    int b = static_cast<int>((v - mn) * scale);
    if (b >= kBins) b = kBins - 1;
    hist[b] += 1.0;
  }
  const double total = static_cast<double>(vol.size());
  double sum_all = 0;
  for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];

  double w0 = 0, sum0 = 0, best_sigma = -1.0;
  int best_bin = 0;
  for (int tb = 0; tb < kBins - 1; ++tb) {
    w0 += hist[tb];
    sum0 += tb * hist[tb];
    if (w0 == 0) continue;
    const double w1 = total - w0;
    if (w1 == 0) break;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double sigma = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (sigma > best_sigma + 1e-12) {
      best_sigma = sigma;
      best_bin = tb;
    }
  }
  // threshold at the upper edge of the background bin
  return mn + (best_bin + 1) / scale;
}

BrainMask extract_brain(const Volume3D& vol, const BrainExtractConfig& cfg) {
  const double thr = otsu_threshold(vol);
  const auto& s = vol.shape();
  std::vector<std::uint8_t> fg(vol.size());
  bool any = false;
  for (std::size_t i = 0; i < vol.size(); ++i) {
    fg[i] = vol.data()[i] >= thr;
    any |= fg[i];
  }
  if (!any)
    throw Error(ErrorCode::EmptyMask, "no voxel exceeds the Otsu threshold");

  // largest 6-connected component
  std::vector<std::int32_t> comp(vol.size(), -1);
  std::int32_t n_comp = 0;
  std::size_t best_size = 0;
  std::int32_t best_comp = -1;
  std::vector<std::size_t> stack;
  const int dx[6] = {1, -1, 0, 0, 0, 0};
  const int dy[6] = {0, 0, 1, -1, 0, 0};
  const int dz[6] = {0, 0, 0, 0, 1, -1};
  for (std::size_t seed = 0; seed < vol.size(); ++seed) {
    if (!fg[seed] || comp[seed] >= 0) continue;
    const std::int32_t id = n_comp++;
    std::size_t size = 0;
    stack.clear();
    stack.push_back(seed);
    comp[seed] = id;
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      ++size;
      const int x = static_cast<int>(cur % s[0]);
      const int y = static_cast<int>((cur / s[0]) % s[1]);
      const int z = static_cast<int>(cur / (static_cast<std::size_t>(s[0]) * s[1]));
      for (int d = 0; d < 6; ++d) {
        const int nx = x + dx[d], ny = y + dy[d], nz = z + dz[d];
        if (nx < 0 || ny < 0 || nz < 0 || nx >= s[0] || ny >= s[1] || nz >= s[2])
          continue;
        const std::size_t ni = vol.index(nx, ny, nz);
        if (fg[ni] && comp[ni] < 0) {
          comp[ni] = id;
          stack.push_back(ni);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best_comp = id;
    }
  }
  std::vector<std::uint8_t> mask(vol.size());
  for (std::size_t i = 0; i < vol.size(); ++i) mask[i] = comp[i] == best_comp;

  // morphological closing with a spacing-aware ball
  const double r = cfg.closing_radius_mm;
  if (r > 0) {
    std::vector<std::array<int, 3>> ball;
    const int rx = static_cast<int>(std::floor(r / vol.spacing()[0]));
    const int ry = static_cast<int>(std::floor(r / vol.spacing()[1]));
    const int rz = static_cast<int>(std::floor(r / vol.spacing()[2]));
    for (int z = -rz; z <= rz; ++z)
      for (int y = -ry; y <= ry; ++y)
        for (int x = -rx; x <= rx; ++x) {
          const double d2 = x * vol.spacing()[0] * x * vol.spacing()[0] +
                            y * vol.spacing()[1] * y * vol.spacing()[1] +
                            z * vol.spacing()[2] * z * vol.spacing()[2];
          if (d2 <= r * r) ball.push_back({x, y, z});
        }
    auto dilate_or_erode = [&](const std::vector<std::uint8_t>& in, bool dilate) {
      std::vector<std::uint8_t> out(in.size());
      for (int z = 0; z < s[2]; ++z)
        for (int y = 0; y < s[1]; ++y)
          for (int x = 0; x < s[0]; ++x) {
            bool hit = !dilate;
            for (const auto& o : ball) {
              const int px = x + o[0], py = y + o[1], pz = z + o[2];
              const bool v = px >= 0 && py >= 0 && pz >= 0 && px < s[0] &&
                                     py < s[1] && pz < s[2]
                                 ? in[vol.index(px, py, pz)] != 0
                                 : false;  // outside counts as background
              if (dilate && v) { hit = true; break; }
              if (!dilate && !v) { hit = false; break; }
            }
            out[vol.index(x, y, z)] = hit;
          }
      return out;
    };
    mask = dilate_or_erode(dilate_or_erode(mask, true), false);
  }

  std::vector<double> data(mask.begin(), mask.end());
  return BrainMask::from_volume(vol.with_data(std::move(data)), 0.5);
}

}  // namespace nq
