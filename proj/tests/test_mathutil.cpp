#include <doctest.h>

#include <random>

#include "core/mathutil.h"

using namespace nq;

TEST_SUITE_BEGIN("mathutil");

TEST_CASE("affine inverse round trip") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    Mat4 a = Mat4::from_rotation(u(rng) * 0.3, u(rng) * 0.3, u(rng) * 0.3);
    for (int i = 0; i < 3; ++i) {
      a.m[i][3] = u(rng) * 10;
      for (int j = 0; j < 3; ++j) a.m[i][j] *= 1.0 + 0.2 * std::abs(u(rng));
    }
    const Mat4 prod = mat_mul(a, affine_inverse(a));
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        CHECK(prod.m[i][j] == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));
  }
}

TEST_CASE("euler extraction inverts rotation construction") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int trial = 0; trial < 100; ++trial) {
    const double rx = u(rng), ry = u(rng), rz = u(rng);
    const auto e = euler_from_rotation(Mat4::from_rotation(rx, ry, rz));
    CHECK(e[0] == doctest::Approx(rx).epsilon(1e-12));
    CHECK(e[1] == doctest::Approx(ry).epsilon(1e-12));
    CHECK(e[2] == doctest::Approx(rz).epsilon(1e-12));
  }
}

TEST_CASE("percentile linear interpolation convention") {
  std::vector<double> ramp(101);
  for (int i = 0; i <= 100; ++i) ramp[i] = i;
  CHECK(percentile_sorted(ramp, 5.0) == doctest::Approx(5.0));
  CHECK(percentile_sorted(ramp, 95.0) == doctest::Approx(95.0));
  CHECK(percentile_sorted(ramp, 0.0) == doctest::Approx(0.0));
  CHECK(percentile_sorted(ramp, 100.0) == doctest::Approx(100.0));

  std::vector<double> four = {1.0, 2.0, 3.0, 4.0};
  // h = 3*0.5 = 1.5 -> 2.5
  CHECK(percentile_sorted(four, 50.0) == doctest::Approx(2.5));
}

TEST_CASE("special function reference values") {
  // chi-squared critical points
  CHECK(chi2_sf(3.841458820694124, 1) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(chi2_sf(5.991464547107979, 2) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(chi2_sf(0.0, 1) == doctest::Approx(1.0));
  // two-sided t
  CHECK(student_t_two_sided(2.0, 10.0) == doctest::Approx(0.0733880292).epsilon(1e-7));
  CHECK(student_t_two_sided(0.0, 5.0) == doctest::Approx(1.0));
  // normal quantile / survival
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963985).epsilon(1e-8));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(normal_sf(1.959963985) == doctest::Approx(0.025).epsilon(1e-8));
  // chi2(1) tail equals erfc(sqrt(x/2))
  for (double x : {0.5, 1.0, 2.0, 5.0, 16.0})
    CHECK(chi2_sf(x, 1) == doctest::Approx(std::erfc(std::sqrt(x / 2))).epsilon(1e-12));
}

TEST_SUITE_END();
