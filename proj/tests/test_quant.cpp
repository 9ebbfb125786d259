#include <doctest.h>

#include <random>

#include "core/error.h"
#include "core/quant.h"

using namespace nq;

namespace {

BrainMask box_mask(const Volume3D& grid, int x0, int x1) {
  std::vector<double> m(grid.size(), 0.0);
  for (int z = 0; z < grid.nz(); ++z)
    for (int y = 0; y < grid.ny(); ++y)
      for (int x = x0; x < x1; ++x) m[grid.index(x, y, z)] = 1.0;
  return BrainMask::from_volume(grid.with_data(std::move(m)));
}

}  // namespace

TEST_SUITE_BEGIN("quant");

TEST_CASE("SUVR of a uniform volume is 1") {
  auto pet = Volume3D::axis_aligned({8, 4, 4}, {1, 1, 1},
                                    std::vector<double>(128, 3.7), "LPI");
  const auto target = box_mask(pet, 0, 4);
  const auto reference = box_mask(pet, 4, 8);
  CHECK(compute_suvr(pet, target, reference) == doctest::Approx(1.0));
}

TEST_CASE("SUVR equals the ratio of region means") {
  std::vector<double> data(128);
  auto grid = Volume3D::axis_aligned({8, 4, 4}, {1, 1, 1}, data, "LPI");
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 8; ++x)
        data[grid.index(x, y, z)] = x < 4 ? 1.5 : 1.0;
  auto pet = grid.with_data(std::move(data));
  CHECK(compute_suvr(pet, box_mask(pet, 0, 4), box_mask(pet, 4, 8)) ==
        doctest::Approx(1.5));
}

TEST_CASE("SUVR matches an independent two-pass mean on random data") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.5, 2.5);
  std::vector<double> data(128);
  for (auto& v : data) v = u(rng);
  auto pet = Volume3D::axis_aligned({8, 4, 4}, {1, 1, 1}, data, "LPI");
  const auto target = box_mask(pet, 0, 3);
  const auto reference = box_mask(pet, 5, 8);

  double tsum = 0, rsum = 0;
  std::size_t tn = 0, rn = 0;
  for (std::size_t i = 0; i < pet.size(); ++i) {
    if (target.at(i)) { tsum += data[i]; ++tn; }
    if (reference.at(i)) { rsum += data[i]; ++rn; }
  }
  const double expected = (tsum / tn) / (rsum / rn);
  CHECK(compute_suvr(pet, target, reference) ==
        doctest::Approx(expected).epsilon(1e-12));

  SUBCASE("invariant under uniform intensity rescaling") {
    std::vector<double> scaled = data;
    for (auto& v : scaled) v *= 37.5;
    const double s2 = compute_suvr(pet.with_data(std::move(scaled)), target, reference);
    CHECK(s2 == doctest::Approx(compute_suvr(pet, target, reference)).epsilon(1e-12));
  }
}

TEST_CASE("SUVR error paths") {
  auto pet = Volume3D::axis_aligned({8, 4, 4}, {1, 1, 1},
                                    std::vector<double>(128, 0.0), "LPI");
  const auto target = box_mask(pet, 0, 4);
  const auto reference = box_mask(pet, 4, 8);
  SUBCASE("zero reference") {
    try {
      compute_suvr(pet, target, reference);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ZeroReference);
    }
  }
  SUBCASE("empty mask") {
    const auto empty = box_mask(pet, 0, 0);
    try {
      compute_suvr(pet, empty, reference);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptyMask);
    }
  }
}

TEST_CASE("centiloid linear map") {
  TracerCalibration cal{Tracer::Custom, 100.0, -100.0, 20.0};
  CHECK(centiloid_from_suvr(1.0, cal) == doctest::Approx(0.0));
  CHECK(centiloid_from_suvr(2.0, cal) == doctest::Approx(100.0));

  TracerCalibration fbb = TracerCalibration::fbb_default();
  CHECK(centiloid_from_suvr(1.2, fbb) == doctest::Approx(29.18).epsilon(1e-12));

  SUBCASE("strictly increasing in suvr") {
    for (double s = 0.5; s < 2.5; s += 0.1)
      CHECK(centiloid_from_suvr(s + 0.1, fbb) > centiloid_from_suvr(s, fbb));
  }
}

TEST_CASE("status classification and cutoffs") {
  const auto fbb = TracerCalibration::fbb_default();
  const auto fbp = TracerCalibration::fbp_default();
  const auto oasis = TracerCalibration::oasis3_default();

  CHECK(fbb.cutoff_cl == 12.0);
  CHECK(fbp.cutoff_cl == 18.0);
  CHECK(oasis.cutoff_cl == 20.6);

  CHECK(classify_status(30.0, fbb) == AmyloidStatus::Positive);
  CHECK(classify_status(17.9, fbp) == AmyloidStatus::Negative);
  // boundary: >= rule
  CHECK(classify_status(20.6, oasis) == AmyloidStatus::Positive);
  CHECK(classify_status(12.0, fbb) == AmyloidStatus::Positive);
  CHECK(classify_status(18.0, fbp) == AmyloidStatus::Positive);

  SUBCASE("monotone in centiloid") {
    bool seen_positive = false;
    for (double cl = -20; cl <= 60; cl += 0.5) {
      const bool pos = classify_status(cl, fbb) == AmyloidStatus::Positive;
      if (seen_positive) CHECK(pos);
      seen_positive |= pos;
    }
  }

  SUBCASE("invalid calibrations are rejected") {
    TracerCalibration bad{Tracer::Custom, 0.0, 0.0, 10.0};
    CHECK_THROWS_AS(centiloid_from_suvr(1.0, bad), Error);
  }
}

TEST_SUITE_END();
