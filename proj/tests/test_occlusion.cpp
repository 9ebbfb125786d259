#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "core/error.h"
#include "core/nifti_io.h"
#include "core/occlusion.h"

using namespace nq;

namespace {

std::vector<Volume3D> random_channels(int n, int n_channels, std::uint64_t seed,
                                      bool zero_background = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::vector<Volume3D> out;
  for (int c = 0; c < n_channels; ++c) {
    std::vector<double> data(static_cast<std::size_t>(n) * n * n);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = u(rng);
    if (zero_background) {
      // zero everything outside a central core
      std::size_t i = 0;
      for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x, ++i)
            if (x < n / 4 || x >= 3 * n / 4 || y < n / 4 || y >= 3 * n / 4 ||
                z < n / 4 || z >= 3 * n / 4)
              data[i] = 0.0;
    }
    out.push_back(Volume3D::axis_aligned({n, n, n}, {1, 1, 1}, std::move(data), "LPI"));
  }
  return out;
}

LinearScorer random_linear_scorer(int n, int n_channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.02);
  std::vector<std::vector<double>> w(n_channels);
  for (auto& wc : w) {
    wc.resize(static_cast<std::size_t>(n) * n * n);
    for (auto& x : wc) x = g(rng);
  }
  return LinearScorer(std::move(w), 0.1);
}

// closed-form map for the linear scorer, straight from the definitions
struct LinearOracle {
  const LinearScorer& scorer;
  const std::vector<Volume3D>& input;
  double z0;

  LinearOracle(const LinearScorer& s, const std::vector<Volume3D>& in)
      : scorer(s), input(in), z0(s.logit(in)) {}

  double masked_score(int cx, int cy, int cz, int kernel) const {
    const int half = kernel / 2;
    const auto& grid = input[0];
    double removed = 0;
    for (int z = std::max(0, cz - half); z <= std::min(grid.nz() - 1, cz + half); ++z)
      for (int y = std::max(0, cy - half); y <= std::min(grid.ny() - 1, cy + half); ++y)
        for (int x = std::max(0, cx - half); x <= std::min(grid.nx() - 1, cx + half); ++x)
          for (std::size_t c = 0; c < input.size(); ++c)
            removed += scorer.weights()[c][grid.index(x, y, z)] *
                       input[c].data()[grid.index(x, y, z)];
    return 1.0 / (1.0 + std::exp(-(z0 - removed)));
  }
};

}  // namespace

TEST_SUITE_BEGIN("occlusion");

TEST_CASE("linear scorer: every map value matches the closed form") {
  const int n = 12;
  const auto input = random_channels(n, 2, 5);
  const auto scorer = random_linear_scorer(n, 2, 17);
  const auto map = occlusion_map(input, scorer, {7, 1, true, 0, 1});
  REQUIRE_FALSE(map.degenerate);

  const LinearOracle oracle(scorer, input);
  const double baseline = 1.0 / (1.0 + std::exp(-oracle.z0));
  CHECK(map.baseline == doctest::Approx(baseline).epsilon(1e-12));

  // oracle map: raw deltas then the same minmax-invert finalization
  std::vector<double> delta(input[0].size());
  std::size_t i = 0;
  double dmin = 1e300, dmax = -1e300;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x, ++i) {
        delta[i] = std::abs(oracle.masked_score(x, y, z, 7) - baseline);
        dmin = std::min(dmin, delta[i]);
        dmax = std::max(dmax, delta[i]);
      }
  std::size_t argmax = 0;
  for (std::size_t j = 0; j < delta.size(); ++j)
    if (delta[j] > delta[argmax]) argmax = j;
  for (std::size_t j = 0; j < delta.size(); ++j) {
    const double expect = 1.0 - (delta[j] - dmin) / (dmax - dmin);
    CHECK(std::abs(map.values.data()[j] - expect) < 1e-10);
  }

  SUBCASE("values lie in [0,1] and the max-delta voxel is the minimum") {
    double got_min = 2.0;
    std::size_t got_argmin = 0;
    for (std::size_t j = 0; j < map.values.size(); ++j) {
      CHECK(map.values.data()[j] >= 0.0);
      CHECK(map.values.data()[j] <= 1.0);
      if (map.values.data()[j] < got_min) {
        got_min = map.values.data()[j];
        got_argmin = j;
      }
    }
    CHECK(got_argmin == argmax);
    CHECK(map.values.data()[argmax] == doctest::Approx(0.0));
  }
}

TEST_CASE("zero-background region has no impact with the linear scorer") {
  const int n = 12;
  const auto input = random_channels(n, 1, 9, /*zero_background=*/true);
  const auto scorer = random_linear_scorer(n, 1, 23);
  const auto map = occlusion_map(input, scorer, {3, 1, true, 0, 1});
  REQUIRE_FALSE(map.degenerate);
  // a corner kernel covers only zeros: masking changes nothing -> delta 0
  // -> final value 1 (anchored by the minmax over a map with dmin 0)
  CHECK(map.raw_scores.at(0, 0, 0) == doctest::Approx(map.baseline).epsilon(1e-12));
  CHECK(map.values.at(0, 0, 0) == doctest::Approx(1.0));
}

TEST_CASE("1x1x1 kernel on a 3^3 volume evaluates all 27 positions") {
  struct CountingScorer : Scorer {
    mutable int calls = 0;
    int channels() const override { return 1; }
    double score(const std::vector<Volume3D>& in) const override {
      ++calls;
      double s = 0;
      for (double v : in[0].data()) s += v;
      return 1.0 / (1.0 + std::exp(-s));
    }
  };
  CountingScorer scorer;
  const auto input = random_channels(3, 1, 3);
  const auto map = occlusion_map(input, scorer, {1, 1, true, 0, 1});
  CHECK(scorer.calls == 27 + 1);  // 27 centers + the baseline
  CHECK(map.values.shape() == input[0].shape());
}

TEST_CASE("constant scorer yields a degenerate-flagged all-ones map") {
  struct ConstScorer : Scorer {
    int channels() const override { return 1; }
    double score(const std::vector<Volume3D>&) const override { return 0.42; }
  };
  const auto input = random_channels(6, 1, 31);
  const auto map = occlusion_map(input, ConstScorer{}, {3, 1, true, 0, 1});
  CHECK(map.degenerate);
  for (double v : map.values.data()) CHECK(v == 1.0);
}

TEST_CASE("stride: raw scores at shared centers equal the stride-1 map") {
  const int n = 9;
  const auto input = random_channels(n, 1, 41);
  const auto scorer = random_linear_scorer(n, 1, 43);
  const auto dense = occlusion_map(input, scorer, {3, 1, true, 0, 1});
  const auto strided = occlusion_map(input, scorer, {3, 3, true, 0, 1});
  for (int z = 0; z < n; z += 3)
    for (int y = 0; y < n; y += 3)
      for (int x = 0; x < n; x += 3)
        CHECK(strided.raw_scores.at(x, y, z) ==
              doctest::Approx(dense.raw_scores.at(x, y, z)).epsilon(1e-12));

  SUBCASE("off-grid voxels take their nearest center's raw score") {
    CHECK(strided.raw_scores.at(1, 0, 0) == strided.raw_scores.at(0, 0, 0));
    CHECK(strided.raw_scores.at(2, 0, 0) == strided.raw_scores.at(3, 0, 0));
  }
}

TEST_CASE("parallel evaluation matches sequential") {
  const int n = 8;
  const auto input = random_channels(n, 2, 51);
  const auto scorer = random_linear_scorer(n, 2, 53);
  const auto seq = occlusion_map(input, scorer, {3, 1, true, 0, 1});
  const auto par = occlusion_map(input, scorer, {3, 1, true, 0, 4});
  CHECK(seq.values.data() == par.values.data());
}

TEST_CASE("channel mismatch raises") {
  const auto input = random_channels(6, 1, 61);
  const auto scorer = random_linear_scorer(6, 2, 63);
  try {
    occlusion_map(input, scorer, {3, 1, true, 0, 1});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ScorerChannelMismatch);
  }
}

TEST_CASE("single-channel masking flag") {
  const int n = 8;
  const auto input = random_channels(n, 2, 71);
  const auto scorer = random_linear_scorer(n, 2, 73);
  OcclusionConfig cfg{5, 2, false, 1, 1};
  const auto map = occlusion_map(input, scorer, cfg);
  // oracle for masking only channel 1
  const LinearOracle full(scorer, input);
  const int cx = 4, cy = 4, cz = 4;
  double removed = 0;
  const auto& grid = input[0];
  for (int z = cz - 2; z <= std::min(n - 1, cz + 2); ++z)
    for (int y = cy - 2; y <= std::min(n - 1, cy + 2); ++y)
      for (int x = cx - 2; x <= std::min(n - 1, cx + 2); ++x)
        removed += scorer.weights()[1][grid.index(x, y, z)] *
                   input[1].data()[grid.index(x, y, z)];
  const double expect = 1.0 / (1.0 + std::exp(-(full.z0 - removed)));
  CHECK(map.raw_scores.at(cx, cy, cz) == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("case report writes aligned bundles and rejects mismatched grids") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "nq_occlusion_case";
  fs::remove_all(dir);
  const int n = 8;
  const auto input = random_channels(n, 2, 81);
  const auto scorer = random_linear_scorer(n, 2, 83);
  const auto map = occlusion_map(input, scorer, {3, 2, true, 0, 1});
  const auto pet = input[0].with_data(input[0].data());

  case_report(input, pet, map, dir.string());
  CHECK(fs::exists(dir / "channel0.nii.gz"));
  CHECK(fs::exists(dir / "channel1.nii.gz"));
  CHECK(fs::exists(dir / "pet.nii.gz"));
  CHECK(fs::exists(dir / "activation_map.nii.gz"));
  CHECK(fs::exists(dir / "montage.pgm"));

  // map roundtrips bit-exactly at float64
  const auto back = read_nifti_file((dir / "activation_map.nii.gz").string());
  CHECK(back.data() == map.values.data());

  // PGM header sanity
  const auto pgm = read_file_bytes((dir / "montage.pgm").string());
  CHECK(pgm[0] == 'P');
  CHECK(pgm[1] == '5');

  SUBCASE("grid mismatch") {
    const auto small = random_channels(4, 1, 85);
    try {
      case_report(small, pet, map, dir.string());
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::GridMismatch);
    }
  }
  fs::remove_all(dir);
}

TEST_SUITE_END();
