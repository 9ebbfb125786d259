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

#include "core/occlusion.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <thread>

#include "core/error.h"
#include "core/nifti_io.h"

namespace nq {

LinearScorer::LinearScorer(std::vector<std::vector<double>> weights, double bias)
    : weights_(std::move(weights)), bias_(bias) {
  if (weights_.empty())
    throw Error(ErrorCode::ConfigError, "linear scorer needs >=1 channel");
}

int LinearScorer::channels() const { return static_cast<int>(weights_.size()); }

double LinearScorer::logit(const std::vector<Volume3D>& input) const {
  if (input.size() != weights_.size())
    throw Error(ErrorCode::ScorerChannelMismatch, "channel count mismatch");
  double z = bias_;
  for (std::size_t c = 0; c < weights_.size(); ++c) {
    if (input[c].size() != weights_[c].size())
      throw Error(ErrorCode::ShapeMismatch, "weight/volume size mismatch");
    const auto& data = input[c].data();
    const auto& w = weights_[c];
    for (std::size_t i = 0; i < w.size(); ++i) z += w[i] * data[i];
  }
  return z;
}

double LinearScorer::score(const std::vector<Volume3D>& input) const {
  return sigmoid(logit(input));
}

NetworkScorer::NetworkScorer(Classifier model) : model_(std::move(model)) {}

int NetworkScorer::channels() const { return model_.config().in_channels; }

double NetworkScorer::score(const std::vector<Volume3D>& input) const {
  const int g = model_.config().input_grid;
  const int c_count = model_.config().in_channels;
  if (static_cast<int>(input.size()) != c_count)
    throw Error(ErrorCode::ScorerChannelMismatch, "channel count mismatch");
  Tensor x({1, c_count, g, g, g});
  const std::size_t vox = static_cast<std::size_t>(g) * g * g;
  for (int c = 0; c < c_count; ++c) {
    const Volume3D* vol = &input[c];
    Volume3D resampled;
    if (vol->nx() != g || vol->ny() != g || vol->nz() != g) {
      // resample onto the model grid, preserving the volume's world extent
      const auto& s = vol->shape();
      Mat4 target_affine = vol->affine();
      for (int col = 0; col < 3; ++col) {
        const Vec3 column = vol->affine().column3(col);
        const double scale = static_cast<double>(s[col]) / g;
        for (int row = 0; row < 3; ++row)
          target_affine.m[row][col] = column[row] * scale;
      }
      resampled = resample_to_grid(
          *vol, Volume3D::create({g, g, g}, target_affine,
                                 std::vector<double>(vox)));
      vol = &resampled;
    }
    std::memcpy(&x.v[static_cast<std::size_t>(c) * vox], vol->data().data(),
                vox * sizeof(double));
  }
  return model_.probabilities(x, RunMode::Eval)[0];
}

namespace {

void run_parallel(std::size_t count, int jobs,
                  const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const int workers = std::min<std::size_t>(jobs, count);
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

ActivationMap occlusion_map(const std::vector<Volume3D>& input,
                            const Scorer& scorer, const OcclusionConfig& cfg) {
  if (cfg.kernel < 1 || cfg.kernel % 2 == 0)
    throw Error(ErrorCode::ConfigError, "kernel must be odd and >= 1");
  if (cfg.stride < 1)
    throw Error(ErrorCode::ConfigError, "stride must be >= 1");
  if (input.empty())
    throw Error(ErrorCode::ConfigError, "no input channels");
  if (scorer.channels() != static_cast<int>(input.size()))
    throw Error(ErrorCode::ScorerChannelMismatch,
                "scorer expects " + std::to_string(scorer.channels()) +
                    " channels, got " + std::to_string(input.size()));
  for (std::size_t c = 1; c < input.size(); ++c)
    if (!input[c].same_grid(input[0]))
      throw Error(ErrorCode::GridMismatch, "input channels must share a grid");
  if (!cfg.mask_all_channels &&
      (cfg.mask_channel < 0 || cfg.mask_channel >= static_cast<int>(input.size())))
    throw Error(ErrorCode::ConfigError, "mask_channel out of range");

  const auto& grid = input[0];
  const auto& shape = grid.shape();
  const int half = cfg.kernel / 2;
  const double baseline = scorer.score(input);

  // evaluated centers per axis: multiples of the stride
  std::array<std::vector<int>, 3> centers;
  for (int a = 0; a < 3; ++a)
    for (int v = 0; v < shape[a]; v += cfg.stride) centers[a].push_back(v);

  const std::size_t n_centers =
      centers[0].size() * centers[1].size() * centers[2].size();
  std::vector<double> center_scores(n_centers);

  run_parallel(n_centers, cfg.jobs, [&](std::size_t idx) {
    const std::size_t nx = centers[0].size(), ny = centers[1].size();
    const int cx = centers[0][idx % nx];
    const int cy = centers[1][(idx / nx) % ny];
    const int cz = centers[2][idx / (nx * ny)];

    std::vector<Volume3D> masked = input;
    const int x0 = std::max(0, cx - half), x1 = std::min(shape[0] - 1, cx + half);
    const int y0 = std::max(0, cy - half), y1 = std::min(shape[1] - 1, cy + half);
    const int z0 = std::max(0, cz - half), z1 = std::min(shape[2] - 1, cz + half);
    for (std::size_t c = 0; c < masked.size(); ++c) {
      if (!cfg.mask_all_channels && static_cast<int>(c) != cfg.mask_channel)
        continue;
      auto& data = masked[c].mutable_data();
      for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y) {
          const std::size_t row = grid.index(x0, y, z);
          std::fill(data.begin() + row, data.begin() + row + (x1 - x0 + 1), 0.0);
        }
    }
    center_scores[idx] = scorer.score(masked);
  });

  // spread center scores to every voxel via nearest-center assignment
  std::vector<double> raw(grid.size());
  auto nearest = [&](int v, int axis) {
    const auto& cs = centers[axis];
    std::size_t k = static_cast<std::size_t>((v + cfg.stride / 2) / cfg.stride);
    if (k >= cs.size()) k = cs.size() - 1;
    return k;
  };
  std::size_t i = 0;
  for (int z = 0; z < shape[2]; ++z) {
    const std::size_t kz = nearest(z, 2);
    for (int y = 0; y < shape[1]; ++y) {
      const std::size_t ky = nearest(y, 1);
      for (int x = 0; x < shape[0]; ++x, ++i) {
        const std::size_t kx = nearest(x, 0);
        raw[i] = center_scores[kx + centers[0].size() * (ky + centers[1].size() * kz)];
      }
    }
  }

  ActivationMap out;
  out.baseline = baseline;
  out.kernel = cfg.kernel;
  out.stride = cfg.stride;
  out.raw_scores = grid.with_data(raw);

  std::vector<double> delta(raw.size());
  double dmin = 1e300, dmax = -1e300;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    delta[j] = std::abs(raw[j] - baseline);
    dmin = std::min(dmin, delta[j]);
    dmax = std::max(dmax, delta[j]);
  }
  if (dmax < 1e-12) {
    out.degenerate = true;
    out.values = grid.with_data(std::vector<double>(raw.size(), 1.0));
    return out;
  }
  for (auto& d : delta) d = 1.0 - (d - dmin) / (dmax - dmin);
  out.values = grid.with_data(std::move(delta));
  return out;
}

std::vector<std::uint8_t> midslice_montage_pgm(
    const std::vector<const Volume3D*>& panels) {
  if (panels.empty())
    throw Error(ErrorCode::ConfigError, "montage needs at least one panel");
  const int nx = panels[0]->nx(), ny = panels[0]->ny();
  for (const auto* p : panels)
    if (p->nx() != nx || p->ny() != ny)
      throw Error(ErrorCode::GridMismatch, "montage panels must share x/y dims");

  const int gap = 2;
  const int width = static_cast<int>(panels.size()) * nx +
                    (static_cast<int>(panels.size()) - 1) * gap;
  const int height = ny;
  std::string header = "P5\n" + std::to_string(width) + " " +
                       std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const std::size_t data_at = out.size();
  out.resize(data_at + static_cast<std::size_t>(width) * height, 0);

  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& vol = *panels[p];
    const int z = vol.nz() / 2;
    double mn = 1e300, mx = -1e300;
    for (double v : vol.data()) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    const double scale = mx > mn ? 255.0 / (mx - mn) : 0.0;
    const int x_off = static_cast<int>(p) * (nx + gap);
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        // flip y so the montage reads top-down
        const double v = (vol.at(x, ny - 1 - y, z) - mn) * scale;
        out[data_at + static_cast<std::size_t>(y) * width + x_off + x] =
            static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
  }
  return out;
}

void case_report(const std::vector<Volume3D>& channels, const Volume3D& pet,
                 const ActivationMap& map, const std::string& out_dir,
                 const std::string& descrip) {
  for (const auto& c : channels)
    if (!c.same_grid(pet) || !c.same_grid(map.values))
      throw Error(ErrorCode::GridMismatch, "case report grids must match");

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  for (std::size_t c = 0; c < channels.size(); ++c)
    write_nifti_file(channels[c],
                     out_dir + "/channel" + std::to_string(c) + ".nii.gz",
                     NiftiDatatype::Float64, descrip);
  write_nifti_file(pet, out_dir + "/pet.nii.gz", NiftiDatatype::Float64, descrip);
  write_nifti_file(map.values, out_dir + "/activation_map.nii.gz",
                   NiftiDatatype::Float64, descrip);

  std::vector<const Volume3D*> panels;
  for (const auto& c : channels) panels.push_back(&c);
  panels.push_back(&pet);
  panels.push_back(&map.values);
  write_file_bytes(out_dir + "/montage.pgm", midslice_montage_pgm(panels));
}

}  // namespace nq
