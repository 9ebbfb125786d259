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

#include "core/network.h"

#include <cmath>
#include <cstring>
#include <random>

#include <json.hpp>

#include "core/error.h"
#include "core/rng.h"

namespace nq {

namespace {

using nlohmann::json;

int conv_out_dim(int n, int stride) { return (n - 1) / stride + 1; }

int ceil_div(int a, int b) {  // b > 0
  return a > 0 ? (a + b - 1) / b : -((-a) / b);
}

void fill_normal(Tensor& t, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, stddev);
  for (auto& x : t.v) x = g(rng);
}

void check_finite(const std::vector<double>& v, ErrorCode code,
                  const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw Error(code, what);
}

double silu_val(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

}  // namespace

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// --- NetworkConfig -----------------------------------------------------------

void NetworkConfig::validate() const {
  if (in_channels != 1 && in_channels != 2)
    throw Error(ErrorCode::ConfigError, "in_channels must be 1 or 2");
  if (stem_channels < 1 || head_channels < 1)
    throw Error(ErrorCode::ConfigError, "widths must be >= 1");
  if (stem_stride != 1 && stem_stride != 2)
    throw Error(ErrorCode::ConfigError, "stem stride must be 1 or 2");
  if (input_grid < 4)
    throw Error(ErrorCode::ConfigError, "input grid too small");
  if (blocks.empty())
    throw Error(ErrorCode::ConfigError, "at least one block required");
  for (const auto& b : blocks) {
    if (b.stride != 1 && b.stride != 2)
      throw Error(ErrorCode::ConfigError, "block strides must be 1 or 2");
    if (!(b.se_ratio > 0.0 && b.se_ratio <= 1.0))
      throw Error(ErrorCode::ConfigError, "se_ratio must be in (0,1]");
    if (b.channels < 1 || b.expansion < 1 || b.repeats < 1)
      throw Error(ErrorCode::ConfigError, "block widths must be >= 1");
  }
}

std::string NetworkConfig::canonical_json() const {
  json j;
  j["in_channels"] = in_channels;
  j["stem_channels"] = stem_channels;
  j["stem_stride"] = stem_stride;
  j["head_channels"] = head_channels;
  j["input_grid"] = input_grid;
  j["preset"] = preset;
  j["blocks"] = json::array();
  for (const auto& b : blocks)
    j["blocks"].push_back({{"expansion", b.expansion},
                           {"channels", b.channels},
                           {"stride", b.stride},
                           {"repeats", b.repeats},
                           {"se_ratio", b.se_ratio}});
  return j.dump();
}

NetworkConfig NetworkConfig::from_json_text(const std::string& text) {
  json j = json::parse(text);
  NetworkConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.stem_channels = j.at("stem_channels").get<int>();
  c.stem_stride = j.value("stem_stride", 2);
  c.head_channels = j.at("head_channels").get<int>();
  c.input_grid = j.at("input_grid").get<int>();
  c.preset = j.value("preset", "custom");
  for (const auto& bj : j.at("blocks")) {
    BlockSpec b;
    b.expansion = bj.at("expansion").get<int>();
    b.channels = bj.at("channels").get<int>();
    b.stride = bj.at("stride").get<int>();
    b.repeats = bj.at("repeats").get<int>();
    b.se_ratio = bj.at("se_ratio").get<double>();
    c.blocks.push_back(b);
  }
  c.validate();
  return c;
}

NetworkConfig NetworkConfig::make_preset(const std::string& name,
                                         int in_channels) {
  NetworkConfig c;
  c.in_channels = in_channels;
  c.preset = name;
  if (name == "tiny") {
    c.stem_channels = 8;
    c.blocks = {{2, 8, 2, 1, 0.25}, {2, 16, 2, 1, 0.25}, {2, 16, 1, 1, 0.25}};
    c.head_channels = 32;
    c.input_grid = 32;
  } else if (name == "small") {
    c.stem_channels = 16;
    c.blocks = {{2, 16, 2, 1, 0.25},
                {4, 24, 2, 2, 0.25},
                {4, 32, 2, 2, 0.25}};
    c.head_channels = 64;
    c.input_grid = 32;
  } else if (name == "b3ish") {
    // same block grammar as the full-scale architecture, desk-scale widths
    c.stem_channels = 16;
    c.blocks = {{1, 8, 1, 1, 0.25},
                {6, 16, 2, 2, 0.25},
                {6, 24, 2, 2, 0.25},
                {6, 40, 2, 3, 0.25},
                {6, 64, 1, 3, 0.25}};
    c.head_channels = 96;
    c.input_grid = 64;
  } else {
    throw Error(ErrorCode::ConfigError, "unknown network preset '" + name + "'");
  }
  c.validate();
  return c;
}

// --- Conv3d ------------------------------------------------------------------

void Conv3d::init(int in_c, int out_c, int s, std::uint64_t seed) {
  in_ch = in_c;
  out_ch = out_c;
  stride = s;
  w = Tensor({out_c, in_c, 3, 3, 3});
  gw = Tensor(w.shape);
  fill_normal(w, std::sqrt(2.0 / (in_c * 27.0)), seed);
}

Tensor Conv3d::forward(const Tensor& x) {
  cached_in = x;
  const int N = x.dim(0), C = x.dim(1), Z = x.dim(2), Y = x.dim(3), X = x.dim(4);
  const int Zo = conv_out_dim(Z, stride), Yo = conv_out_dim(Y, stride),
            Xo = conv_out_dim(X, stride);
  Tensor out({N, out_ch, Zo, Yo, Xo});
  const std::size_t in_spatial = static_cast<std::size_t>(Z) * Y * X;
  const std::size_t out_spatial = static_cast<std::size_t>(Zo) * Yo * Xo;
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < out_ch; ++co) {
      double* op = &out.v[(static_cast<std::size_t>(n) * out_ch + co) * out_spatial];
      for (int ci = 0; ci < C; ++ci) {
        const double* ip =
            &x.v[(static_cast<std::size_t>(n) * C + ci) * in_spatial];
        const double* wp =
            &w.v[((static_cast<std::size_t>(co) * C + ci) * 27)];
        for (int kz = 0; kz < 3; ++kz) {
          const int zo_lo = std::max(0, ceil_div(1 - kz, stride));
          const int zo_hi = std::min(Zo - 1, (Z - kz) / stride);
          for (int ky = 0; ky < 3; ++ky) {
            const int yo_lo = std::max(0, ceil_div(1 - ky, stride));
            const int yo_hi = std::min(Yo - 1, (Y - ky) / stride);
            for (int kx = 0; kx < 3; ++kx) {
              const double wv = wp[(kz * 3 + ky) * 3 + kx];
              const int xo_lo = std::max(0, ceil_div(1 - kx, stride));
              const int xo_hi = std::min(Xo - 1, (X - kx) / stride);
              for (int zo = zo_lo; zo <= zo_hi; ++zo) {
                const int zi = zo * stride + kz - 1;
                for (int yo = yo_lo; yo <= yo_hi; ++yo) {
                  const int yi = yo * stride + ky - 1;
                  const double* irow = ip + (static_cast<std::size_t>(zi) * Y + yi) * X;
                  double* orow = op + (static_cast<std::size_t>(zo) * Yo + yo) * Xo;
                  if (stride == 1) {
                    const double* ir = irow + kx - 1;
                    for (int xo = xo_lo; xo <= xo_hi; ++xo)
                      orow[xo] += wv * ir[xo];
                  } else {
                    for (int xo = xo_lo; xo <= xo_hi; ++xo)
                      orow[xo] += wv * irow[xo * stride + kx - 1];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor Conv3d::backward(const Tensor& dy) {
  const Tensor& x = cached_in;
  const int N = x.dim(0), C = x.dim(1), Z = x.dim(2), Y = x.dim(3), X = x.dim(4);
  const int Zo = dy.dim(2), Yo = dy.dim(3), Xo = dy.dim(4);
  Tensor dx(x.shape);
  const std::size_t in_spatial = static_cast<std::size_t>(Z) * Y * X;
  const std::size_t out_spatial = static_cast<std::size_t>(Zo) * Yo * Xo;
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < out_ch; ++co) {
      const double* dp =
          &dy.v[(static_cast<std::size_t>(n) * out_ch + co) * out_spatial];
      for (int ci = 0; ci < C; ++ci) {
        const double* ip =
            &x.v[(static_cast<std::size_t>(n) * C + ci) * in_spatial];
        double* dxp = &dx.v[(static_cast<std::size_t>(n) * C + ci) * in_spatial];
        const std::size_t wbase = (static_cast<std::size_t>(co) * C + ci) * 27;
        for (int kz = 0; kz < 3; ++kz) {
          const int zo_lo = std::max(0, ceil_div(1 - kz, stride));
          const int zo_hi = std::min(Zo - 1, (Z - kz) / stride);
          for (int ky = 0; ky < 3; ++ky) {
            const int yo_lo = std::max(0, ceil_div(1 - ky, stride));
            const int yo_hi = std::min(Yo - 1, (Y - ky) / stride);
            for (int kx = 0; kx < 3; ++kx) {
              const double wv = w.v[wbase + (kz * 3 + ky) * 3 + kx];
              double acc = 0;
              const int xo_lo = std::max(0, ceil_div(1 - kx, stride));
              const int xo_hi = std::min(Xo - 1, (X - kx) / stride);
              for (int zo = zo_lo; zo <= zo_hi; ++zo) {
                const int zi = zo * stride + kz - 1;
                for (int yo = yo_lo; yo <= yo_hi; ++yo) {
                  const int yi = yo * stride + ky - 1;
                  const double* irow = ip + (static_cast<std::size_t>(zi) * Y + yi) * X + kx - 1;
                  double* dxrow = dxp + (static_cast<std::size_t>(zi) * Y + yi) * X + kx - 1;
                  const double* drow = dp + (static_cast<std::size_t>(zo) * Yo + yo) * Xo;
                  for (int xo = xo_lo; xo <= xo_hi; ++xo) {
                    const double g = drow[xo];
                    acc += g * irow[xo * stride];
                    dxrow[xo * stride] += wv * g;
                  }
                }
              }
              gw.v[wbase + (kz * 3 + ky) * 3 + kx] += acc;
            }
          }
        }
      }
    }
  }
  return dx;
}

// --- PointwiseConv -----------------------------------------------------------

void PointwiseConv::init(int in_c, int out_c, std::uint64_t seed) {
  in_ch = in_c;
  out_ch = out_c;
  w = Tensor({out_c, in_c});
  gw = Tensor(w.shape);
  fill_normal(w, std::sqrt(2.0 / in_c), seed);
}

Tensor PointwiseConv::forward(const Tensor& x) {
  cached_in = x;
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t V = x.size() / (static_cast<std::size_t>(N) * C);
  std::vector<int> out_shape = x.shape;
  out_shape[1] = out_ch;
  Tensor out(out_shape);
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < out_ch; ++co) {
      double* op = &out.v[(static_cast<std::size_t>(n) * out_ch + co) * V];
      for (int ci = 0; ci < C; ++ci) {
        const double wv = w.v[static_cast<std::size_t>(co) * C + ci];
        const double* ip = &x.v[(static_cast<std::size_t>(n) * C + ci) * V];
        for (std::size_t i = 0; i < V; ++i) op[i] += wv * ip[i];
      }
    }
  return out;
}

Tensor PointwiseConv::backward(const Tensor& dy) {
  const Tensor& x = cached_in;
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t V = x.size() / (static_cast<std::size_t>(N) * C);
  Tensor dx(x.shape);
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < out_ch; ++co) {
      const double* dp = &dy.v[(static_cast<std::size_t>(n) * out_ch + co) * V];
      for (int ci = 0; ci < C; ++ci) {
        const double* ip = &x.v[(static_cast<std::size_t>(n) * C + ci) * V];
        double* dxp = &dx.v[(static_cast<std::size_t>(n) * C + ci) * V];
        const double wv = w.v[static_cast<std::size_t>(co) * C + ci];
        double acc = 0;
        for (std::size_t i = 0; i < V; ++i) {
          acc += dp[i] * ip[i];
          dxp[i] += wv * dp[i];
        }
        gw.v[static_cast<std::size_t>(co) * C + ci] += acc;
      }
    }
  return dx;
}

// --- DepthwiseConv3d ---------------------------------------------------------

void DepthwiseConv3d::init(int c, int s, std::uint64_t seed) {
  channels = c;
  stride = s;
  w = Tensor({c, 3, 3, 3});
  gw = Tensor(w.shape);
  fill_normal(w, std::sqrt(2.0 / 27.0), seed);
}

Tensor DepthwiseConv3d::forward(const Tensor& x) {
  cached_in = x;
  const int N = x.dim(0), C = x.dim(1), Z = x.dim(2), Y = x.dim(3), X = x.dim(4);
  const int Zo = conv_out_dim(Z, stride), Yo = conv_out_dim(Y, stride),
            Xo = conv_out_dim(X, stride);
  Tensor out({N, C, Zo, Yo, Xo});
  const std::size_t in_spatial = static_cast<std::size_t>(Z) * Y * X;
  const std::size_t out_spatial = static_cast<std::size_t>(Zo) * Yo * Xo;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* ip = &x.v[(static_cast<std::size_t>(n) * C + c) * in_spatial];
      double* op = &out.v[(static_cast<std::size_t>(n) * C + c) * out_spatial];
      const double* wp = &w.v[static_cast<std::size_t>(c) * 27];
      for (int kz = 0; kz < 3; ++kz) {
        const int zo_lo = std::max(0, ceil_div(1 - kz, stride));
        const int zo_hi = std::min(Zo - 1, (Z - kz) / stride);
        for (int ky = 0; ky < 3; ++ky) {
          const int yo_lo = std::max(0, ceil_div(1 - ky, stride));
          const int yo_hi = std::min(Yo - 1, (Y - ky) / stride);
          for (int kx = 0; kx < 3; ++kx) {
            const double wv = wp[(kz * 3 + ky) * 3 + kx];
            const int xo_lo = std::max(0, ceil_div(1 - kx, stride));
            const int xo_hi = std::min(Xo - 1, (X - kx) / stride);
            for (int zo = zo_lo; zo <= zo_hi; ++zo) {
              const int zi = zo * stride + kz - 1;
              for (int yo = yo_lo; yo <= yo_hi; ++yo) {
                const int yi = yo * stride + ky - 1;
                const double* irow =
                    ip + (static_cast<std::size_t>(zi) * Y + yi) * X + kx - 1;
                double* orow = op + (static_cast<std::size_t>(zo) * Yo + yo) * Xo;
                for (int xo = xo_lo; xo <= xo_hi; ++xo)
                  orow[xo] += wv * irow[xo * stride];
              }
            }
          }
        }
      }
    }
  return out;
}

Tensor DepthwiseConv3d::backward(const Tensor& dy) {
  const Tensor& x = cached_in;
  const int N = x.dim(0), C = x.dim(1), Z = x.dim(2), Y = x.dim(3), X = x.dim(4);
  const int Zo = dy.dim(2), Yo = dy.dim(3), Xo = dy.dim(4);
  Tensor dx(x.shape);
  const std::size_t in_spatial = static_cast<std::size_t>(Z) * Y * X;
  const std::size_t out_spatial = static_cast<std::size_t>(Zo) * Yo * Xo;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* ip = &x.v[(static_cast<std::size_t>(n) * C + c) * in_spatial];
      double* dxp = &dx.v[(static_cast<std::size_t>(n) * C + c) * in_spatial];
      const double* dp = &dy.v[(static_cast<std::size_t>(n) * C + c) * out_spatial];
      const std::size_t wbase = static_cast<std::size_t>(c) * 27;
      for (int kz = 0; kz < 3; ++kz) {
        const int zo_lo = std::max(0, ceil_div(1 - kz, stride));
        const int zo_hi = std::min(Zo - 1, (Z - kz) / stride);
        for (int ky = 0; ky < 3; ++ky) {
          const int yo_lo = std::max(0, ceil_div(1 - ky, stride));
          const int yo_hi = std::min(Yo - 1, (Y - ky) / stride);
          for (int kx = 0; kx < 3; ++kx) {
            const double wv = w.v[wbase + (kz * 3 + ky) * 3 + kx];
            double acc = 0;
            const int xo_lo = std::max(0, ceil_div(1 - kx, stride));
            const int xo_hi = std::min(Xo - 1, (X - kx) / stride);
            for (int zo = zo_lo; zo <= zo_hi; ++zo) {
              const int zi = zo * stride + kz - 1;
              for (int yo = yo_lo; yo <= yo_hi; ++yo) {
                const int yi = yo * stride + ky - 1;
                const double* irow =
                    ip + (static_cast<std::size_t>(zi) * Y + yi) * X + kx - 1;
                double* dxrow =
                    dxp + (static_cast<std::size_t>(zi) * Y + yi) * X + kx - 1;
                const double* drow = dp + (static_cast<std::size_t>(zo) * Yo + yo) * Xo;
                for (int xo = xo_lo; xo <= xo_hi; ++xo) {
                  const double g = drow[xo];
                  acc += g * irow[xo * stride];
                  dxrow[xo * stride] += wv * g;
                }
              }
            }
            gw.v[wbase + (kz * 3 + ky) * 3 + kx] += acc;
          }
        }
      }
    }
  return dx;
}

// --- BatchNorm ---------------------------------------------------------------

void BatchNorm::init(int c) {
  channels = c;
  gamma = Tensor({c});
  beta = Tensor({c});
  ggamma = Tensor({c});
  gbeta = Tensor({c});
  running_mean = Tensor({c});
  running_var = Tensor({c});
  std::fill(gamma.v.begin(), gamma.v.end(), 1.0);
  std::fill(running_var.v.begin(), running_var.v.end(), 1.0);
}

Tensor BatchNorm::forward(const Tensor& x, RunMode mode, bool update_running) {
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t V = x.size() / (static_cast<std::size_t>(N) * C);
  Tensor out(x.shape);
  cached_mode = mode;
  if (mode == RunMode::Eval) {
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const double inv = 1.0 / std::sqrt(running_var.v[c] + eps);
        const double g = gamma.v[c] * inv;
        const double off = beta.v[c] - g * running_mean.v[c];
        const double* ip = &x.v[(static_cast<std::size_t>(n) * C + c) * V];
        double* op = &out.v[(static_cast<std::size_t>(n) * C + c) * V];
        for (std::size_t i = 0; i < V; ++i) op[i] = g * ip[i] + off;
      }
    return out;
  }

  const double M = static_cast<double>(N) * static_cast<double>(V);
  cached_xhat = Tensor(x.shape);
  cached_inv_sigma.assign(C, 0.0);
  for (int c = 0; c < C; ++c) {
    double sum = 0;
    for (int n = 0; n < N; ++n) {
      const double* ip = &x.v[(static_cast<std::size_t>(n) * C + c) * V];
      for (std::size_t i = 0; i < V; ++i) sum += ip[i];
    }
    const double mu = sum / M;
    double ss = 0;
    for (int n = 0; n < N; ++n) {
      const double* ip = &x.v[(static_cast<std::size_t>(n) * C + c) * V];
      for (std::size_t i = 0; i < V; ++i) ss += (ip[i] - mu) * (ip[i] - mu);
    }
    const double var = ss / M;  // biased, used for normalization
    const double inv = 1.0 / std::sqrt(var + eps);
    cached_inv_sigma[c] = inv;
    for (int n = 0; n < N; ++n) {
      const double* ip = &x.v[(static_cast<std::size_t>(n) * C + c) * V];
      double* xp = &cached_xhat.v[(static_cast<std::size_t>(n) * C + c) * V];
      double* op = &out.v[(static_cast<std::size_t>(n) * C + c) * V];
      for (std::size_t i = 0; i < V; ++i) {
        xp[i] = (ip[i] - mu) * inv;
        op[i] = gamma.v[c] * xp[i] + beta.v[c];
      }
    }
    if (update_running) {
      const double var_unbiased = M > 1.5 ? ss / (M - 1.0) : var;
      running_mean.v[c] = (1.0 - momentum) * running_mean.v[c] + momentum * mu;
      running_var.v[c] = (1.0 - momentum) * running_var.v[c] + momentum * var_unbiased;
    }
  }
  return out;
}

Tensor BatchNorm::backward(const Tensor& dy) {
  if (cached_mode != RunMode::Train)
    throw Error(ErrorCode::Internal, "BatchNorm backward without a train forward");
  const int N = dy.dim(0), C = dy.dim(1);
  const std::size_t V = dy.size() / (static_cast<std::size_t>(N) * C);
  const double M = static_cast<double>(N) * static_cast<double>(V);
  Tensor dx(dy.shape);
  for (int c = 0; c < C; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < N; ++n) {
      const double* dp = &dy.v[(static_cast<std::size_t>(n) * C + c) * V];
      const double* xp = &cached_xhat.v[(static_cast<std::size_t>(n) * C + c) * V];
      for (std::size_t i = 0; i < V; ++i) {
        sum_dy += dp[i];
        sum_dy_xhat += dp[i] * xp[i];
      }
    }
    ggamma.v[c] += sum_dy_xhat;
    gbeta.v[c] += sum_dy;
    const double k = gamma.v[c] * cached_inv_sigma[c];
    const double mean_dy = sum_dy / M;
    const double mean_dy_xhat = sum_dy_xhat / M;
    for (int n = 0; n < N; ++n) {
      const double* dp = &dy.v[(static_cast<std::size_t>(n) * C + c) * V];
      const double* xp = &cached_xhat.v[(static_cast<std::size_t>(n) * C + c) * V];
      double* dxp = &dx.v[(static_cast<std::size_t>(n) * C + c) * V];
      for (std::size_t i = 0; i < V; ++i)
        dxp[i] = k * (dp[i] - mean_dy - xp[i] * mean_dy_xhat);
    }
  }
  return dx;
}

// --- SiLU ---------------------------------------------------------------------

Tensor SiLU::forward(const Tensor& x) {
  cached_in = x;
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.v[i] = silu_val(x.v[i]);
  return out;
}

Tensor SiLU::backward(const Tensor& dy) {
  Tensor dx(dy.shape);
  for (std::size_t i = 0; i < dy.size(); ++i)
    dx.v[i] = dy.v[i] * silu_grad(cached_in.v[i]);
  return dx;
}

// --- SEBlock -------------------------------------------------------------------

void SEBlock::init(int c, int r, std::uint64_t seed) {
  channels = c;
  reduced = r;
  w1 = Tensor({r, c});
  b1 = Tensor({r});
  w2 = Tensor({c, r});
  b2 = Tensor({c});
  gw1 = Tensor(w1.shape);
  gb1 = Tensor(b1.shape);
  gw2 = Tensor(w2.shape);
  gb2 = Tensor(b2.shape);
  fill_normal(w1, std::sqrt(2.0 / c), splitmix64(seed));
  fill_normal(w2, std::sqrt(2.0 / r), splitmix64(seed ^ 0x5851f42d4c957f2dULL));
}

Tensor SEBlock::forward(const Tensor& x) {
  cached_in = x;
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t V = x.size() / (static_cast<std::size_t>(N) * C);
  cached_s = Tensor({N, C});
  cached_z1 = Tensor({N, reduced});
  cached_h = Tensor({N, reduced});
  cached_g = Tensor({N, C});
  Tensor out(x.shape);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* ip = &x.v[(static_cast<std::size_t>(n) * C + c) * V];
      double acc = 0;
      for (std::size_t i = 0; i < V; ++i) acc += ip[i];
      cached_s.v[static_cast<std::size_t>(n) * C + c] = acc / static_cast<double>(V);
    }
    for (int r = 0; r < reduced; ++r) {
      double z = b1.v[r];
      for (int c = 0; c < C; ++c)
        z += w1.v[static_cast<std::size_t>(r) * C + c] *
             cached_s.v[static_cast<std::size_t>(n) * C + c];
      cached_z1.v[static_cast<std::size_t>(n) * reduced + r] = z;
      cached_h.v[static_cast<std::size_t>(n) * reduced + r] = silu_val(z);
    }
    for (int c = 0; c < C; ++c) {
      double z = b2.v[c];
      for (int r = 0; r < reduced; ++r)
        z += w2.v[static_cast<std::size_t>(c) * reduced + r] *
             cached_h.v[static_cast<std::size_t>(n) * reduced + r];
      const double g = sigmoid(z);
      cached_g.v[static_cast<std::size_t>(n) * C + c] = g;
      const double* ip = &x.v[(static_cast<std::size_t>(n) * C + c) * V];
      double* op = &out.v[(static_cast<std::size_t>(n) * C + c) * V];
      for (std::size_t i = 0; i < V; ++i) op[i] = g * ip[i];
    }
  }
  return out;
}

Tensor SEBlock::backward(const Tensor& dy) {
  const Tensor& x = cached_in;
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t V = x.size() / (static_cast<std::size_t>(N) * C);
  Tensor dx(x.shape);
  for (int n = 0; n < N; ++n) {
    // gate path
    std::vector<double> dg(C, 0.0);
    for (int c = 0; c < C; ++c) {
      const double* ip = &x.v[(static_cast<std::size_t>(n) * C + c) * V];
      const double* dp = &dy.v[(static_cast<std::size_t>(n) * C + c) * V];
      double* dxp = &dx.v[(static_cast<std::size_t>(n) * C + c) * V];
      const double g = cached_g.v[static_cast<std::size_t>(n) * C + c];
      double acc = 0;
      for (std::size_t i = 0; i < V; ++i) {
        acc += ip[i] * dp[i];
        dxp[i] = g * dp[i];
      }
      dg[c] = acc;
    }
    std::vector<double> dz2(C);
    for (int c = 0; c < C; ++c) {
      const double g = cached_g.v[static_cast<std::size_t>(n) * C + c];
      dz2[c] = dg[c] * g * (1.0 - g);
      gb2.v[c] += dz2[c];
    }
    std::vector<double> dh(reduced, 0.0);
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < reduced; ++r) {
        gw2.v[static_cast<std::size_t>(c) * reduced + r] +=
            dz2[c] * cached_h.v[static_cast<std::size_t>(n) * reduced + r];
        dh[r] += w2.v[static_cast<std::size_t>(c) * reduced + r] * dz2[c];
      }
    std::vector<double> dz1(reduced);
    for (int r = 0; r < reduced; ++r) {
      dz1[r] = dh[r] * silu_grad(cached_z1.v[static_cast<std::size_t>(n) * reduced + r]);
      gb1.v[r] += dz1[r];
    }
    std::vector<double> ds(C, 0.0);
    for (int r = 0; r < reduced; ++r)
      for (int c = 0; c < C; ++c) {
        gw1.v[static_cast<std::size_t>(r) * C + c] +=
            dz1[r] * cached_s.v[static_cast<std::size_t>(n) * C + c];
        ds[c] += w1.v[static_cast<std::size_t>(r) * C + c] * dz1[r];
      }
    // squeeze path back into the spatial grid
    for (int c = 0; c < C; ++c) {
      const double add = ds[c] / static_cast<double>(V);
      double* dxp = &dx.v[(static_cast<std::size_t>(n) * C + c) * V];
      for (std::size_t i = 0; i < V; ++i) dxp[i] += add;
    }
  }
  return dx;
}

// --- GlobalAvgPool / Dense -----------------------------------------------------

Tensor GlobalAvgPool::forward(const Tensor& x) {
  cached_shape = x.shape;
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t V = x.size() / (static_cast<std::size_t>(N) * C);
  Tensor out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* ip = &x.v[(static_cast<std::size_t>(n) * C + c) * V];
      double acc = 0;
      for (std::size_t i = 0; i < V; ++i) acc += ip[i];
      out.v[static_cast<std::size_t>(n) * C + c] = acc / static_cast<double>(V);
    }
  return out;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  Tensor dx(cached_shape);
  const int N = cached_shape[0], C = cached_shape[1];
  const std::size_t V = dx.size() / (static_cast<std::size_t>(N) * C);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double g = dy.v[static_cast<std::size_t>(n) * C + c] / static_cast<double>(V);
      double* dxp = &dx.v[(static_cast<std::size_t>(n) * C + c) * V];
      for (std::size_t i = 0; i < V; ++i) dxp[i] = g;
    }
  return dx;
}

void Dense::init(int f, std::uint64_t seed) {
  features = f;
  w = Tensor({f});
  b = Tensor({1});
  gw = Tensor({f});
  gb = Tensor({1});
  fill_normal(w, std::sqrt(1.0 / f), seed);
}

std::vector<double> Dense::forward(const Tensor& x) {
  cached_in = x;
  const int N = x.dim(0);
  std::vector<double> out(N, b.v[0]);
  for (int n = 0; n < N; ++n) {
    const double* ip = &x.v[static_cast<std::size_t>(n) * features];
    for (int f = 0; f < features; ++f) out[n] += w.v[f] * ip[f];
  }
  return out;
}

Tensor Dense::backward(const std::vector<double>& dlogit) {
  const int N = cached_in.dim(0);
  Tensor dx(cached_in.shape);
  for (int n = 0; n < N; ++n) {
    const double g = dlogit[n];
    gb.v[0] += g;
    const double* ip = &cached_in.v[static_cast<std::size_t>(n) * features];
    double* dxp = &dx.v[static_cast<std::size_t>(n) * features];
    for (int f = 0; f < features; ++f) {
      gw.v[f] += g * ip[f];
      dxp[f] = w.v[f] * g;
    }
  }
  return dx;
}

// --- MBConvBlock ------------------------------------------------------------

Tensor MBConvBlock::forward(const Tensor& x, RunMode mode, bool update_running) {
  Tensor t = x;
  if (has_expand) {
    t = expand.forward(t);
    t = bn_expand.forward(t, mode, update_running);
    t = act_expand.forward(t);
  }
  t = dw.forward(t);
  t = bn_dw.forward(t, mode, update_running);
  t = act_dw.forward(t);
  t = se.forward(t);
  t = project.forward(t);
  t = bn_project.forward(t, mode, update_running);
  if (residual) {
    for (std::size_t i = 0; i < t.size(); ++i) t.v[i] += x.v[i];
  }
  return t;
}

Tensor MBConvBlock::backward(const Tensor& dy) {
  Tensor d = bn_project.backward(dy);
  d = project.backward(d);
  d = se.backward(d);
  d = act_dw.backward(d);
  d = bn_dw.backward(d);
  d = dw.backward(d);
  if (has_expand) {
    d = act_expand.backward(d);
    d = bn_expand.backward(d);
    d = expand.backward(d);
  }
  if (residual) {
    for (std::size_t i = 0; i < d.size(); ++i) d.v[i] += dy.v[i];
  }
  return d;
}

// --- Classifier ---------------------------------------------------------------

Classifier::Classifier(const NetworkConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg) {
  cfg_.validate();
  auto seed_for = [&](const std::string& tag) {
    return derive_seed(init_seed, "init/" + tag);
  };
  stem_.init(cfg.in_channels, cfg.stem_channels, cfg.stem_stride, seed_for("stem"));
  stem_bn_.init(cfg.stem_channels);

  int ch = cfg.stem_channels;
  int block_index = 0;
  for (const auto& spec : cfg.blocks) {
    for (int rep = 0; rep < spec.repeats; ++rep) {
      MBConvBlock b;
      const int in_ch = ch;
      const int mid = in_ch * spec.expansion;
      const int stride = rep == 0 ? spec.stride : 1;
      const std::string tag = "block" + std::to_string(block_index);
      b.has_expand = spec.expansion != 1;
      if (b.has_expand) {
        b.expand.init(in_ch, mid, seed_for(tag + "/expand"));
        b.bn_expand.init(mid);
      }
      b.dw.init(mid, stride, seed_for(tag + "/dw"));
      b.bn_dw.init(mid);
      const int reduced =
          std::max(1, static_cast<int>(std::lround(in_ch * spec.se_ratio)));
      b.se.init(mid, reduced, seed_for(tag + "/se"));
      b.project.init(mid, spec.channels, seed_for(tag + "/project"));
      b.bn_project.init(spec.channels);
      b.residual = stride == 1 && in_ch == spec.channels;
      blocks_.push_back(std::move(b));
      ch = spec.channels;
      ++block_index;
    }
  }
  head_.init(ch, cfg.head_channels, seed_for("head"));
  head_bn_.init(cfg.head_channels);
  fc_.init(cfg.head_channels, seed_for("fc"));
}

std::vector<double> Classifier::forward_logits(const Tensor& x, RunMode mode,
                                               bool update_running) {
  if (x.shape.size() != 5 || x.dim(1) != cfg_.in_channels ||
      x.dim(2) != cfg_.input_grid || x.dim(3) != cfg_.input_grid ||
      x.dim(4) != cfg_.input_grid)
    throw Error(ErrorCode::ShapeMismatch,
                "input must be [N," + std::to_string(cfg_.in_channels) + "," +
                    std::to_string(cfg_.input_grid) + "^3]");
  // every stride-2 stage must see even dims
  int g = cfg_.input_grid;
  auto take_stride = [&](int stride) {
    if (stride == 2) {
      if (g % 2 != 0)
        throw Error(ErrorCode::ShapeMismatch,
                    "spatial dims not divisible by the stride plan");
      g /= 2;
    }
  };
  take_stride(cfg_.stem_stride);
  for (const auto& spec : cfg_.blocks) take_stride(spec.stride);

  Tensor t = stem_.forward(x);
  t = stem_bn_.forward(t, mode, update_running);
  t = stem_act_.forward(t);
  for (auto& b : blocks_) t = b.forward(t, mode, update_running);
  t = head_.forward(t);
  t = head_bn_.forward(t, mode, update_running);
  t = head_act_.forward(t);
  t = gap_.forward(t);
  auto logits = fc_.forward(t);
  check_finite(logits, ErrorCode::NonFiniteActivation,
               "non-finite network activation");
  return logits;
}

std::vector<double> Classifier::probabilities(const Tensor& x, RunMode mode,
                                              bool update_running) {
  auto logits = forward_logits(x, mode, update_running);
  for (auto& z : logits) z = sigmoid(z);
  return logits;
}

double bce_with_logits(const std::vector<double>& logits,
                       const std::vector<int>& labels) {
  if (logits.size() != labels.size() || logits.empty())
    throw Error(ErrorCode::ShapeMismatch, "logits/labels length mismatch");
  double loss = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    // softplus(z) - y*z, stable on both tails
    const double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    loss += sp - static_cast<double>(labels[i]) * z;
  }
  loss /= static_cast<double>(logits.size());
  if (!std::isfinite(loss))
    throw Error(ErrorCode::NonFiniteLoss, "loss diverged");
  return loss;
}

double Classifier::loss(const Tensor& x, const std::vector<int>& labels,
                        RunMode mode, bool update_running) {
  return bce_with_logits(forward_logits(x, mode, update_running), labels);
}

double Classifier::loss_and_backward(const Tensor& x,
                                     const std::vector<int>& labels,
                                     bool update_running) {
  const auto logits = forward_logits(x, RunMode::Train, update_running);
  const double loss = bce_with_logits(logits, labels);
  const double n = static_cast<double>(logits.size());
  std::vector<double> dlogit(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    dlogit[i] = (sigmoid(logits[i]) - static_cast<double>(labels[i])) / n;

  Tensor d = fc_.backward(dlogit);
  d = gap_.backward(d);
  d = head_act_.backward(d);
  d = head_bn_.backward(d);
  d = head_.backward(d);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it)
    d = it->backward(d);
  d = stem_act_.backward(d);
  d = stem_bn_.backward(d);
  stem_.backward(d);

  for (const auto& p : trainable_params())
    check_finite(p.grad->v, ErrorCode::NonFiniteGradient,
                 "non-finite gradient");
  return loss;
}

std::vector<ParamRef> Classifier::trainable_params() {
  std::vector<ParamRef> out;
  auto add = [&](const std::string& name, Tensor& value, Tensor& grad) {
    out.push_back({name, &value, &grad});
  };
  add("stem.w", stem_.w, stem_.gw);
  add("stem.bn.gamma", stem_bn_.gamma, stem_bn_.ggamma);
  add("stem.bn.beta", stem_bn_.beta, stem_bn_.gbeta);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    if (b.has_expand) {
      add(p + "expand.w", b.expand.w, b.expand.gw);
      add(p + "bn_expand.gamma", b.bn_expand.gamma, b.bn_expand.ggamma);
      add(p + "bn_expand.beta", b.bn_expand.beta, b.bn_expand.gbeta);
    }
    add(p + "dw.w", b.dw.w, b.dw.gw);
    add(p + "bn_dw.gamma", b.bn_dw.gamma, b.bn_dw.ggamma);
    add(p + "bn_dw.beta", b.bn_dw.beta, b.bn_dw.gbeta);
    add(p + "se.w1", b.se.w1, b.se.gw1);
    add(p + "se.b1", b.se.b1, b.se.gb1);
    add(p + "se.w2", b.se.w2, b.se.gw2);
    add(p + "se.b2", b.se.b2, b.se.gb2);
    add(p + "project.w", b.project.w, b.project.gw);
    add(p + "bn_project.gamma", b.bn_project.gamma, b.bn_project.ggamma);
    add(p + "bn_project.beta", b.bn_project.beta, b.bn_project.gbeta);
  }
  add("head.w", head_.w, head_.gw);
  add("head.bn.gamma", head_bn_.gamma, head_bn_.ggamma);
  add("head.bn.beta", head_bn_.beta, head_bn_.gbeta);
  add("fc.w", fc_.w, fc_.gw);
  add("fc.b", fc_.b, fc_.gb);
  return out;
}

std::vector<ParamRef> Classifier::named_tensors() {
  auto out = trainable_params();
  auto add_state = [&](const std::string& name, Tensor& value) {
    out.push_back({name, &value, nullptr});
  };
  add_state("stem.bn.running_mean", stem_bn_.running_mean);
  add_state("stem.bn.running_var", stem_bn_.running_var);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    if (b.has_expand) {
      add_state(p + "bn_expand.running_mean", b.bn_expand.running_mean);
      add_state(p + "bn_expand.running_var", b.bn_expand.running_var);
    }
    add_state(p + "bn_dw.running_mean", b.bn_dw.running_mean);
    add_state(p + "bn_dw.running_var", b.bn_dw.running_var);
    add_state(p + "bn_project.running_mean", b.bn_project.running_mean);
    add_state(p + "bn_project.running_var", b.bn_project.running_var);
  }
  add_state("head.bn.running_mean", head_bn_.running_mean);
  add_state("head.bn.running_var", head_bn_.running_var);
  return out;
}

void Classifier::zero_grads() {
  for (auto& p : trainable_params()) p.grad->zero();
}

std::size_t Classifier::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : trainable_params()) n += p.value->size();
  return n;
}

// --- Adam ----------------------------------------------------------------------

void AdamState::init(const std::vector<ParamRef>& params) {
  step = 0;
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.emplace_back(p.value->size(), 0.0);
    v.emplace_back(p.value->size(), 0.0);
  }
}

void adam_step(const std::vector<ParamRef>& params, AdamState& state, double lr,
               const AdamConfig& cfg) {
  if (state.m.size() != params.size())
    throw Error(ErrorCode::Internal, "Adam state size mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& value = params[p].value->v;
    const auto& grad = params[p].grad->v;
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// --- checkpoints -----------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'N', 'Q', 'C', 'H', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + 4 > in.size())
    throw Error(ErrorCode::TruncatedData, "checkpoint ended early");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace

std::vector<std::uint8_t> save_checkpoint(Classifier& model) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u32(out, kVersion);
  const std::string cfg = model.config().canonical_json();
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());
  const auto tensors = model.named_tensors();
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u32(out, static_cast<std::uint32_t>(t.value->shape.size()));
    for (int d : t.value->shape) put_u32(out, static_cast<std::uint32_t>(d));
    const std::size_t bytes = t.value->v.size() * sizeof(double);
    const std::size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, t.value->v.data(), bytes);
  }
  return out;
}

Classifier load_checkpoint(const std::vector<std::uint8_t>& bytes,
                           const NetworkConfig* expected) {
  std::size_t pos = 0;
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw Error(ErrorCode::BadMagic, "not a checkpoint file");
  pos = 8;
  const std::uint32_t version = get_u32(bytes, pos);
  if (version != kVersion)
    throw Error(ErrorCode::VersionMismatch,
                "checkpoint version " + std::to_string(version));
  const std::uint32_t cfg_len = get_u32(bytes, pos);
  if (pos + cfg_len > bytes.size())
    throw Error(ErrorCode::TruncatedData, "checkpoint ended early");
  const std::string cfg_text(bytes.begin() + pos, bytes.begin() + pos + cfg_len);
  pos += cfg_len;
  const NetworkConfig cfg = NetworkConfig::from_json_text(cfg_text);
  if (expected && !(cfg == *expected))
    throw Error(ErrorCode::ConfigMismatch,
                "checkpoint was trained with a different network config");

  Classifier model(cfg, 0);
  auto tensors = model.named_tensors();
  const std::uint32_t count = get_u32(bytes, pos);
  if (count != tensors.size())
    throw Error(ErrorCode::ConfigMismatch, "checkpoint tensor count mismatch");
  for (auto& t : tensors) {
    const std::uint32_t name_len = get_u32(bytes, pos);
    if (pos + name_len > bytes.size())
      throw Error(ErrorCode::TruncatedData, "checkpoint ended early");
    const std::string name(bytes.begin() + pos, bytes.begin() + pos + name_len);
    pos += name_len;
    if (name != t.name)
      throw Error(ErrorCode::ConfigMismatch,
                  "unexpected tensor '" + name + "' (wanted '" + t.name + "')");
    const std::uint32_t rank = get_u32(bytes, pos);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32(bytes, pos));
    if (shape != t.value->shape)
      throw Error(ErrorCode::ConfigMismatch, "tensor shape mismatch for " + name);
    const std::size_t nbytes = t.value->v.size() * sizeof(double);
    if (pos + nbytes > bytes.size())
      throw Error(ErrorCode::TruncatedData, "checkpoint ended early");
    std::memcpy(t.value->v.data(), bytes.data() + pos, nbytes);
    pos += nbytes;
  }
  return model;
}

}  // namespace nq
