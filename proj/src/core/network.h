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

#ifndef NEUROQUANT_CORE_NETWORK_H
#define NEUROQUANT_CORE_NETWORK_H

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "core/tensor.h"

namespace nq {

// Inverted-bottleneck 3D classifier: a stem convolution followed by MBConv
// blocks (expand 1x1x1 -> BN -> SiLU -> depthwise 3x3x3 -> BN -> SiLU ->
// squeeze-excitation -> project 1x1x1 -> BN, residual when stride 1 and
// channels match), then a 1x1x1 head, global average pooling, and a single
// dense logit through a sigmoid. Everything runs in double precision with
// analytic backpropagation.

struct BlockSpec {
  int expansion = 2;     // channel multiplier inside the block
  int channels = 8;      // block output channels
  int stride = 1;        // applied by the depthwise conv, 1 or 2
  int repeats = 1;       // stride applies to the first repeat only
  double se_ratio = 0.25;  // reduced width = max(1, round(in_ch * se_ratio))
};

struct NetworkConfig {
  int in_channels = 1;
  int stem_channels = 8;
  int stem_stride = 2;
  std::vector<BlockSpec> blocks;
  int head_channels = 32;
  int input_grid = 32;  // cubic spatial input size
  std::string preset = "custom";

  void validate() const;
  std::string canonical_json() const;
  static NetworkConfig from_json_text(const std::string& text);
  // named presets: "tiny", "small", "b3ish"
  static NetworkConfig make_preset(const std::string& name, int in_channels);
  bool operator==(const NetworkConfig& o) const {
    return canonical_json() == o.canonical_json();
  }
};

enum class RunMode { Train, Eval };

// --- layers ----------------------------------------------------------------

struct Conv3d {  // full 3x3x3 convolution, padding 1, no bias
  int in_ch = 0, out_ch = 0, stride = 1;
  Tensor w, gw;  // [out, in, 3,3,3]
  Tensor cached_in;
  void init(int in_c, int out_c, int s, std::uint64_t seed);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
};

struct PointwiseConv {  // 1x1x1 convolution, no bias
  int in_ch = 0, out_ch = 0;
  Tensor w, gw;  // [out, in]
  Tensor cached_in;
  void init(int in_c, int out_c, std::uint64_t seed);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
};

struct DepthwiseConv3d {  // per-channel 3x3x3, padding 1, no bias
  int channels = 0, stride = 1;
  Tensor w, gw;  // [c, 3,3,3]
  Tensor cached_in;
  void init(int c, int s, std::uint64_t seed);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
};

struct BatchNorm {
  int channels = 0;
  double momentum = 0.1;
  double eps = 1e-5;
  Tensor gamma, beta, ggamma, gbeta;
  Tensor running_mean, running_var;
  // caches for backward (train mode only)
  Tensor cached_xhat;
  std::vector<double> cached_inv_sigma;
  RunMode cached_mode = RunMode::Eval;
  void init(int c);
  Tensor forward(const Tensor& x, RunMode mode, bool update_running);
  Tensor backward(const Tensor& dy);
};

struct SiLU {
  Tensor cached_in;
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
};

struct SEBlock {  // squeeze-excitation channel gate
  int channels = 0, reduced = 0;
  Tensor w1, b1, w2, b2, gw1, gb1, gw2, gb2;
  Tensor cached_in, cached_s, cached_z1, cached_h, cached_g;
  void init(int c, int r, std::uint64_t seed);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
};

struct GlobalAvgPool {
  std::vector<int> cached_shape;
  Tensor forward(const Tensor& x);   // [N,C,Z,Y,X] -> [N,C]
  Tensor backward(const Tensor& dy);
};

struct Dense {  // [N,F] -> [N] logits
  int features = 0;
  Tensor w, b, gw, gb;
  Tensor cached_in;
  void init(int f, std::uint64_t seed);
  std::vector<double> forward(const Tensor& x);
  Tensor backward(const std::vector<double>& dlogit);
};

struct MBConvBlock {
  bool has_expand = false;
  bool residual = false;
  PointwiseConv expand;
  BatchNorm bn_expand;
  SiLU act_expand;
  DepthwiseConv3d dw;
  BatchNorm bn_dw;
  SiLU act_dw;
  SEBlock se;
  PointwiseConv project;
  BatchNorm bn_project;
  Tensor forward(const Tensor& x, RunMode mode, bool update_running);
  Tensor backward(const Tensor& dy);
};

// --- the classifier ---------------------------------------------------------

class Classifier {
public:
  Classifier() = default;
  Classifier(const NetworkConfig& cfg, std::uint64_t init_seed);

  const NetworkConfig& config() const { return cfg_; }

  // logits per batch item; validates shape and finiteness
  std::vector<double> forward_logits(const Tensor& x, RunMode mode,
                                     bool update_running = true);
  std::vector<double> probabilities(const Tensor& x, RunMode mode,
                                    bool update_running = true);

  // mean binary cross entropy in the stable logit form (no backward)
  double loss(const Tensor& x, const std::vector<int>& labels, RunMode mode,
              bool update_running = false);
  // forward (train mode), loss, and full backward pass into the grads
  double loss_and_backward(const Tensor& x, const std::vector<int>& labels,
                           bool update_running = true);

  std::vector<ParamRef> trainable_params();
  std::vector<ParamRef> named_tensors();  // params + running stats
  void zero_grads();
  std::size_t parameter_count();

private:
  NetworkConfig cfg_;
  Conv3d stem_;
  BatchNorm stem_bn_;
  SiLU stem_act_;
  std::vector<MBConvBlock> blocks_;
  PointwiseConv head_;
  BatchNorm head_bn_;
  SiLU head_act_;
  GlobalAvgPool gap_;
  Dense fc_;
};

// --- loss, optimizer, schedule ----------------------------------------------

double sigmoid(double z);
// numerically stable mean BCE given logits
double bce_with_logits(const std::vector<double>& logits,
                       const std::vector<int>& labels);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  long step = 0;
  std::vector<std::vector<double>> m, v;
  void init(const std::vector<ParamRef>& params);
};

// one bias-corrected update; params' grads are consumed as-is
void adam_step(const std::vector<ParamRef>& params, AdamState& state, double lr,
               const AdamConfig& cfg = {});

// --- checkpoints -------------------------------------------------------------

// Versioned binary container: magic, format version, config echo (JSON),
// named float64 little-endian tensors. load verifies magic/version and, when
// expected is non-null, the configuration echo.
std::vector<std::uint8_t> save_checkpoint(Classifier& model);
Classifier load_checkpoint(const std::vector<std::uint8_t>& bytes,
                           const NetworkConfig* expected = nullptr);

}  // namespace nq

#endif
