#include <doctest.h>

#include <cmath>
#include <random>

#include "core/error.h"
#include "core/network.h"
#include "core/metrics.h"
#include "core/rng.h"
#include "core/train.h"

using namespace nq;

namespace {

// Central finite differences with h = 1e-3 against the analytic gradient.
// Relative error uses max(|analytic|, |numeric|, 1) in the denominator so
// near-zero gradients are judged on an absolute scale.
constexpr double kFdStep = 1e-3;
constexpr double kFdTol = 1e-4;

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1.0});
}

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed,
                     double scale = 1.0) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  for (auto& x : t.v) x = g(rng);
  return t;
}

// loss = sum_i c_i * out_i for a fixed random projection c
struct LinearLoss {
  std::vector<double> c;
  explicit LinearLoss(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    c.resize(n);
    for (auto& x : c) x = g(rng);
  }
  double operator()(const Tensor& out) const {
    double l = 0;
    for (std::size_t i = 0; i < out.size(); ++i) l += c[i] * out.v[i];
    return l;
  }
  Tensor grad(const std::vector<int>& shape) const {
    Tensor d(shape);
    for (std::size_t i = 0; i < d.size(); ++i) d.v[i] = c[i];
    return d;
  }
};

// FD check for one layer: analytic dW and dX vs numeric differences of the
// projected output
template <typename Forward>
void check_param_gradient(Tensor& param, const Tensor& analytic_grad,
                          const Forward& forward_loss) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double saved = param.v[i];
    param.v[i] = saved + kFdStep;
    const double up = forward_loss();
    param.v[i] = saved - kFdStep;
    const double down = forward_loss();
    param.v[i] = saved;
    const double numeric = (up - down) / (2 * kFdStep);
    CHECK(rel_err(analytic_grad.v[i], numeric) < kFdTol);
  }
}

NetworkConfig tiny_test_config() {
  NetworkConfig cfg;
  cfg.in_channels = 2;
  cfg.stem_channels = 4;
  cfg.stem_stride = 2;
  // covers: expand block with stride, no-expand block with residual
  cfg.blocks = {{2, 4, 2, 1, 0.5}, {1, 4, 1, 1, 0.5}};
  cfg.head_channels = 6;
  cfg.input_grid = 8;
  cfg.preset = "test";
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("network");

TEST_CASE("gradient check: every layer type in isolation") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SUBCASE(("seed " + std::to_string(seed)).c_str()) {}
    // full 3x3x3 convolution, both strides
    for (int stride : {1, 2}) {
      Conv3d conv;
      conv.init(2, 3, stride, seed);
      Tensor x = random_tensor({2, 2, 4, 4, 4}, seed * 31);
      Tensor out = conv.forward(x);
      LinearLoss loss(out.size(), seed * 7);
      conv.gw.zero();
      const Tensor dx = conv.backward(loss.grad(out.shape));
      auto eval = [&]() { return loss(conv.forward(x)); };
      check_param_gradient(conv.w, conv.gw, eval);
      // input gradient
      for (std::size_t i = 0; i < x.size(); i += 7) {
        const double saved = x.v[i];
        x.v[i] = saved + kFdStep;
        const double up = eval();
        x.v[i] = saved - kFdStep;
        const double down = eval();
        x.v[i] = saved;
        CHECK(rel_err(dx.v[i], (up - down) / (2 * kFdStep)) < kFdTol);
      }
    }
    // pointwise
    {
      PointwiseConv pw;
      pw.init(3, 2, seed);
      Tensor x = random_tensor({2, 3, 3, 3, 3}, seed * 37);
      Tensor out = pw.forward(x);
      LinearLoss loss(out.size(), seed * 11);
      pw.gw.zero();
      const Tensor dx = pw.backward(loss.grad(out.shape));
      auto eval = [&]() { return loss(pw.forward(x)); };
      check_param_gradient(pw.w, pw.gw, eval);
      for (std::size_t i = 0; i < x.size(); i += 11) {
        const double saved = x.v[i];
        x.v[i] = saved + kFdStep;
        const double up = eval();
        x.v[i] = saved - kFdStep;
        const double down = eval();
        x.v[i] = saved;
        CHECK(rel_err(dx.v[i], (up - down) / (2 * kFdStep)) < kFdTol);
      }
    }
    // depthwise, both strides
    for (int stride : {1, 2}) {
      DepthwiseConv3d dw;
      dw.init(3, stride, seed);
      Tensor x = random_tensor({2, 3, 4, 4, 4}, seed * 41);
      Tensor out = dw.forward(x);
      LinearLoss loss(out.size(), seed * 13);
      dw.gw.zero();
      dw.backward(loss.grad(out.shape));
      auto eval = [&]() { return loss(dw.forward(x)); };
      check_param_gradient(dw.w, dw.gw, eval);
    }
    // batch norm (train mode, gradients flow through batch statistics)
    {
      BatchNorm bn;
      bn.init(3);
      std::mt19937_64 r(seed * 43);
      std::normal_distribution<double> g(0.5, 2.0);
      Tensor x({2, 3, 3, 3, 3});
      for (auto& v : x.v) v = g(r);
      // non-trivial gamma/beta
      bn.gamma.v = {1.3, 0.7, -0.5};
      bn.beta.v = {0.2, -0.1, 0.4};
      Tensor out = bn.forward(x, RunMode::Train, false);
      LinearLoss loss(out.size(), seed * 17);
      bn.ggamma.zero();
      bn.gbeta.zero();
      const Tensor dx = bn.backward(loss.grad(out.shape));
      auto eval = [&]() { return loss(bn.forward(x, RunMode::Train, false)); };
      check_param_gradient(bn.gamma, bn.ggamma, eval);
      check_param_gradient(bn.beta, bn.gbeta, eval);
      for (std::size_t i = 0; i < x.size(); i += 5) {
        const double saved = x.v[i];
        x.v[i] = saved + kFdStep;
        const double up = eval();
        x.v[i] = saved - kFdStep;
        const double down = eval();
        x.v[i] = saved;
        CHECK(rel_err(dx.v[i], (up - down) / (2 * kFdStep)) < kFdTol);
      }
    }
    // SiLU
    {
      SiLU act;
      Tensor x = random_tensor({2, 2, 2, 2, 2}, seed * 47, 2.0);
      Tensor out = act.forward(x);
      LinearLoss loss(out.size(), seed * 19);
      const Tensor dx = act.backward(loss.grad(out.shape));
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x.v[i];
        x.v[i] = saved + kFdStep;
        const double up = loss(act.forward(x));
        x.v[i] = saved - kFdStep;
        const double down = loss(act.forward(x));
        x.v[i] = saved;
        CHECK(rel_err(dx.v[i], (up - down) / (2 * kFdStep)) < kFdTol);
      }
    }
    // squeeze-excitation
    {
      SEBlock se;
      se.init(4, 2, seed);
      Tensor x = random_tensor({2, 4, 3, 3, 3}, seed * 53);
      Tensor out = se.forward(x);
      LinearLoss loss(out.size(), seed * 23);
      se.gw1.zero(); se.gb1.zero(); se.gw2.zero(); se.gb2.zero();
      const Tensor dx = se.backward(loss.grad(out.shape));
      auto eval = [&]() { return loss(se.forward(x)); };
      check_param_gradient(se.w1, se.gw1, eval);
      check_param_gradient(se.b1, se.gb1, eval);
      check_param_gradient(se.w2, se.gw2, eval);
      check_param_gradient(se.b2, se.gb2, eval);
      for (std::size_t i = 0; i < x.size(); i += 9) {
        const double saved = x.v[i];
        x.v[i] = saved + kFdStep;
        const double up = eval();
        x.v[i] = saved - kFdStep;
        const double down = eval();
        x.v[i] = saved;
        CHECK(rel_err(dx.v[i], (up - down) / (2 * kFdStep)) < kFdTol);
      }
    }
    // dense head through the BCE loss
    {
      Dense fc;
      fc.init(5, seed);
      Tensor x = random_tensor({3, 5}, seed * 59);
      const std::vector<int> labels = {1, 0, 1};
      auto eval = [&]() { return bce_with_logits(fc.forward(x), labels); };
      const auto logits = fc.forward(x);
      std::vector<double> dlogit(logits.size());
      for (std::size_t i = 0; i < logits.size(); ++i)
        dlogit[i] = (sigmoid(logits[i]) - labels[i]) / logits.size();
      fc.gw.zero();
      fc.gb.zero();
      fc.backward(dlogit);
      check_param_gradient(fc.w, fc.gw, eval);
      check_param_gradient(fc.b, fc.gb, eval);
    }
  }
}

TEST_CASE("gradient check: composed tiny network, every parameter") {
  const auto cfg = tiny_test_config();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Classifier net(cfg, seed);
    Tensor x = random_tensor({3, 2, 8, 8, 8}, seed * 67, 0.7);
    const std::vector<int> labels = {1, 0, 1};

    net.zero_grads();
    net.loss_and_backward(x, labels, /*update_running=*/false);

    for (auto& p : net.trainable_params()) {
      auto& value = p.value->v;
      const auto& grad = p.grad->v;
      // probe a deterministic subset of each tensor to keep runtime sane,
      // always including the first and last element
      const std::size_t stride = std::max<std::size_t>(1, value.size() / 9);
      for (std::size_t i = 0; i < value.size();
           i = (i + stride < value.size() || i == value.size() - 1)
                   ? i + stride
                   : value.size() - 1) {
        const double saved = value[i];
        value[i] = saved + kFdStep;
        const double up = net.loss(x, labels, RunMode::Train, false);
        value[i] = saved - kFdStep;
        const double down = net.loss(x, labels, RunMode::Train, false);
        value[i] = saved;
        const double numeric = (up - down) / (2 * kFdStep);
        CHECK_MESSAGE(rel_err(grad[i], numeric) < kFdTol,
                      p.name << "[" << i << "]: analytic " << grad[i]
                             << " vs numeric " << numeric);
        if (i == value.size() - 1) break;
      }
    }
  }
}

TEST_CASE("single linear unit: gradient equals (p - y) * x exactly") {
  Dense fc;
  fc.init(1, 3);
  fc.w.v[0] = 0.8;
  fc.b.v[0] = -0.2;
  Tensor x({1, 1});
  x.v[0] = 1.7;
  const std::vector<int> y = {1};
  const auto logits = fc.forward(x);
  const double p = sigmoid(logits[0]);
  fc.gw.zero();
  fc.gb.zero();
  fc.backward({p - 1.0});
  CHECK(fc.gw.v[0] == doctest::Approx((p - y[0]) * 1.7).epsilon(1e-12));
  CHECK(fc.gb.v[0] == doctest::Approx(p - y[0]).epsilon(1e-12));
}

TEST_CASE("forward contracts") {
  const auto cfg = tiny_test_config();
  Classifier net(cfg, 99);
  Tensor x = random_tensor({2, 2, 8, 8, 8}, 5);

  SUBCASE("zero final dense layer gives exactly 0.5") {
    for (auto& p : net.trainable_params())
      if (p.name == "fc.w" || p.name == "fc.b") p.value->zero();
    const auto probs = net.probabilities(x, RunMode::Eval);
    for (double v : probs) CHECK(v == 0.5);
  }

  SUBCASE("probabilities lie strictly inside (0,1)") {
    const auto probs = net.probabilities(x, RunMode::Train);
    for (double v : probs) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }

  SUBCASE("eval forward is bitwise deterministic") {
    const auto a = net.probabilities(x, RunMode::Eval);
    const auto b = net.probabilities(x, RunMode::Eval);
    CHECK(a == b);
  }

  SUBCASE("permuting the batch permutes outputs (eval)") {
    const auto probs = net.probabilities(x, RunMode::Eval);
    Tensor swapped(x.shape);
    const std::size_t item = x.size() / 2;
    std::copy(x.v.begin() + item, x.v.end(), swapped.v.begin());
    std::copy(x.v.begin(), x.v.begin() + item, swapped.v.begin() + item);
    const auto probs2 = net.probabilities(swapped, RunMode::Eval);
    CHECK(probs2[0] == probs[1]);
    CHECK(probs2[1] == probs[0]);
  }

  SUBCASE("channel ablation: zeroed channel-2 stem kernels = zeroed input") {
    Classifier ablated = net;
    for (auto& p : ablated.trainable_params()) {
      if (p.name == "stem.w") {
        // weight layout [out, in, 3,3,3]; zero the in=1 slice
        const int in_ch = 2;
        const std::size_t tap = 27;
        for (int co = 0; co < cfg.stem_channels; ++co)
          for (std::size_t k = 0; k < tap; ++k)
            p.value->v[(static_cast<std::size_t>(co) * in_ch + 1) * tap + k] = 0.0;
      }
    }
    Tensor x_zero_ch2 = x;
    const std::size_t vox = 8 * 8 * 8;
    for (int n = 0; n < 2; ++n)
      std::fill_n(x_zero_ch2.v.begin() + (static_cast<std::size_t>(n) * 2 + 1) * vox,
                  vox, 0.0);
    const auto a = ablated.probabilities(x, RunMode::Eval);
    const auto b = ablated.probabilities(x_zero_ch2, RunMode::Eval);
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }

  SUBCASE("shape violations raise") {
    Tensor bad({2, 1, 8, 8, 8});
    CHECK_THROWS_AS(net.probabilities(bad, RunMode::Eval), Error);
  }
}

TEST_CASE("SE gate forced open matches a block without SE") {
  const auto cfg = tiny_test_config();
  Classifier net(cfg, 7);
  // drive the gate's bias so sigmoid saturates to 1 in every block
  for (auto& p : net.trainable_params()) {
    if (p.name.find("se.w1") != std::string::npos ||
        p.name.find("se.w2") != std::string::npos)
      p.value->zero();
    if (p.name.find("se.b2") != std::string::npos)
      std::fill(p.value->v.begin(), p.value->v.end(), 40.0);
  }
  Tensor x = random_tensor({2, 2, 8, 8, 8}, 13);
  const auto gated = net.probabilities(x, RunMode::Eval);

  // reference: the same forward with the gate replaced by identity is what
  // a saturated sigmoid converges to; drive the bias even higher and check
  // the output is unchanged to 1e-6
  for (auto& p : net.trainable_params())
    if (p.name.find("se.b2") != std::string::npos)
      std::fill(p.value->v.begin(), p.value->v.end(), 400.0);
  const auto gated_more = net.probabilities(x, RunMode::Eval);
  for (std::size_t i = 0; i < gated.size(); ++i)
    CHECK(gated[i] == doctest::Approx(gated_more[i]).epsilon(1e-6));
}

TEST_CASE("perfect predictions give ~zero loss") {
  CHECK(bce_with_logits({20.0, -20.0}, {1, 0}) < 1e-8);
}

TEST_CASE("batch norm: train-mode output is standardized per channel") {
  BatchNorm bn;
  bn.init(4);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(2.5, 3.0);
  Tensor x({4, 4, 4, 4, 4});
  for (auto& v : x.v) v = g(rng);
  const Tensor out = bn.forward(x, RunMode::Train, true);
  const int N = 4, C = 4;
  const std::size_t V = out.size() / (N * C);
  for (int c = 0; c < C; ++c) {
    double mean = 0, var = 0;
    for (int n = 0; n < N; ++n) {
      const double* p = &out.v[(static_cast<std::size_t>(n) * C + c) * V];
      for (std::size_t i = 0; i < V; ++i) mean += p[i];
    }
    mean /= N * V;
    for (int n = 0; n < N; ++n) {
      const double* p = &out.v[(static_cast<std::size_t>(n) * C + c) * V];
      for (std::size_t i = 0; i < V; ++i) var += (p[i] - mean) * (p[i] - mean);
    }
    var /= N * V;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("adam optimizer") {
  SUBCASE("first step moves by ~ -lr * sign(g)") {
    Tensor theta({3});
    theta.v = {1.0, -2.0, 0.5};
    Tensor grad({3});
    grad.v = {0.3, -4.0, 0.05};  // well above eps so the ratio g/(|g|+eps) ~ 1
    std::vector<ParamRef> params = {{"theta", &theta, &grad}};
    AdamState st;
    st.init(params);
    const auto before = theta.v;
    adam_step(params, st, 0.1);
    for (int i = 0; i < 3; ++i) {
      const double delta = theta.v[i] - before[i];
      const double expect = -0.1 * (grad.v[i] > 0 ? 1.0 : -1.0);
      CHECK(std::abs(delta - expect) < 0.1 * 1e-6 + 1e-12);
    }
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor theta({2});
    theta.v = {1.0, -1.0};
    Tensor grad({2});
    std::vector<ParamRef> params = {{"theta", &theta, &grad}};
    AdamState st;
    st.init(params);
    adam_step(params, st, 0.1);
    CHECK(theta.v == std::vector<double>{1.0, -1.0});
  }
  SUBCASE("200 steps on theta^2 reach |theta| < 1e-2") {
    Tensor theta({1});
    theta.v = {1.0};
    Tensor grad({1});
    std::vector<ParamRef> params = {{"theta", &theta, &grad}};
    AdamState st;
    st.init(params);
    for (int i = 0; i < 200; ++i) {
      grad.v[0] = 2.0 * theta.v[0];
      adam_step(params, st, 0.1);
    }
    CHECK(std::abs(theta.v[0]) < 1e-2);
  }
}

TEST_CASE("learning rate schedule") {
  TrainingConfig cfg;
  cfg.epochs = 500;
  cfg.warmup_epochs = 20;
  cfg.lr_max = 0.0005;
  CHECK(lr_at_epoch(cfg, 0) == 0.0);
  CHECK(lr_at_epoch(cfg, 20) == doctest::Approx(0.0005).epsilon(1e-12));
  CHECK(lr_at_epoch(cfg, 10) == doctest::Approx(0.00025).epsilon(1e-12));
  CHECK(lr_at_epoch(cfg, 499) <= 0.0005 * 0.01);
  CHECK(lr_at_epoch(cfg, 499) > 0.0);
  // continuity at the boundary: both branch formulas meet at lr_max
  const double left = cfg.lr_max * 20.0 / 20.0;
  const double right = cfg.lr_max * (1.0 + std::cos(0.0)) / 2.0;
  CHECK(left == right);
  CHECK_THROWS_AS(lr_at_epoch(cfg, 500), Error);

  SUBCASE("monotone decay after warmup") {
    for (int e = 21; e < 500; ++e)
      CHECK(lr_at_epoch(cfg, e) < lr_at_epoch(cfg, e - 1));
  }
}

TEST_CASE("checkpoint roundtrip and mismatches") {
  const auto cfg = tiny_test_config();
  Classifier net(cfg, 21);
  // dirty the running stats so state tensors are non-trivial
  Tensor x = random_tensor({2, 2, 8, 8, 8}, 77);
  net.loss(x, {1, 0}, RunMode::Train, true);

  const auto bytes = save_checkpoint(net);
  Classifier back = load_checkpoint(bytes, &cfg);

  const auto t1 = net.named_tensors();
  auto t2 = back.named_tensors();
  REQUIRE(t1.size() == t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) {
    CHECK(t1[i].name == t2[i].name);
    CHECK(t1[i].value->v == t2[i].value->v);  // bitwise
  }
  // saving the reload reproduces identical bytes
  CHECK(save_checkpoint(back) == bytes);

  SUBCASE("truncated file") {
    auto cut = bytes;
    cut.resize(bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(cut), Error);
  }
  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[0] = 'X';
    try {
      load_checkpoint(bad);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BadMagic);
    }
  }
  SUBCASE("config mismatch on in_channels") {
    auto other = cfg;
    other.in_channels = 1;
    try {
      load_checkpoint(bytes, &other);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ConfigMismatch);
    }
  }
}

namespace {

// separable synthetic samples on the test grid: positives carry a bright
// cube in channel 2
std::vector<TrainSample> synthetic_samples(int n_train, int n_val, int n_test,
                                           std::uint64_t seed) {
  std::vector<TrainSample> out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  int counter = 0;
  auto add = [&](int n, Partition part) {
    for (int i = 0; i < n; ++i) {
      TrainSample s;
      s.exam_id = "e" + std::to_string(counter);
      s.subject_id = "s" + std::to_string(counter);
      ++counter;
      s.label = counter % 2;
      s.partition = part;
      s.fold = part == Partition::Train ? counter % 5 : -1;
      for (int c = 0; c < 2; ++c) {
        std::vector<double> data(8 * 8 * 8);
        for (auto& v : data) v = 0.2 + noise(rng);
        if (c == 1 && s.label) {
          for (int z = 3; z < 6; ++z)
            for (int y = 3; y < 6; ++y)
              for (int x = 3; x < 6; ++x)
                data[static_cast<std::size_t>(x) + 8 * (y + 8 * z)] = 1.0 + noise(rng);
        }
        s.channels.push_back(Volume3D::axis_aligned({8, 8, 8}, {1, 1, 1},
                                                    std::move(data), "LPI"));
      }
      out.push_back(std::move(s));
    }
  };
  add(n_train, Partition::Train);
  add(n_val, Partition::Validation);
  add(n_test, Partition::Test);
  return out;
}

}  // namespace

TEST_CASE("cross-validated training separates synthetic data") {
  auto cfg = tiny_test_config();
  TrainingConfig tc;
  tc.epochs = 8;
  tc.warmup_epochs = 2;
  tc.lr_max = 3e-3;
  tc.batch_size = 8;
  tc.seed = 11;

  const auto samples = synthetic_samples(40, 10, 10, 3);
  const auto result = train_cv(samples, cfg, tc);
  CHECK(result.folds.size() == 5);

  // training-set AUC of the aggregated fold models
  std::vector<std::map<std::string, double>> per_fold;
  std::vector<TrainSample> train_only;
  for (const auto& s : samples)
    if (s.partition == Partition::Train) train_only.push_back(s);
  for (auto& f : result.folds) {
    auto model = f.model;
    per_fold.push_back(score_samples(model, train_only));
  }
  const auto agg = aggregate_fold_scores_mean(per_fold);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : train_only) {
    scores.push_back(agg.at(s.exam_id));
    labels.push_back(s.label);
  }
  CHECK(auc_mann_whitney(scores, labels) > 0.95);

  SUBCASE("identical seeds reproduce bitwise-identical checkpoints") {
    const auto again = train_cv(samples, cfg, tc);
    for (std::size_t f = 0; f < result.folds.size(); ++f) {
      auto a = result.folds[f].model;
      auto b = again.folds[f].model;
      CHECK(save_checkpoint(a) == save_checkpoint(b));
    }
  }

  SUBCASE("per-epoch log rows are complete") {
    CHECK(result.log.size() == 5 * 8);
    for (const auto& row : result.log) {
      CHECK(row.lr >= 0);
      CHECK(std::isfinite(row.train_loss));
    }
  }
}

TEST_CASE("fold score aggregation") {
  std::map<std::string, double> f1 = {{"a", 0.2}, {"b", 1.0}};
  std::map<std::string, double> f2 = {{"a", 0.4}, {"b", 1.0}};
  std::map<std::string, double> f3 = {{"a", 0.6}, {"b", 1.0}};
  std::map<std::string, double> f4 = {{"a", 0.8}, {"b", 1.0}};
  std::map<std::string, double> f5 = {{"a", 1.0}, {"b", 1.0}};
  const auto mean = aggregate_fold_scores_mean({f1, f2, f3, f4, f5});
  CHECK(mean.at("a") == doctest::Approx(0.6));
  CHECK(mean.at("b") == doctest::Approx(1.0));

  SUBCASE("identical folds aggregate to any single fold") {
    const auto m = aggregate_fold_scores_mean({f1, f1, f1});
    CHECK(m.at("a") == doctest::Approx(f1.at("a")));
  }
  SUBCASE("pooled mode keeps 5n observations") {
    const auto pooled = aggregate_fold_scores_pooled({f1, f2, f3, f4, f5});
    CHECK(pooled.size() == 10);
  }
  SUBCASE("mismatched exam sets raise") {
    std::map<std::string, double> bad = {{"a", 0.5}, {"c", 0.5}};
    CHECK_THROWS_AS(aggregate_fold_scores_mean({f1, bad}), Error);
  }
}

TEST_CASE("single-class folds are rejected") {
  auto samples = synthetic_samples(10, 4, 0, 9);
  for (auto& s : samples)
    if (s.partition == Partition::Train) s.label = 1;
  auto cfg = tiny_test_config();
  TrainingConfig tc;
  tc.epochs = 2;
  tc.warmup_epochs = 1;
  try {
    train_cv(samples, cfg, tc);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingleClassFold);
  }
}

TEST_SUITE_END();
