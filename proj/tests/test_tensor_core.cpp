#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "cssloc/adam.hpp"
#include "cssloc/kernels.hpp"
#include "cssloc/tensor.hpp"
#include "gradient_suite.hpp"
#include "support.hpp"

using namespace cssloc;
using cssloc::testing::random_tensor;

namespace {

constexpr int kInstances = 50;
constexpr double kTol = 1e-5;

template <typename T>
bool same_bits(std::span<const T> a, std::span<const T> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

class ThreadsGuard {
 public:
  explicit ThreadsGuard(int n) : saved_(omp_get_max_threads()) { omp_set_num_threads(n); }
  ~ThreadsGuard() { omp_set_num_threads(saved_); }

 private:
  int saved_;
};

}  // namespace

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  Tensor<float> t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_THROW(require_shape(t, {3, 2}, "t"), ShapeError);
}

TEST(Tensor, CosineExamples) {
  const std::vector<double> x{0.3, -1.2, 2.0}, e1{1, 0}, e2{0, 1}, d{1, 1};
  EXPECT_NEAR(cosine_sim<double>(x, x), 1.0, 1e-15);
  EXPECT_EQ(cosine_sim<double>(e1, e2), 0.0);
  EXPECT_NEAR(cosine_sim<double>(d, e1), 0.70710678, 1e-8);
}

TEST(Tensor, NormalizeRejectsZero) {
  const std::vector<double> z{0, 0, 0};
  EXPECT_THROW(l2_normalize<double>(z), DegenerateVectorError);
  const std::vector<double> tiny{1e-13, 0};
  EXPECT_THROW(l2_normalize<double>(tiny), DegenerateVectorError);
  const std::vector<double> v{3, 4};
  const auto n = l2_normalize<double>(v);
  EXPECT_DOUBLE_EQ(n[0], 0.6);
  EXPECT_DOUBLE_EQ(n[1], 0.8);
}

TEST(Tensor, SoftmaxUniformAndStable) {
  const std::vector<double> z{0, 0, 0};
  for (double p : softmax<double>(z)) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
  const std::vector<float> big{1000.f, 1001.f, 999.f};
  const auto p = softmax<float>(big);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0f, 1e-6f);
  for (float v : p) EXPECT_TRUE(std::isfinite(v));
}

TEST(Tape, ReluZeroesNegatives) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 4}, {-0.0, -1.0, -2.5, -1e-9}));
  for (double v : tape.value(tape.relu(x)).storage()) EXPECT_EQ(v, 0.0);
}

TEST(Tape, NanPropagatesThroughReluAndPool) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 1, 2, 2}, {1.0, nan, 3.0, -1.0}));
  EXPECT_TRUE(std::isnan(tape.value(tape.relu(x))[1]));
  EXPECT_TRUE(std::isnan(tape.value(tape.maxpool2d(x, 2))[0]));
}

TEST(Tape, ConvShapeAndIdentityKernel) {
  Rng rng(1);
  const auto x = random_tensor({1, 1, 30, 30}, rng);
  Tensor<double> w({4, 1, 3, 3});
  for (int c = 0; c < 4; ++c) w[static_cast<std::size_t>(c) * 9 + 4] = 1.0;
  Tape<double> tape;
  auto y = tape.conv2d(tape.constant(x), tape.constant(w), tape.constant(Tensor<double>({4})));
  const auto& out = tape.value(y);
  ASSERT_EQ(out.shape(), (Shape{1, 4, 30, 30}));
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 900; ++i) EXPECT_EQ(out[c * 900 + i], x[i]);
}

TEST(Tape, PoolShapesFormFeatureChain) {
  Tape<double> tape;
  auto a = tape.maxpool2d(tape.constant(Tensor<double>({1, 4, 30, 30}, 0.5)), 2);
  EXPECT_EQ(tape.value(a).shape(), (Shape{1, 4, 15, 15}));
  auto b = tape.maxpool2d(tape.constant(Tensor<double>({1, 4, 15, 15}, 0.5)), 3);
  EXPECT_EQ(tape.value(b).shape(), (Shape{1, 4, 5, 5}));
  EXPECT_EQ(tape.value(tape.flatten(b)).shape(), (Shape{1, 100}));
  EXPECT_THROW(tape.maxpool2d(b, 4), ShapeError);
}

TEST(Tape, PoolConstantInputRoutesOneGradientPerWindow) {
  Tape<double> tape;
  auto x = tape.parameter(Tensor<double>({1, 1, 6, 6}, 2.0));
  auto y = tape.maxpool2d(x, 3);
  for (double v : tape.value(y).storage()) EXPECT_EQ(v, 2.0);
  auto loss = tape.weighted_sum(y, Tensor<double>({1, 1, 2, 2}, 1.0));
  tape.backward(loss);
  const auto& g = tape.grad(x);
  // Each 3x3 window passes its gradient to exactly one element: the first.
  int ones = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] != 0.0) {
      EXPECT_EQ(g[i], 1.0);
      ++ones;
    }
  }
  EXPECT_EQ(ones, 4);
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[3], 1.0);
  EXPECT_EQ(g[18], 1.0);
  EXPECT_EQ(g[21], 1.0);
}

TEST(Tape, ConstantsOwnNoGradientBuffers) {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({2, 3}, 1.0));
  auto w = tape.constant(Tensor<double>({4, 3}, 0.5));
  auto b = tape.constant(Tensor<double>({4}));
  auto y = tape.relu(tape.linear(a, w, b));
  EXPECT_FALSE(tape.requires_grad(y));
  EXPECT_EQ(tape.grad_buffers(), 0u);
}

TEST(Tape, DetachBlocksGradient) {
  Tape<double> tape;
  auto x = tape.parameter(Tensor<double>({1, 3}, {1.0, 2.0, 3.0}));
  auto d = tape.detach(x);
  EXPECT_FALSE(tape.requires_grad(d));
  auto loss = tape.weighted_sum(tape.relu(x), Tensor<double>({1, 3}, 1.0));
  tape.backward(loss);
  EXPECT_EQ(tape.grad(x)[2], 1.0);
}

// ---- finite-difference oracles, 50 random instances per op

TEST(GradCheck, Conv2d) { EXPECT_LT(cssloc::testing::grad_conv2d(kInstances), kTol); }
TEST(GradCheck, Maxpool) { EXPECT_LT(cssloc::testing::grad_maxpool(kInstances), kTol); }
TEST(GradCheck, Linear) { EXPECT_LT(cssloc::testing::grad_linear(kInstances), kTol); }
TEST(GradCheck, ReluSoftmaxComposite) { EXPECT_LT(cssloc::testing::grad_relu_softmax(kInstances), kTol); }
TEST(GradCheck, L2Normalize) { EXPECT_LT(cssloc::testing::grad_l2_normalize(kInstances), kTol); }
TEST(GradCheck, SoftmaxCrossEntropy) { EXPECT_LT(cssloc::testing::grad_softmax_cross_entropy(kInstances), kTol); }

// ---- serial and OpenMP kernels agree bit for bit

TEST(Backends, KernelsBitIdentical) {
  ThreadsGuard threads(4);
  Rng rng(21);
  const kernels::ConvDims cd{3, 4, 4, 15, 15, 3};
  const auto x = random_tensor({3, 4, 15, 15}, rng).cast<float>();
  const auto w = random_tensor({4, 4, 3, 3}, rng).cast<float>();
  const auto b = random_tensor({4}, rng).cast<float>();
  const auto dy = random_tensor({3, 4, 15, 15}, rng).cast<float>();
  using kernels::Backend;
  auto run_conv = [&](Backend be) {
    std::vector<float> y(dy.size()), dx(x.size()), dw(w.size()), db(4);
    kernels::conv2d_forward<float>(be, cd, x.data(), w.data(), b.data(), y);
    kernels::conv2d_backward_input<float>(be, cd, dy.data(), w.data(), dx);
    kernels::conv2d_backward_params<float>(be, cd, dy.data(), x.data(), dw, db);
    return std::vector<std::vector<float>>{y, dx, dw, db};
  };
  const auto s = run_conv(Backend::serial), o = run_conv(Backend::omp);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_TRUE(same_bits<float>(s[i], o[i])) << "conv output " << i;

  const kernels::PoolDims pd{12, 15, 15, 3};
  auto run_pool = [&](Backend be) {
    std::vector<float> y(12 * 25), dx(x.size());
    std::vector<std::size_t> arg(12 * 25);
    kernels::maxpool_forward<float>(be, pd, x.data(), y, arg);
    kernels::maxpool_backward<float>(be, pd, std::span<const float>(dy.data().data(), 12 * 25), arg, dx);
    return std::make_pair(y, dx);
  };
  const auto ps = run_pool(Backend::serial), po = run_pool(Backend::omp);
  EXPECT_TRUE(same_bits<float>(ps.first, po.first));
  EXPECT_TRUE(same_bits<float>(ps.second, po.second));

  const kernels::LinearDims ld{7, 100, 32};
  const auto lx = random_tensor({7, 100}, rng).cast<float>();
  const auto lw = random_tensor({32, 100}, rng).cast<float>();
  const auto lb = random_tensor({32}, rng).cast<float>();
  const auto ldy = random_tensor({7, 32}, rng).cast<float>();
  auto run_lin = [&](Backend be) {
    std::vector<float> y(7 * 32), dx(700), dw(3200), db(32), s(49);
    kernels::linear_forward<float>(be, ld, lx.data(), lw.data(), lb.data(), y);
    kernels::linear_backward_input<float>(be, ld, ldy.data(), lw.data(), dx);
    kernels::linear_backward_params<float>(be, ld, ldy.data(), lx.data(), dw, db);
    kernels::gram<float>(be, 7, 7, 100, lx.data(), lx.data(), s);
    return std::vector<std::vector<float>>{y, dx, dw, db, s};
  };
  const auto ls = run_lin(Backend::serial), lo = run_lin(Backend::omp);
  for (std::size_t i = 0; i < ls.size(); ++i) EXPECT_TRUE(same_bits<float>(ls[i], lo[i])) << "linear output " << i;
}

// ---- Adam

TEST(Adam, ZeroGradNoDecayLeavesParams) {
  Tensor<double> p({3}, {0.5, -1.0, 2.0});
  const auto before = p;
  Tensor<double> g({3});
  const Tensor<double>* cp[] = {&p};
  Adam<double> opt({.lr = 0.1}, cp);
  Tensor<double>* ps[] = {&p};
  const Tensor<double>* gs[] = {&g};
  for (int i = 0; i < 5; ++i) opt.step(ps, gs);
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepClosedForm) {
  // After one step the bias-corrected moments are g and g^2 exactly.
  for (double g0 : {0.3, -2.0, 1e-3}) {
    Tensor<double> p({1}, {1.0});
    Tensor<double> g({1}, {g0});
    const Tensor<double>* cp[] = {&p};
    AdamConfig cfg{.lr = 0.01};
    Adam<double> opt(cfg, cp);
    Tensor<double>* ps[] = {&p};
    const Tensor<double>* gs[] = {&g};
    opt.step(ps, gs);
    const double expected = 1.0 - cfg.lr * g0 / (std::sqrt(g0 * g0) + cfg.eps);
    EXPECT_NEAR(p[0], expected, 1e-15);
  }
}

TEST(Adam, WeightDecayContracts) {
  Tensor<double> p({4}, {1.0, -2.0, 0.5, 3.0});
  Tensor<double> g({4});
  const Tensor<double>* cp[] = {&p};
  Adam<double> opt({.lr = 0.05, .weight_decay = 0.1}, cp);
  Tensor<double>* ps[] = {&p};
  const Tensor<double>* gs[] = {&g};
  auto norm = [&] {
    double s = 0;
    for (double v : p.storage()) s += v * v;
    return std::sqrt(s);
  };
  double prev = norm();
  for (int i = 0; i < 10; ++i) {
    opt.step(ps, gs);
    const double n = norm();
    EXPECT_LT(n, prev);
    prev = n;
  }
}

TEST(Adam, RejectsNonPositiveRate) {
  Tensor<double> p({1});
  const Tensor<double>* cp[] = {&p};
  EXPECT_THROW(Adam<double>({.lr = 0.0}, cp), ConfigError);
}
