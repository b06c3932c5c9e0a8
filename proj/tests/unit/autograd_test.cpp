#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <vector>

#include "../support/gradcheck.hpp"
#include "test_util.hpp"
#include "wt/adam.hpp"
#include "wt/ops.hpp"
#include "wt/param_store.hpp"
#include "wt/rng.hpp"
#include "wt/tensor.hpp"

namespace wt {
namespace {

using DTensor = BasicTensor<double>;
using DTape = BasicTape<double>;

// --- forward examples ----------------------------------------------------

TEST(Conv2d, IdentityKernelCopiesInput) {
    Tensor x(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k(Shape{1, 1, 1, 1}, 1.0f);
    Tensor b(Shape{1}, 0.0f);
    auto y = conv2d(x, k, b);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, AllOnesSumsNine) {
    Tensor x(Shape{1, 1, 3, 3}, 1.0f);
    Tensor k(Shape{1, 1, 3, 3}, 1.0f);
    auto y = conv2d(x, k, Tensor(Shape{1}));
    ASSERT_EQ(y.numel(), 1u);
    EXPECT_FLOAT_EQ(y[0], 9.0f);
}

TEST(Conv2d, DiagonalKernel) {
    Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor k(Shape{1, 1, 2, 2}, {1, 0, 0, 1});
    auto y = conv2d(x, k, Tensor());
    EXPECT_FLOAT_EQ(y.item(), 5.0f);
}

TEST(Conv2d, OutputExtentsFollowStrideAndPadding) {
    Tensor x(Shape{2, 3, 7, 5});
    Tensor k(Shape{4, 3, 3, 3});
    auto y = conv2d(x, k, Tensor(), 2, 1);
    EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 3}));
}

TEST(Conv2d, ChannelMismatchIsShapeError) {
    Tensor x(Shape{1, 2, 4, 4});
    Tensor k(Shape{1, 3, 3, 3});
    EXPECT_WT_ERROR(conv2d(x, k, Tensor()), ErrorKind::shape);
    EXPECT_WT_ERROR(conv2d(x, Tensor(Shape{1, 2, 5, 5}), Tensor()), ErrorKind::shape);
}

TEST(Linear, Examples) {
    Tensor eye(Shape{2, 2}, {1, 0, 0, 1});
    Tensor x(Shape{2, 2}, {1, -2, 3, 4});
    auto y = linear(x, eye, Tensor(Shape{2}));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y[i], x[i]);

    auto z = linear(Tensor(Shape{1, 2}, {1, 2}), Tensor(Shape{1, 2}, {3, 4}), Tensor(Shape{1}, {1}));
    EXPECT_FLOAT_EQ(z.item(), 12.0f);

    auto w = linear(x, Tensor(Shape{3, 2}), Tensor(Shape{3}, {0.5f, -1.0f, 2.0f}));
    for (std::size_t r = 0; r < 2; ++r) {
        EXPECT_EQ(w[r * 3 + 0], 0.5f);
        EXPECT_EQ(w[r * 3 + 1], -1.0f);
        EXPECT_EQ(w[r * 3 + 2], 2.0f);
    }
    EXPECT_WT_ERROR(linear(x, Tensor(Shape{2, 3}), Tensor(Shape{2})), ErrorKind::shape);
}

BatchNormStats<float> fresh_stats(std::size_t c) { return {Tensor(Shape{c}, 0.0f), Tensor(Shape{c}, 1.0f)}; }

TEST(BatchNorm, StandardizedInputPassesThrough) {
    // Per channel: mean 0, population variance 1.
    Tensor x(Shape{2, 1, 1, 2}, {1, -1, -1, 1});
    auto y = batchnorm2d(x, Tensor(Shape{1}, 1.0f), Tensor(Shape{1}, 0.0f), fresh_stats(1), true);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], x[i], 1e-5);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
    Rng rng(3);
    Tensor x(Shape{3, 2, 2, 2});
    for (auto& v : x.data()) v = static_cast<float>(rng.normal());
    auto y = batchnorm2d(x, Tensor(Shape{2}, 0.0f), Tensor(Shape{2}, {0.25f, -4.0f}), fresh_stats(2), true);
    for (std::size_t n = 0; n < 3; ++n) {
        for (std::size_t s = 0; s < 4; ++s) {
            EXPECT_EQ(y[(n * 2 + 0) * 4 + s], 0.25f);
            EXPECT_EQ(y[(n * 2 + 1) * 4 + s], -4.0f);
        }
    }
}

TEST(BatchNorm, TwoValuesNormalizeToPlusMinusOne) {
    Tensor x(Shape{2, 1, 1, 1}, {1, 3});
    auto stats = fresh_stats(1);
    auto y = batchnorm2d(x, Tensor(Shape{1}, 1.0f), Tensor(Shape{1}, 0.0f), stats, true);
    const double expect = 1.0 / std::sqrt(1.0 + kBatchNormEps);
    EXPECT_NEAR(y[0], -expect, 1e-6);
    EXPECT_NEAR(y[1], expect, 1e-6);
    // Running stats: momentum 0.1 toward mean 2 and unbiased variance 2.
    EXPECT_NEAR(stats.running_mean[0], 0.2, 1e-6);
    EXPECT_NEAR(stats.running_var[0], 0.9 + 0.1 * 2.0, 1e-6);
}

TEST(BatchNorm, EvalUsesRunningStats) {
    Tensor x(Shape{1, 1, 1, 2}, {5, 7});
    BatchNormStats<float> stats{Tensor(Shape{1}, 5.0f), Tensor(Shape{1}, 4.0f)};
    auto y = batchnorm2d(x, Tensor(Shape{1}, 2.0f), Tensor(Shape{1}, 1.0f), stats, false);
    EXPECT_NEAR(y[0], 1.0, 1e-6);
    EXPECT_NEAR(y[1], 1.0 + 2.0 * 2.0 / std::sqrt(4.0 + kBatchNormEps), 1e-5);
    EXPECT_EQ(stats.running_mean[0], 5.0f);
}

TEST(BatchNorm, SingleElementTrainingFails) {
    Tensor x(Shape{1, 2, 1, 1}, {1, 2});
    EXPECT_WT_ERROR(batchnorm2d(x, Tensor(Shape{2}, 1.0f), Tensor(Shape{2}), fresh_stats(2), true),
                    ErrorKind::invalid_argument);
}

TEST(Activations, Examples) {
    auto r = relu(Tensor(Shape{2}, {-2, 3}));
    EXPECT_EQ(r[0], 0.0f);
    EXPECT_EQ(r[1], 3.0f);
    auto l = leaky_relu(Tensor(Shape{1}, {-2}), 0.1f);
    EXPECT_FLOAT_EQ(l[0], -0.2f);

    Tensor x(Shape{1}, {2.0f});
    x.set_requires_grad(true);
    backward(sum(relu(x)));
    EXPECT_EQ(x.grad()[0], 1.0f);
}

TEST(Activations, SubgradientAtZeroIsSlope) {
    Tensor x(Shape{1}, {0.0f});
    x.set_requires_grad(true);
    backward(sum(leaky_relu(x, 0.25f)));
    EXPECT_EQ(x.grad()[0], 0.25f);
}

TEST(Pooling, Examples) {
    Tensor c(Shape{1, 2, 4, 4}, 1.5f);
    auto p = maxpool2d(c, 2, 2);
    for (float v : p.data()) EXPECT_EQ(v, 1.5f);
    auto g = global_avg_pool(c);
    EXPECT_EQ(g.shape(), (Shape{1, 2}));
    for (float v : g.data()) EXPECT_EQ(v, 1.5f);

    Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    x.set_requires_grad(true);
    auto m = maxpool2d(x, 2, 2);
    EXPECT_EQ(m.item(), 4.0f);
    backward(sum(m));
    const float expect[4] = {0, 0, 0, 1};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[i], expect[i]);
}

TEST(Pooling, TiesRouteToFirstOccurrence) {
    Tensor x(Shape{1, 1, 2, 2}, 7.0f);
    x.set_requires_grad(true);
    backward(sum(maxpool2d(x, 2, 2)));
    EXPECT_EQ(x.grad()[0], 1.0f);
    for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(x.grad()[i], 0.0f);
}

TEST(Pooling, WindowLargerThanInputFails) {
    EXPECT_WT_ERROR(maxpool2d(Tensor(Shape{1, 1, 2, 2}), 3, 1), ErrorKind::shape);
}

TEST(CrossEntropy, Examples) {
    std::vector<int> l0{0}, l1{1};
    EXPECT_NEAR(softmax_cross_entropy(Tensor(Shape{1, 2}, {0, 0}), l0).item(), 0.693147, 1e-5);
    auto big = softmax_cross_entropy(Tensor(Shape{1, 2}, {100, 0}), l0).item();
    EXPECT_TRUE(std::isfinite(big));
    EXPECT_NEAR(big, 0.0, 1e-6);
    EXPECT_NEAR(softmax_cross_entropy(Tensor(Shape{1, 2}, {1, 0}), l1).item(), 1.313262, 1e-5);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOnehotOverN) {
    Tensor logits(Shape{2, 2}, {0, 0, 1, 0});
    logits.set_requires_grad(true);
    std::vector<int> labels{0, 1};
    backward(softmax_cross_entropy(logits, labels));
    const double s = std::exp(1.0) / (std::exp(1.0) + 1.0);
    EXPECT_NEAR(logits.grad()[0], (0.5 - 1.0) / 2, 1e-6);
    EXPECT_NEAR(logits.grad()[1], 0.5 / 2, 1e-6);
    EXPECT_NEAR(logits.grad()[2], s / 2, 1e-6);
    EXPECT_NEAR(logits.grad()[3], (1.0 - s - 1.0) / 2, 1e-6);
}

TEST(CrossEntropy, OutOfRangeLabelFails) {
    std::vector<int> bad{2};
    EXPECT_WT_ERROR(softmax_cross_entropy(Tensor(Shape{1, 2}), bad), ErrorKind::invalid_argument);
    std::vector<int> neg{-1};
    EXPECT_WT_ERROR(softmax_cross_entropy(Tensor(Shape{1, 2}), neg), ErrorKind::invalid_argument);
}

// --- backward contract ---------------------------------------------------

TEST(Backward, SumOfSquares) {
    Tensor x(Shape{2}, {1, 2});
    x.set_requires_grad(true);
    backward(sum(mul(x, x)));
    EXPECT_EQ(x.grad()[0], 2.0f);
    EXPECT_EQ(x.grad()[1], 4.0f);
}

TEST(Backward, DisconnectedParameterKeepsZeroGrad) {
    Tensor x(Shape{2}, {1, 2});
    Tensor unused(Shape{3}, 5.0f);
    x.set_requires_grad(true);
    unused.set_requires_grad(true);
    unused.zero_grad();
    backward(sum(x));
    for (float g : unused.grad()) EXPECT_EQ(g, 0.0f);
}

TEST(Backward, GradientsAccumulate) {
    Tensor x(Shape{1}, {3});
    x.set_requires_grad(true);
    backward(sum(scale(x, 2.0f)));
    backward(sum(scale(x, 2.0f)));
    EXPECT_EQ(x.grad()[0], 4.0f);
}

TEST(Backward, NonScalarLossFails) {
    Tensor x(Shape{2}, {1, 2});
    x.set_requires_grad(true);
    auto y = mul(x, x);
    EXPECT_WT_ERROR(backward(y), ErrorKind::shape);
    Tape::current().clear();
}

TEST(Backward, SecondCallWithoutForwardFails) {
    Tensor x(Shape{2}, {1, 2});
    x.set_requires_grad(true);
    auto loss = sum(mul(x, x));
    backward(loss);
    EXPECT_WT_ERROR(backward(loss), ErrorKind::state);
}

TEST(Backward, NoGradGuardRecordsNothing) {
    Tensor x(Shape{2}, {1, 2});
    x.set_requires_grad(true);
    {
        NoGradGuard guard;
        auto y = sum(mul(x, x));
        (void)y;
    }
    EXPECT_EQ(Tape::current().size(), 0u);
}

// --- Adam ----------------------------------------------------------------

ParamStore single_weight(float value, float grad) {
    ParamStore store;
    store.add("w", ParamRole::linear_weight, Tensor(Shape{1, 1}, value));
    store.seal();
    store.at(0).value.zero_grad();
    store.at(0).value.grad()[0] = grad;
    return store;
}

TEST(Adam, FirstStepMovesByLearningRate) {
    auto store = single_weight(0.0f, 1.0f);
    AdamState state(store, AdamOptions{});
    adam_step(store, state);
    EXPECT_NEAR(store.at(0).value[0], -1e-4, 1e-10);
    EXPECT_EQ(state.step, 1u);
}

TEST(Adam, ZeroGradientLeavesWeight) {
    auto store = single_weight(0.375f, 0.0f);
    AdamState state(store, AdamOptions{});
    adam_step(store, state);
    EXPECT_EQ(store.at(0).value[0], 0.375f);
}

TEST(Adam, MaskedWeightStaysZero) {
    ParamStore store;
    store.add("w", ParamRole::conv_weight, Tensor(Shape{2, 1, 1, 1}, {0.0f, 0.5f}));
    store.seal();
    store.at(0).mask[0] = 0;
    AdamState state(store, AdamOptions{});
    for (int t = 0; t < 50; ++t) {
        store.at(0).value.zero_grad();
        store.at(0).value.grad()[0] = 3.0f;
        store.at(0).value.grad()[1] = -1.0f;
        adam_step(store, state);
        ASSERT_EQ(store.at(0).value[0], 0.0f);
    }
    EXPECT_GT(store.at(0).value[1], 0.5f);
    EXPECT_EQ(state.step, 50u);
}

TEST(Adam, MissingGradientBufferFails) {
    ParamStore store;
    store.add("w", ParamRole::linear_weight, Tensor(Shape{1, 1}, 1.0f));
    store.seal();
    AdamState state(store, AdamOptions{});
    EXPECT_WT_ERROR(adam_step(store, state), ErrorKind::state);
}

// --- finite differences --------------------------------------------------

using gradcheck::kSeeds;
using gradcheck::random_tensor;

TEST(FiniteDifference, EveryOpAgreesElementwiseOverTwentySeeds) {
    const auto start = std::chrono::steady_clock::now();
    for (const auto& [name, r] : gradcheck::run_all()) {
        EXPECT_EQ(r.failures, 0u) << name << " worst relative error " << r.worst << ", first: " << r.first_failure;
        EXPECT_GT(r.checked, 0u) << name;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EXPECT_LT(secs, 60.0);
}

TEST(FiniteDifference, BackwardIsLinear) {
    for (int s = 0; s < kSeeds; ++s) {
        Rng rng(mix_seed(0x11, static_cast<std::uint64_t>(s)));
        auto x = random_tensor(rng, {2, 2, 4, 4});
        auto k = random_tensor(rng, {2, 2, 3, 3});
        const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);
        const auto f = [&] { return sum(mul(conv2d(x, k, DTensor(), 1, 1), x)); };
        const auto g = [&] { return sum(global_avg_pool(mul(x, x))); };
        const auto grad_of = [&](const std::function<DTensor()>& loss) {
            x.set_requires_grad(true);
            x.zero_grad();
            backward(loss());
            return std::vector<double>(x.grad().begin(), x.grad().end());
        };
        const auto gf = grad_of(f);
        const auto gg = grad_of(g);
        const auto gc = grad_of([&] { return add(scale(f(), a), scale(g(), b)); });
        for (std::size_t i = 0; i < gc.size(); ++i) EXPECT_NEAR(gc[i], a * gf[i] + b * gg[i], 1e-12);
    }
}

TEST(FiniteDifference, FloatAndDoubleAgreeOnConv) {
    Rng rng(8);
    auto xd = random_tensor(rng, {1, 2, 5, 5});
    auto kd = random_tensor(rng, {2, 2, 3, 3});
    Tensor xf(xd.shape()), kf(kd.shape());
    for (std::size_t i = 0; i < xd.numel(); ++i) xf[i] = static_cast<float>(xd[i]);
    for (std::size_t i = 0; i < kd.numel(); ++i) kf[i] = static_cast<float>(kd[i]);
    xf.set_requires_grad(true);
    xd.set_requires_grad(true);
    backward(sum(mul(conv2d(xf, kf, Tensor(), 1, 1), conv2d(xf, kf, Tensor(), 1, 1))));
    backward(sum(mul(conv2d(xd, kd, DTensor(), 1, 1), conv2d(xd, kd, DTensor(), 1, 1))));
    for (std::size_t i = 0; i < xd.numel(); ++i) EXPECT_NEAR(xf.grad()[i], xd.grad()[i], 1e-4);
}

// --- determinism ---------------------------------------------------------

std::vector<float> trajectory(std::uint64_t seed) {
    Rng rng(seed);
    ParamStore store;
    Tensor k(Shape{3, 2, 3, 3});
    for (auto& v : k.data()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    Tensor w(Shape{2, 3});
    for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    store.add("k", ParamRole::conv_weight, k);
    store.add("w", ParamRole::linear_weight, w);
    store.add("b", ParamRole::bias, Tensor(Shape{2}));
    store.seal();
    AdamState state(store, AdamOptions{0.01});
    Tensor x(Shape{4, 2, 6, 6});
    for (auto& v : x.data()) v = static_cast<float>(rng.normal());
    std::vector<int> labels{0, 1, 1, 0};
    std::vector<float> out;
    for (int t = 0; t < 5; ++t) {
        store.zero_grad();
        auto h = global_avg_pool(relu(conv2d(x, store.at(0).value, Tensor(), 1, 1)));
        auto loss = softmax_cross_entropy(linear(h, store.at(1).value, store.at(2).value), labels);
        out.push_back(loss.item());
        backward(loss);
        for (const auto& e : store.entries()) out.insert(out.end(), e.value.grad().begin(), e.value.grad().end());
        adam_step(store, state);
        for (const auto& e : store.entries()) out.insert(out.end(), e.value.data().begin(), e.value.data().end());
    }
    return out;
}

TEST(Determinism, SameSeedGivesBitwiseIdenticalTrajectory) {
    const auto a = trajectory(42);
    const auto b = trajectory(42);
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(float)));
    EXPECT_NE(a, trajectory(43));
}

}  // namespace
}  // namespace wt
