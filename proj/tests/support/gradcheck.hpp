#pragma once

// Central-difference gradient checks on the double instantiation of the
// autograd engine, shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "wt/ops.hpp"
#include "wt/rng.hpp"
#include "wt/tensor.hpp"

namespace wt::gradcheck {

using DTensor = BasicTensor<double>;

constexpr double kStep = 1e-3;
constexpr double kTolerance = 1e-3;
constexpr int kSeeds = 20;

using Graph = std::function<DTensor(const std::vector<DTensor>&)>;

inline DTensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    DTensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// Values bounded away from zero so activation kinks are never crossed.
inline DTensor off_kink_tensor(Rng& rng, Shape shape) {
    DTensor t(std::move(shape));
    for (auto& v : t.data()) {
        const double mag = rng.uniform(0.05, 1.0);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

// Pairwise distinct values spaced 0.02 apart so no pooling window has a tie
// within the finite-difference step.
inline DTensor distinct_tensor(Rng& rng, Shape shape) {
    DTensor t(std::move(shape));
    std::vector<std::size_t> order(t.numel());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) t[i] = 0.02 * static_cast<double>(order[i]) - 0.5;
    return t;
}

struct FdReport {
    std::size_t checked = 0;
    std::size_t failures = 0;
    double worst = 0.0;
    std::string first_failure;
};

// Scalarizes an output with fixed random weights, then compares analytic and
// central-difference gradients element by element.
inline FdReport fd_check(const Graph& graph, std::vector<DTensor> inputs, Rng& rng) {
    DTensor weights;
    const auto scalar = [&](const std::vector<DTensor>& in) {
        auto out = graph(in);
        if (!weights.defined()) weights = random_tensor(rng, out.shape(), 0.5, 1.5);
        return out.numel() == 1 ? out : sum(mul(out, weights));
    };
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    backward(scalar(inputs));
    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

    FdReport report;
    BasicNoGradGuard<double> guard;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto data = inputs[i].data();
        for (std::size_t k = 0; k < data.size(); ++k) {
            const double saved = data[k];
            data[k] = saved + kStep;
            const double plus = scalar(inputs).item();
            data[k] = saved - kStep;
            const double minus = scalar(inputs).item();
            data[k] = saved;
            const double fd = (plus - minus) / (2.0 * kStep);
            const double rel = std::abs(analytic[i][k] - fd) / (std::abs(fd) + 1e-8);
            report.checked += 1;
            report.worst = std::max(report.worst, rel);
            if (rel >= kTolerance) {
                if (report.failures++ == 0) {
                    report.first_failure = "input " + std::to_string(i) + " element " + std::to_string(k) +
                                           ": analytic " + std::to_string(analytic[i][k]) + " fd " + std::to_string(fd);
                }
            }
        }
    }
    return report;
}

struct OpCase {
    const char* name;
    std::function<void(Rng&, std::vector<DTensor>&, Graph&)> make;
};

inline BatchNormStats<double> fresh_dstats(std::size_t c) { return {DTensor(Shape{c}, 0.0), DTensor(Shape{c}, 1.0)}; }

inline std::vector<OpCase> op_cases() {
    return {
        {"add",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {3, 4}), random_tensor(r, {3, 4})};
             g = [](const auto& x) { return add(x[0], x[1]); };
         }},
        {"mul",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {2, 5}), random_tensor(r, {2, 5})};
             g = [](const auto& x) { return mul(x[0], x[1]); };
         }},
        {"scale",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {6})};
             const double f = r.uniform(-2.0, 2.0);
             g = [f](const auto& x) { return scale(x[0], f); };
         }},
        {"sum",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {2, 3, 2})};
             g = [](const auto& x) { return sum(mul(x[0], x[0])); };
         }},
        {"pick",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {4, 3})};
             const std::size_t idx = r.below(12);
             g = [idx](const auto& x) { return mul(pick(x[0], idx), pick(x[0], idx)); };
         }},
        {"reshape_flatten",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {2, 3, 2, 2})};
             g = [](const auto& x) { return mul(reshape(x[0], Shape{6, 4}), reshape(flatten(x[0]), Shape{6, 4})); };
         }},
        {"apply_mask",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {3, 3})};
             std::vector<std::uint8_t> mask(9);
             for (auto& m : mask) m = r.uniform() < 0.5 ? 0 : 1;
             g = [mask](const auto& x) { return apply_mask(x[0], std::span<const std::uint8_t>(mask)); };
         }},
        {"relu",
         [](Rng& r, auto& in, auto& g) {
             in = {off_kink_tensor(r, {2, 8})};
             g = [](const auto& x) { return relu(x[0]); };
         }},
        {"leaky_relu",
         [](Rng& r, auto& in, auto& g) {
             in = {off_kink_tensor(r, {2, 8})};
             g = [](const auto& x) { return leaky_relu(x[0], 0.1); };
         }},
        {"conv2d",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {2, 2, 5, 5}), random_tensor(r, {3, 2, 3, 3}), random_tensor(r, {3})};
             g = [](const auto& x) { return conv2d(x[0], x[1], x[2], 1, 1); };
         }},
        {"conv2d_strided",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {1, 3, 6, 6}), random_tensor(r, {2, 3, 3, 3})};
             g = [](const auto& x) { return conv2d(x[0], x[1], DTensor(), 2, 0); };
         }},
        {"linear",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {3, 4}), random_tensor(r, {2, 4}), random_tensor(r, {2})};
             g = [](const auto& x) { return linear(x[0], x[1], x[2]); };
         }},
        {"batchnorm_train",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {4, 3, 2, 2}), random_tensor(r, {3}, 0.5, 1.5), random_tensor(r, {3})};
             g = [](const auto& x) { return batchnorm2d(x[0], x[1], x[2], fresh_dstats(3), true); };
         }},
        {"batchnorm_eval",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {2, 2, 3, 3}), random_tensor(r, {2}, 0.5, 1.5), random_tensor(r, {2})};
             BatchNormStats<double> stats{random_tensor(r, {2}), random_tensor(r, {2}, 0.5, 2.0)};
             g = [stats](const auto& x) { return batchnorm2d(x[0], x[1], x[2], stats, false); };
         }},
        {"maxpool2d",
         [](Rng& r, auto& in, auto& g) {
             in = {distinct_tensor(r, {2, 2, 4, 4})};
             g = [](const auto& x) { return maxpool2d(x[0], 2, 2); };
         }},
        {"maxpool2d_overlap",
         [](Rng& r, auto& in, auto& g) {
             in = {distinct_tensor(r, {1, 2, 5, 5})};
             g = [](const auto& x) { return maxpool2d(x[0], 3, 2); };
         }},
        {"global_avg_pool",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {3, 2, 3, 2})};
             g = [](const auto& x) { return global_avg_pool(x[0]); };
         }},
        {"softmax_cross_entropy",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {5, 2}, -3.0, 3.0)};
             std::vector<int> labels(5);
             for (auto& l : labels) l = static_cast<int>(r.below(2));
             g = [labels](const auto& x) { return softmax_cross_entropy(x[0], labels); };
         }},
        {"composite_block",
         [](Rng& r, auto& in, auto& g) {
             in = {random_tensor(r, {4, 2, 4, 4}), random_tensor(r, {3, 2, 3, 3}), random_tensor(r, {3}, 0.5, 1.5),
                   random_tensor(r, {3}), random_tensor(r, {2, 3}), random_tensor(r, {2})};
             std::vector<int> labels{0, 1, 1, 0};
             g = [labels](const auto& x) {
                 auto h = conv2d(x[0], x[1], DTensor(), 1, 1);
                 h = batchnorm2d(h, x[2], x[3], fresh_dstats(3), true);
                 h = global_avg_pool(mul(h, h));
                 return softmax_cross_entropy(linear(h, x[4], x[5]), labels);
             };
         }},
    };
}

/// Every op case over `seeds` seeds; one aggregate report per op.
inline std::vector<std::pair<std::string, FdReport>> run_all(int seeds = kSeeds) {
    std::vector<std::pair<std::string, FdReport>> out;
    for (const auto& op : op_cases()) {
        FdReport total;
        for (int s = 0; s < seeds; ++s) {
            Rng rng(mix_seed(0xFD, static_cast<std::uint64_t>(s)));
            std::vector<DTensor> inputs;
            Graph graph;
            op.make(rng, inputs, graph);
            const auto r = fd_check(graph, inputs, rng);
            total.checked += r.checked;
            if (total.failures == 0 && r.failures > 0) total.first_failure = r.first_failure;
            total.failures += r.failures;
            total.worst = std::max(total.worst, r.worst);
        }
        out.emplace_back(op.name, std::move(total));
    }
    return out;
}

}  // namespace wt::gradcheck
