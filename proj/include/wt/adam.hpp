#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "wt/error.hpp"
#include "wt/param_store.hpp"

namespace wt {

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment buffers mirror the trainable entries of a ParamStore
/// (empty vectors for non-trainable slots).
struct AdamState {
    AdamOptions options;
    std::uint64_t step = 0;
    std::vector<std::vector<float>> first_moment;
    std::vector<std::vector<float>> second_moment;

    AdamState() = default;
    AdamState(const ParamStore& store, AdamOptions opts) : options(opts) {
        first_moment.resize(store.size());
        second_moment.resize(store.size());
        for (std::size_t i = 0; i < store.size(); ++i) {
            const auto& e = store.at(i);
            if (!e.trainable()) continue;
            first_moment[i].assign(e.value.numel(), 0.0f);
            second_moment[i].assign(e.value.numel(), 0.0f);
        }
    }
};

/// One bias-corrected Adam update. Masked-out weights are skipped entirely:
/// their gradient is treated as zero, their moments are held at zero and the
/// weight stays exactly 0. Moments are stored as float, the update itself
/// is computed in double.
inline void adam_step(ParamStore& store, AdamState& state) {
    require(state.first_moment.size() == store.size(), ErrorKind::state,
            "adam_step: optimizer state was built for a different parameter store");
    state.step += 1;
    const auto& o = state.options;
    const double correction1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
    const double correction2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& e = store.at(i);
        if (!e.trainable()) continue;
        if (!e.value.has_grad()) {
            fail(ErrorKind::state, "adam_step: parameter '" + e.name + "' has no gradient buffer");
        }
        auto w = e.value.data();
        auto g = e.value.grad();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        const bool masked = e.prunable();
        for (std::size_t k = 0; k < w.size(); ++k) {
            if (masked && !e.mask[k]) {
                g[k] = 0.0f;
                m[k] = 0.0f;
                v[k] = 0.0f;
                w[k] = 0.0f;
                continue;
            }
            const double gk = g[k];
            const double mk = o.beta1 * m[k] + (1.0 - o.beta1) * gk;
            const double vk = o.beta2 * v[k] + (1.0 - o.beta2) * gk * gk;
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            const double m_hat = mk / correction1;
            const double v_hat = vk / correction2;
            w[k] = static_cast<float>(static_cast<double>(w[k]) - o.lr * m_hat / (std::sqrt(v_hat) + o.eps));
        }
    }
}

}  // namespace wt
