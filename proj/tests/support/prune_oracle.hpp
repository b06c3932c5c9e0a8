#pragma once

// Sort-based reference prune sets for the magnitude thresholds.

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "wt/param_store.hpp"
#include "wt/pruning.hpp"
#include "wt/rng.hpp"

namespace wt::oracle {

struct Key {
    float mag;
    std::size_t entry, flat;
    bool operator<(const Key& o) const { return std::tie(mag, entry, flat) < std::tie(o.mag, o.entry, o.flat); }
};

inline std::vector<WeightRef> oracle_global(const ParamStore& store, std::size_t k) {
    std::vector<Key> all;
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& e = store.at(i);
        if (!e.prunable()) continue;
        for (std::size_t f = 0; f < e.mask.size(); ++f) {
            if (e.mask[f]) all.push_back({std::fabs(e.value[f]), i, f});
        }
    }
    std::sort(all.begin(), all.end());
    std::vector<WeightRef> out;
    for (std::size_t j = 0; j < k; ++j) out.push_back({all[j].entry, all[j].flat});
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<WeightRef> oracle_local(const ParamStore& store, double fraction) {
    std::vector<WeightRef> out;
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& e = store.at(i);
        if (!e.prunable()) continue;
        std::vector<Key> layer;
        for (std::size_t f = 0; f < e.mask.size(); ++f) {
            if (e.mask[f]) layer.push_back({std::fabs(e.value[f]), i, f});
        }
        if (layer.size() < 2) continue;
        std::sort(layer.begin(), layer.end());
        const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(layer.size())));
        for (std::size_t j = 0; j < k; ++j) out.push_back({layer[j].entry, layer[j].flat});
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline ParamStore random_store(Rng& rng) {
    ParamStore store;
    const std::size_t layers = 1 + rng.below(5);
    std::size_t budget = 1000;
    for (std::size_t l = 0; l < layers && budget > 0; ++l) {
        const std::size_t n = 1 + rng.below(std::min<std::size_t>(budget, 400));
        budget -= n;
        Tensor w(Shape{n, 1});
        // Coarse quantization forces plenty of magnitude ties.
        const bool coarse = rng.uniform() < 0.5;
        for (auto& v : w.data()) {
            const double u = rng.uniform(-1, 1);
            v = static_cast<float>(coarse ? std::round(u * 8) / 8 : u);
        }
        store.add("l" + std::to_string(l) + ".weight", l % 2 ? ParamRole::conv_weight : ParamRole::linear_weight, w);
        if (rng.uniform() < 0.5) store.add("l" + std::to_string(l) + ".bias", ParamRole::bias, Tensor(Shape{n}, 0.0f));
    }
    store.seal();
    for (auto i : store.prunable_indices()) {
        auto& e = store.at(i);
        for (std::size_t k = 0; k < e.mask.size(); ++k) {
            if (rng.uniform() < 0.3) {
                e.mask[k] = 0;
                e.value[k] = 0.0f;
            }
        }
    }
    return store;
}

/// Global and local selections on one random store agree with the references.
inline bool matches_reference(const ParamStore& store, double fraction) {
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(store.prunable_unpruned())));
    return global_threshold(store, fraction).prune == oracle_global(store, k) &&
           local_thresholds(store, fraction).prune == oracle_local(store, fraction);
}

}  // namespace wt::oracle
