#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "wt/error.hpp"
#include "wt/param_store.hpp"

namespace wt {

/// One weight: store entry index and flat offset inside it.
struct WeightRef {
    std::size_t entry = 0;
    std::size_t flat = 0;
    friend bool operator==(const WeightRef&, const WeightRef&) = default;
    friend auto operator<=>(const WeightRef&, const WeightRef&) = default;
};

struct LayerThreshold {
    std::string name;
    float alpha = 0.0f;     // largest pruned magnitude, 0 if nothing pruned
    std::size_t pruned = 0;
    bool skipped = false;
};

struct PruneSelection {
    std::vector<WeightRef> prune;  // sorted by (entry, flat)
    float alpha = 0.0f;            // global: largest pruned magnitude; local: max over layers
    std::vector<LayerThreshold> layers;
    std::vector<std::string> warnings;
};

namespace detail {

struct Candidate {
    float magnitude;
    std::size_t entry;
    std::size_t flat;
    auto key() const { return std::tie(magnitude, entry, flat); }
};

inline std::vector<Candidate> candidates(const ParamStore& store, std::size_t entry) {
    const auto& e = store.at(entry);
    const auto w = e.value.data();
    std::vector<Candidate> out;
    for (std::size_t k = 0; k < w.size(); ++k) {
        if (!e.mask[k]) continue;
        const float m = std::fabs(w[k]);
        if (!std::isfinite(m)) fail(ErrorKind::numeric, "prune: non-finite weight in '" + e.name + "'");
        out.push_back({m, entry, k});
    }
    return out;
}

/// Moves the k smallest (by magnitude, entry, flat) to the front, sorted.
inline void select_smallest(std::vector<Candidate>& pool, std::size_t k) {
    auto less = [](const Candidate& a, const Candidate& b) { return a.key() < b.key(); };
    if (k < pool.size()) std::nth_element(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end(), less);
    std::sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k), less);
}

inline void finish(PruneSelection& sel) {
    std::sort(sel.prune.begin(), sel.prune.end());
}

inline std::size_t round_count(double x) { return static_cast<std::size_t>(std::llround(x)); }

inline void check_fraction(double fraction, std::string_view op) {
    require(fraction > 0.0 && fraction < 1.0, ErrorKind::invalid_argument,
            std::string(op) + ": fraction must be in (0, 1), got " + std::to_string(fraction));
}

}  // namespace detail

/// Pools all unpruned prunable weights and selects exactly `k` smallest.
inline PruneSelection global_select(const ParamStore& store, std::size_t k) {
    std::vector<detail::Candidate> pool;
    for (auto i : store.prunable_indices()) {
        auto c = detail::candidates(store, i);
        pool.insert(pool.end(), c.begin(), c.end());
    }
    require(k <= pool.size(), ErrorKind::invalid_argument,
            "global prune of " + std::to_string(k) + " weights but only " + std::to_string(pool.size()) + " remain");
    detail::select_smallest(pool, k);
    PruneSelection sel;
    std::vector<std::size_t> per_entry(store.size(), 0);
    for (std::size_t i = 0; i < k; ++i) {
        sel.prune.push_back({pool[i].entry, pool[i].flat});
        sel.alpha = std::max(sel.alpha, pool[i].magnitude);
        ++per_entry[pool[i].entry];
    }
    for (auto i : store.prunable_indices()) {
        const auto& e = store.at(i);
        LayerThreshold lt{e.name, 0.0f, per_entry[i], false};
        if (per_entry[i] > 0 && per_entry[i] == e.unpruned()) {
            sel.warnings.push_back("global pruning empties layer '" + e.name + "'");
        }
        sel.layers.push_back(std::move(lt));
    }
    detail::finish(sel);
    return sel;
}

/// Prunes round(fraction * unpruned) of the pooled weights.
inline PruneSelection global_threshold(const ParamStore& store, double fraction) {
    detail::check_fraction(fraction, "global_threshold");
    return global_select(store, detail::round_count(fraction * static_cast<double>(store.prunable_unpruned())));
}

/// Per-layer selection with explicit counts (indexed like prunable_indices()).
inline PruneSelection local_select(const ParamStore& store, std::span<const std::size_t> counts) {
    const auto idx = store.prunable_indices();
    require(counts.size() == idx.size(), ErrorKind::invalid_argument, "local_select: one count per prunable layer");
    PruneSelection sel;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const auto& e = store.at(idx[j]);
        LayerThreshold lt{e.name, 0.0f, 0, false};
        auto pool = detail::candidates(store, idx[j]);
        require(counts[j] <= pool.size(), ErrorKind::invalid_argument,
                "local prune of " + std::to_string(counts[j]) + " weights in '" + e.name + "' but only " +
                    std::to_string(pool.size()) + " remain");
        detail::select_smallest(pool, counts[j]);
        for (std::size_t i = 0; i < counts[j]; ++i) {
            sel.prune.push_back({pool[i].entry, pool[i].flat});
            lt.alpha = std::max(lt.alpha, pool[i].magnitude);
        }
        lt.pruned = counts[j];
        sel.alpha = std::max(sel.alpha, lt.alpha);
        sel.layers.push_back(std::move(lt));
    }
    detail::finish(sel);
    return sel;
}

/// Each layer prunes round(fraction * its unpruned count). Layers with fewer
/// than two unpruned weights are skipped with a warning.
inline PruneSelection local_thresholds(const ParamStore& store, double fraction) {
    detail::check_fraction(fraction, "local_thresholds");
    const auto idx = store.prunable_indices();
    std::vector<std::size_t> counts;
    std::vector<std::string> skipped;
    for (auto i : idx) {
        const auto u = store.at(i).unpruned();
        if (u < 2) {
            counts.push_back(0);
            skipped.push_back(store.at(i).name);
            continue;
        }
        counts.push_back(detail::round_count(fraction * static_cast<double>(u)));
    }
    auto sel = local_select(store, counts);
    for (std::size_t j = 0; j < idx.size(); ++j) {
        if (std::find(skipped.begin(), skipped.end(), sel.layers[j].name) != skipped.end()) {
            sel.layers[j].skipped = true;
            sel.warnings.push_back("local pruning skips layer '" + sel.layers[j].name + "' (fewer than 2 unpruned)");
        }
    }
    return sel;
}

/// Number of additional weights to prune so that global sparsity becomes
/// round(target * N) / N.
inline std::size_t prune_count_for_target(const ParamStore& store, double target) {
    require(target >= 0.0 && target < 1.0, ErrorKind::invalid_argument, "target sparsity must be in [0, 1)");
    const auto total = store.prunable_total();
    const auto pruned = total - store.prunable_unpruned();
    const auto goal = detail::round_count(target * static_cast<double>(total));
    require(goal >= pruned, ErrorKind::state,
            "target sparsity " + std::to_string(target) + " is below the current sparsity " +
                std::to_string(store.sparsity()));
    return goal - pruned;
}

inline PruneSelection global_to_target(const ParamStore& store, double target) {
    return global_select(store, prune_count_for_target(store, target));
}

/// Layer-wise pruning that still lands exactly on the global target: the
/// total count is apportioned in proportion to each layer's unpruned count
/// (largest remainder, ties to the lower layer index).
inline PruneSelection local_to_target(const ParamStore& store, double target) {
    const std::size_t k = prune_count_for_target(store, target);
    const auto idx = store.prunable_indices();
    const auto remaining = static_cast<double>(store.prunable_unpruned());
    std::vector<std::size_t> counts(idx.size(), 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const double quota = static_cast<double>(k) * static_cast<double>(store.at(idx[j]).unpruned()) / remaining;
        counts[j] = static_cast<std::size_t>(std::floor(quota));
        assigned += counts[j];
        remainders.push_back({quota - std::floor(quota), j});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < k; ++r) {
        const auto j = remainders[r % remainders.size()].second;
        if (counts[j] < store.at(idx[j]).unpruned()) {
            ++counts[j];
            ++assigned;
        }
    }
    return local_select(store, counts);
}

/// Clears mask bits and zeroes the weights. Masks only ever lose bits.
inline void apply_mask_update(ParamStore& store, std::span<const WeightRef> prune) {
    for (const auto& ref : prune) {
        require(ref.entry < store.size() && store.at(ref.entry).prunable(), ErrorKind::internal,
                "apply_mask_update: entry " + std::to_string(ref.entry) + " is not prunable");
        const auto& e = store.at(ref.entry);
        require(ref.flat < e.mask.size(), ErrorKind::internal,
                "apply_mask_update: index " + std::to_string(ref.flat) + " out of range for '" + e.name + "'");
        require(e.mask[ref.flat] == 1, ErrorKind::internal,
                "apply_mask_update: weight " + std::to_string(ref.flat) + " of '" + e.name + "' is already pruned");
    }
    for (const auto& ref : prune) {
        auto& e = store.at(ref.entry);
        e.mask[ref.flat] = 0;
        e.value.data()[ref.flat] = 0.0f;
    }
}

/// Resets every tensor (batch-norm buffers included) to its initial value,
/// then zeroes masked weights.
inline void rewind(ParamStore& store) {
    require(store.sealed(), ErrorKind::state, "rewind: no initial snapshot");
    for (auto& e : store.entries()) {
        auto w = e.value.data();
        std::copy(e.initial.begin(), e.initial.end(), w.begin());
        if (e.prunable()) {
            for (std::size_t k = 0; k < w.size(); ++k) {
                if (!e.mask[k]) w[k] = 0.0f;
            }
        }
        e.value.drop_grad();
    }
}

enum class PruneMode { imp_global, imp_local, one_shot_global, one_shot_local };
enum class RewindMode { none, to_init };

inline const char* to_string(PruneMode m) {
    switch (m) {
        case PruneMode::imp_global: return "imp_global";
        case PruneMode::imp_local: return "imp_local";
        case PruneMode::one_shot_global: return "one_shot_global";
        case PruneMode::one_shot_local: return "one_shot_local";
    }
    return "unknown";
}

inline PruneMode parse_prune_mode(std::string_view s) {
    if (s == "imp_global") return PruneMode::imp_global;
    if (s == "imp_local") return PruneMode::imp_local;
    if (s == "one_shot_global") return PruneMode::one_shot_global;
    if (s == "one_shot_local") return PruneMode::one_shot_local;
    fail(ErrorKind::config, "unknown schedule mode '" + std::string(s) + "'");
}

inline const char* to_string(RewindMode m) { return m == RewindMode::none ? "none" : "to_init"; }

inline RewindMode parse_rewind(std::string_view s) {
    if (s == "none") return RewindMode::none;
    if (s == "to_init") return RewindMode::to_init;
    fail(ErrorKind::config, "unknown rewind mode '" + std::string(s) + "'");
}

inline bool is_one_shot(PruneMode m) { return m == PruneMode::one_shot_global || m == PruneMode::one_shot_local; }
inline bool is_local(PruneMode m) { return m == PruneMode::imp_local || m == PruneMode::one_shot_local; }

struct PruneSchedule {
    PruneMode mode = PruneMode::imp_global;
    std::size_t rounds = 8;
    double fraction = 0.2;
    std::vector<double> targets;  // explicit cumulative sparsities; overrides rounds/fraction
    double one_shot_target = 0.8;
    RewindMode rewind = RewindMode::none;
    std::size_t epochs_per_round = 10;
    std::size_t patience = 10;

    void validate() const {
        if (is_one_shot(mode)) {
            require(one_shot_target > 0.0 && one_shot_target < 1.0, ErrorKind::config,
                    "schedule: one-shot target must be in (0, 1)");
        } else if (!targets.empty()) {
            double prev = 0.0;
            for (double t : targets) {
                require(t > prev && t <= 0.99, ErrorKind::config,
                        "schedule: explicit targets must be strictly increasing in (0, 0.99]");
                prev = t;
            }
        } else {
            require(rounds >= 1, ErrorKind::config, "schedule: rounds must be at least 1");
            require(fraction > 0.0 && fraction < 1.0, ErrorKind::config, "schedule: fraction must be in (0, 1)");
        }
        require(epochs_per_round >= 1, ErrorKind::config, "schedule: epochs_per_round must be at least 1");
        require(patience >= 1, ErrorKind::config, "schedule: patience must be at least 1");
    }

    /// Cumulative sparsity after each pruning round (one-shot: a single entry).
    std::vector<double> cumulative_targets() const {
        validate();
        if (is_one_shot(mode)) return {one_shot_target};
        if (!targets.empty()) return targets;
        std::vector<double> out;
        for (std::size_t j = 1; j <= rounds; ++j) out.push_back(1.0 - std::pow(1.0 - fraction, static_cast<double>(j)));
        return out;
    }
};

struct RoundRecord {
    std::size_t round = 0;
    double sparsity = 0.0;
    double threshold = 0.0;
    double accuracy = 0.0;
    std::size_t epochs = 0;
    std::string checkpoint;
    bool diverged = false;
    std::string diagnostic;
};

/// Prunes to the cumulative target with the schedule's criterion.
inline PruneSelection select_for_target(const ParamStore& store, PruneMode mode, double target) {
    return is_local(mode) ? local_to_target(store, target) : global_to_target(store, target);
}

}  // namespace wt
