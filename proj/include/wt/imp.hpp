#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "wt/dataset.hpp"
#include "wt/models.hpp"
#include "wt/pruning.hpp"
#include "wt/serialize.hpp"
#include "wt/sha256.hpp"
#include "wt/train.hpp"

namespace wt {

struct ImpOptions {
    std::filesystem::path checkpoint_dir;  // empty: no checkpoints
    std::function<void(const RoundRecord&, Model&)> on_round;
    std::function<void(const std::string&)> on_warning;
};

namespace detail {

inline TrainConfig round_config(const TrainConfig& base, const PruneSchedule& s, std::uint64_t seed, std::size_t j) {
    TrainConfig cfg = base;
    cfg.max_epochs = s.epochs_per_round;
    cfg.patience = s.patience;
    cfg.seed = j == 0 ? seed : mix_seed(seed, 0x1A0000 + j);
    return cfg;
}

inline RoundRecord train_round(Model& model, const Dataset& train_data, const Dataset& test_data,
                               const TrainConfig& cfg, std::size_t round, double threshold,
                               const ImpOptions& opts) {
    RoundRecord rec;
    rec.round = round;
    rec.threshold = threshold;
    const auto result = train(model, train_data, cfg);
    rec.epochs = result.epochs;
    rec.sparsity = model.params().sparsity();
    if (result.diverged) {
        rec.diverged = true;
        rec.diagnostic = result.diagnostic;
        rec.accuracy = 0.0;
    } else {
        rec.accuracy = evaluate(model, test_data);
    }
    if (!opts.checkpoint_dir.empty()) {
        std::filesystem::create_directories(opts.checkpoint_dir);
        char name[32];
        std::snprintf(name, sizeof name, "round_%02zu.wtck", round);
        const auto path = opts.checkpoint_dir / name;
        write_file_bytes(path, encode_checkpoint(model.params()));
        rec.checkpoint = path.string();
    }
    if (opts.on_round) opts.on_round(rec, model);
    return rec;
}

inline double prune_step(Model& model, const PruneSchedule& s, double target, const ImpOptions& opts) {
    auto sel = select_for_target(model.params(), s.mode, target);
    for (const auto& w : sel.warnings) {
        if (opts.on_warning) opts.on_warning(w);
    }
    apply_mask_update(model.params(), sel.prune);
    if (s.rewind == RewindMode::to_init) rewind(model.params());
    return sel.alpha;
}

}  // namespace detail

/// Iterative magnitude pruning. Round 0 trains the dense model; every later
/// round prunes to its cumulative target, optionally rewinds, then trains
/// and evaluates. A diverged round ends the run with a diagnostic record.
inline std::vector<RoundRecord> imp_run(Model& model, const Dataset& train_data, const Dataset& test_data,
                                        const PruneSchedule& schedule, const TrainConfig& base, std::uint64_t seed,
                                        const ImpOptions& opts = {}) {
    require(!is_one_shot(schedule.mode), ErrorKind::config, "imp_run: schedule mode must be imp_global or imp_local");
    const auto targets = schedule.cumulative_targets();
    std::vector<RoundRecord> records;
    records.push_back(
        detail::train_round(model, train_data, test_data, detail::round_config(base, schedule, seed, 0), 0, 0.0, opts));
    if (records.back().diverged) return records;
    for (std::size_t j = 1; j <= targets.size(); ++j) {
        const double alpha = detail::prune_step(model, schedule, targets[j - 1], opts);
        records.push_back(detail::train_round(model, train_data, test_data,
                                              detail::round_config(base, schedule, seed, j), j, alpha, opts));
        if (records.back().diverged) break;
    }
    return records;
}

/// Dense training, one mask update to the target, one fine-tune cycle.
inline std::vector<RoundRecord> one_shot_prune(Model& model, const Dataset& train_data, const Dataset& test_data,
                                               const PruneSchedule& schedule, const TrainConfig& base,
                                               std::uint64_t seed, const ImpOptions& opts = {}) {
    require(is_one_shot(schedule.mode), ErrorKind::config,
            "one_shot_prune: schedule mode must be one_shot_global or one_shot_local");
    const auto targets = schedule.cumulative_targets();
    std::vector<RoundRecord> records;
    records.push_back(
        detail::train_round(model, train_data, test_data, detail::round_config(base, schedule, seed, 0), 0, 0.0, opts));
    if (records.back().diverged) return records;
    const double alpha = detail::prune_step(model, schedule, targets.front(), opts);
    records.push_back(detail::train_round(model, train_data, test_data, detail::round_config(base, schedule, seed, 1),
                                          1, alpha, opts));
    return records;
}

/// Either flavour, chosen by the schedule mode.
inline std::vector<RoundRecord> prune_run(Model& model, const Dataset& train_data, const Dataset& test_data,
                                          const PruneSchedule& schedule, const TrainConfig& base, std::uint64_t seed,
                                          const ImpOptions& opts = {}) {
    return is_one_shot(schedule.mode) ? one_shot_prune(model, train_data, test_data, schedule, base, seed, opts)
                                      : imp_run(model, train_data, test_data, schedule, base, seed, opts);
}

/// Record whose sparsity is closest to `target` (earlier round wins ties).
inline const RoundRecord& nearest_record(const std::vector<RoundRecord>& records, double target) {
    require(!records.empty(), ErrorKind::invalid_argument, "nearest_record: no records");
    const RoundRecord* best = &records.front();
    for (const auto& r : records) {
        if (std::fabs(r.sparsity - target) < std::fabs(best->sparsity - target)) best = &r;
    }
    return *best;
}

}  // namespace wt
