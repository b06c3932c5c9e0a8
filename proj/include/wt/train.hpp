#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "wt/adam.hpp"
#include "wt/dataset.hpp"
#include "wt/error.hpp"
#include "wt/models.hpp"
#include "wt/ops.hpp"
#include "wt/rng.hpp"

namespace wt {

struct TrainConfig {
    double lr = 1e-4;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 10;
    std::size_t patience = 10;
    double val_fraction = 0.1;  // 0 disables early stopping
    std::uint64_t seed = 1;

    void validate() const {
        require(std::isfinite(lr) && lr > 0.0, ErrorKind::config, "train: lr must be positive");
        require(batch_size >= 2, ErrorKind::config, "train: batch_size must be at least 2");
        require(max_epochs >= 1, ErrorKind::config, "train: max_epochs must be at least 1");
        require(patience >= 1, ErrorKind::config, "train: patience must be at least 1");
        require(val_fraction >= 0.0 && val_fraction < 0.5, ErrorKind::config, "train: val_fraction must be in [0, 0.5)");
    }
};

struct TrainResult {
    std::size_t epochs = 0;
    double last_train_loss = 0.0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    bool diverged = false;
    std::string diagnostic;
};

inline double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    require(predictions.size() == labels.size(), ErrorKind::invalid_argument,
            "accuracy: " + std::to_string(predictions.size()) + " predictions for " + std::to_string(labels.size()) +
                " labels");
    require(!labels.empty(), ErrorKind::invalid_argument, "accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Eval-mode predictions (argmax, ties to class 0) for the given indices.
inline std::vector<int> predict(Model& model, const Dataset& data, std::span<const std::size_t> indices,
                                std::size_t batch_size = 128) {
    NoGradGuard guard;
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
        const Tensor logits = model.forward(data.batch(chunk), false);
        const std::size_t classes = logits.dim(1);
        const auto v = logits.data();
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < classes; ++c) {
                if (v[i * classes + c] > v[i * classes + best]) best = c;
            }
            out.push_back(static_cast<int>(best));
        }
    }
    return out;
}

inline std::vector<std::size_t> all_indices(const Dataset& data) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

inline std::vector<int> predict(Model& model, const Dataset& data) {
    const auto idx = all_indices(data);
    return predict(model, data, idx);
}

inline double evaluate(Model& model, const Dataset& data) {
    require(!data.empty(), ErrorKind::invalid_argument, "evaluate: empty dataset");
    const auto pred = predict(model, data);
    return accuracy(pred, data.labels);
}

/// Mean cross-entropy in eval mode.
inline double mean_loss(Model& model, const Dataset& data, std::span<const std::size_t> indices,
                        std::size_t batch_size = 128) {
    NoGradGuard guard;
    double total = 0.0;
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
        const auto labels = data.batch_labels(chunk);
        const Tensor loss = softmax_cross_entropy(model.forward(data.batch(chunk), false), labels);
        total += static_cast<double>(loss.item()) * static_cast<double>(chunk.size());
    }
    return total / static_cast<double>(indices.size());
}

/// Seeded split of the training set into (fit, validation) index lists.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> validation_split(std::size_t n,
                                                                                      double val_fraction,
                                                                                      std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, 0x5A11D));
    shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
    std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> fit(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val.begin(), val.end());
    std::sort(fit.begin(), fit.end());
    return {fit, val};
}

using EpochHook = std::function<void(std::size_t epoch, double train_loss, double val_loss)>;

/// Masked Adam training with early stopping on held-out validation loss.
/// Optimizer state starts fresh on every call. A non-finite loss stops
/// training and is reported through `diverged`.
inline TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg, const EpochHook& on_epoch = {}) {
    cfg.validate();
    require(!data.empty(), ErrorKind::invalid_argument, "train: empty training set");
    auto [fit, val] = validation_split(data.size(), cfg.val_fraction, cfg.seed);
    require(fit.size() >= 2, ErrorKind::invalid_argument, "train: too few training samples");

    AdamOptions opts;
    opts.lr = cfg.lr;
    AdamState adam(model.params(), opts);
    TrainResult result;
    std::size_t stale = 0;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto order = epoch_order(fit.size(), cfg.seed, epoch);
        std::vector<std::size_t> batch_idx;
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            if (end - start < 2) break;  // batch norm needs two samples
            batch_idx.clear();
            for (std::size_t i = start; i < end; ++i) batch_idx.push_back(fit[order[i]]);
            const auto labels = data.batch_labels(batch_idx);
            model.params().zero_grad();
            Tensor loss = softmax_cross_entropy(model.forward(data.batch(batch_idx), true), labels);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                Tape::current().clear();
                result.diverged = true;
                result.diagnostic = "non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                    std::to_string(start / cfg.batch_size);
                result.epochs = epoch + 1;
                return result;
            }
            backward(loss);
            adam_step(model.params(), adam);
            epoch_loss += value * static_cast<double>(end - start);
        }
        result.epochs = epoch + 1;
        result.last_train_loss = epoch_loss / static_cast<double>(order.size());
        if (val.empty()) {
            if (on_epoch) on_epoch(epoch, result.last_train_loss, std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        const double vl = mean_loss(model, data, val);
        if (on_epoch) on_epoch(epoch, result.last_train_loss, vl);
        if (!std::isfinite(vl)) {
            result.diverged = true;
            result.diagnostic = "non-finite validation loss at epoch " + std::to_string(epoch + 1);
            return result;
        }
        if (vl < result.best_val_loss) {
            result.best_val_loss = vl;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            break;
        }
    }
    return result;
}

}  // namespace wt
