#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wt/error.hpp"
#include "wt/tensor.hpp"

namespace wt {

enum class ParamRole {
    conv_weight,
    linear_weight,
    bias,
    bn_gamma,
    bn_beta,
    bn_running_mean,
    bn_running_var,
};

inline bool is_prunable(ParamRole role) { return role == ParamRole::conv_weight || role == ParamRole::linear_weight; }

inline bool is_trainable(ParamRole role) {
    return role != ParamRole::bn_running_mean && role != ParamRole::bn_running_var;
}

/// A named tensor plus its pruning state. `mask` is populated only for
/// prunable roles; `initial` holds the construction-time values.
struct ParamEntry {
    std::string name;
    ParamRole role;
    Tensor value;
    std::vector<std::uint8_t> mask;
    std::vector<float> initial;

    bool prunable() const { return is_prunable(role); }
    bool trainable() const { return is_trainable(role); }

    std::size_t unpruned() const {
        std::size_t kept = 0;
        for (auto bit : mask) kept += bit;
        return kept;
    }
};

/// Ordered registry of model tensors. Order is insertion order and is part
/// of the on-disk formats, so architectures must register deterministically.
class ParamStore {
   public:
    std::size_t add(std::string name, ParamRole role, Tensor value) {
        if (index_.contains(name)) fail(ErrorKind::internal, "duplicate parameter name '" + name + "'");
        if (sealed_) fail(ErrorKind::state, "cannot add '" + name + "' after the initial snapshot was taken");
        value.set_requires_grad(is_trainable(role));
        ParamEntry entry{std::move(name), role, std::move(value), {}, {}};
        if (entry.prunable()) entry.mask.assign(entry.value.numel(), 1);
        index_.emplace(entry.name, entries_.size());
        entries_.push_back(std::move(entry));
        return entries_.size() - 1;
    }

    /// Records the current values as the initial snapshot. Allowed once.
    void seal() {
        if (sealed_) fail(ErrorKind::state, "initial snapshot already captured");
        for (auto& e : entries_) e.initial.assign(e.value.data().begin(), e.value.data().end());
        sealed_ = true;
    }

    bool sealed() const noexcept { return sealed_; }

    std::size_t size() const noexcept { return entries_.size(); }
    const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
    std::vector<ParamEntry>& entries() noexcept { return entries_; }

    ParamEntry& at(std::size_t i) { return entries_.at(i); }
    const ParamEntry& at(std::size_t i) const { return entries_.at(i); }

    std::optional<std::size_t> find(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    ParamEntry& get(std::string_view name) {
        auto i = find(name);
        if (!i) fail(ErrorKind::invalid_argument, "unknown parameter '" + std::string(name) + "'");
        return entries_[*i];
    }
    const ParamEntry& get(std::string_view name) const { return const_cast<ParamStore*>(this)->get(name); }

    std::vector<std::size_t> prunable_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].prunable()) out.push_back(i);
        }
        return out;
    }

    std::size_t prunable_total() const {
        std::size_t n = 0;
        for (const auto& e : entries_) {
            if (e.prunable()) n += e.value.numel();
        }
        return n;
    }

    std::size_t prunable_unpruned() const {
        std::size_t n = 0;
        for (const auto& e : entries_) {
            if (e.prunable()) n += e.unpruned();
        }
        return n;
    }

    double sparsity() const {
        const auto total = prunable_total();
        if (total == 0) return 0.0;
        return 1.0 - static_cast<double>(prunable_unpruned()) / static_cast<double>(total);
    }

    void zero_grad() {
        for (auto& e : entries_) e.value.zero_grad();
    }

    /// Deep copy: values, masks and the initial snapshot.
    ParamStore clone() const {
        ParamStore out;
        out.entries_.reserve(entries_.size());
        for (const auto& e : entries_) {
            out.entries_.push_back(ParamEntry{e.name, e.role, e.value.clone(), e.mask, e.initial});
        }
        out.index_ = index_;
        out.sealed_ = sealed_;
        return out;
    }

   private:
    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    bool sealed_ = false;
};

}  // namespace wt
