#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "wt/dataset.hpp"
#include "wt/error.hpp"
#include "wt/models.hpp"
#include "wt/serialize.hpp"
#include "wt/sha256.hpp"
#include "wt/train.hpp"

namespace wt {

inline constexpr std::uint32_t kTicketVersion = 1;

/// Initialization plus final mask of a pruned run.
struct Ticket {
    ArchSpec spec;
    std::uint64_t seed = 0;
    float sparsity = 0.0f;
    std::vector<NamedTensor> initial;
    std::vector<MaskRecord> masks;
    std::string fingerprint;  // SHA-256 of the source manifest
};

/// Layout: "WTKT", u32 version, arch id, u64 seed, f32 sparsity, WTNS
/// initial-value section, WTMK mask section, then fingerprint and the input
/// shape (u32 channels, height, width).
inline std::vector<std::uint8_t> export_ticket(const Model& model, std::uint64_t seed, const std::string& fingerprint) {
    const auto& store = model.params();
    require(store.sealed(), ErrorKind::state, "export_ticket: model has no initial snapshot");
    ByteWriter w;
    w.raw("WTKT");
    w.u32(kTicketVersion);
    w.str16(to_string(model.spec().arch));
    w.u64(seed);
    w.f32(static_cast<float>(store.sparsity()));
    write_snapshot(w, store, true);
    write_masks(w, store);
    w.str16(fingerprint);
    w.u32(static_cast<std::uint32_t>(model.spec().input.channels));
    w.u32(static_cast<std::uint32_t>(model.spec().input.height));
    w.u32(static_cast<std::uint32_t>(model.spec().input.width));
    return w.take();
}

inline double mask_sparsity(const std::vector<MaskRecord>& masks) {
    std::size_t total = 0, kept = 0;
    for (const auto& m : masks) {
        total += m.bits.size();
        for (auto b : m.bits) kept += b;
    }
    return total == 0 ? 0.0 : 1.0 - static_cast<double>(kept) / static_cast<double>(total);
}

inline Ticket import_ticket(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "ticket");
    r.expect_magic("WTKT");
    const auto version = r.u32();
    if (version != kTicketVersion) fail(ErrorKind::format, "ticket: unsupported version " + std::to_string(version));
    Ticket t;
    const auto arch = r.str16();
    try {
        t.spec.arch = parse_arch(arch);
    } catch (const Error&) {
        fail(ErrorKind::format, "ticket: unknown architecture '" + arch + "'");
    }
    t.seed = r.u64();
    t.sparsity = r.f32();
    t.initial = read_snapshot(r);
    t.masks = read_masks(r);
    t.fingerprint = r.str16();
    t.spec.input.channels = r.u32();
    t.spec.input.height = r.u32();
    t.spec.input.width = r.u32();
    if (!r.done()) fail(ErrorKind::format, "ticket: trailing bytes");
    if (static_cast<float>(mask_sparsity(t.masks)) != t.sparsity) {
        fail(ErrorKind::format, "ticket: header sparsity disagrees with the mask");
    }
    return t;
}

inline void write_ticket(const std::filesystem::path& path, const Model& model, std::uint64_t seed,
                         const std::string& fingerprint) {
    write_file_bytes(path, export_ticket(model, seed, fingerprint));
}

inline Ticket read_ticket(const std::filesystem::path& path) { return import_ticket(read_file_bytes(path)); }

/// Model at theta_0 with the ticket's mask applied (or all-ones when
/// `dense` is set, for the baseline on the same initialization).
inline std::unique_ptr<Model> ticket_model(const Ticket& t, bool dense = false) {
    std::unique_ptr<Model> model;
    try {
        model = build_model(t.spec, t.seed, t.initial);
    } catch (const Error& e) {
        fail(ErrorKind::format, std::string("ticket does not fit its architecture: ") + e.what());
    }
    require(model->params().size() == t.initial.size(), ErrorKind::format,
            "ticket: tensor count does not match architecture " + std::string(to_string(t.spec.arch)));
    for (std::size_t i = 0; i < t.initial.size(); ++i) {
        require(model->params().at(i).name == t.initial[i].name, ErrorKind::format,
                "ticket: entry '" + t.initial[i].name + "' out of place");
    }
    if (!dense) install_masks(model->params(), t.masks);
    return model;
}

struct TransferResult {
    double accuracy = 0.0;  // a2'
    double sparsity = 0.0;
    std::size_t epochs = 0;
    bool diverged = false;
    std::string diagnostic;
};

/// Trains the ticket on a new dataset with its mask frozen. With
/// `trained` set, training starts from those weights (masked) instead of
/// theta_0.
inline TransferResult transfer_train(const Ticket& t, const Dataset& train_data, const Dataset& test_data,
                                     const TrainConfig& cfg, const ParamStore* trained = nullptr) {
    const auto& in = t.spec.input;
    require(train_data.channels == in.channels && train_data.height == in.height && train_data.width == in.width,
            ErrorKind::shape,
            "transfer: dataset images are " + std::to_string(train_data.channels) + "x" +
                std::to_string(train_data.height) + "x" + std::to_string(train_data.width) + ", ticket expects " +
                std::to_string(in.channels) + "x" + std::to_string(in.height) + "x" + std::to_string(in.width));
    auto model = ticket_model(t);
    if (trained) {
        auto& store = model->params();
        require(trained->size() == store.size(), ErrorKind::shape, "transfer: trained weights do not match the ticket");
        for (std::size_t i = 0; i < store.size(); ++i) {
            const auto& src = trained->at(i);
            auto& dst = store.at(i);
            require(src.name == dst.name && src.value.shape() == dst.value.shape(), ErrorKind::shape,
                    "transfer: trained entry '" + src.name + "' does not match '" + dst.name + "'");
            std::copy(src.value.data().begin(), src.value.data().end(), dst.value.data().begin());
            if (dst.prunable()) {
                require(src.mask == dst.mask, ErrorKind::state,
                        "transfer: trained weights carry a different mask for '" + dst.name + "'");
            }
        }
    }
    const double before = model->params().sparsity();
    const auto result = train(*model, train_data, cfg);
    TransferResult out;
    out.epochs = result.epochs;
    out.sparsity = model->params().sparsity();
    require(out.sparsity == before, ErrorKind::internal, "transfer: mask changed during training");
    out.diverged = result.diverged;
    out.diagnostic = result.diagnostic;
    out.accuracy = result.diverged ? 0.0 : evaluate(*model, test_data);
    return out;
}

struct TransferReport {
    double delta = 0.0;
    double retention = 0.0;
    std::size_t params_remaining = 0;
    std::size_t params_total = 0;
};

inline TransferReport transfer_report(double transferred, double base, std::size_t remaining = 0,
                                      std::size_t total = 0) {
    require(transferred >= 0.0 && transferred <= 1.0 && base >= 0.0 && base <= 1.0, ErrorKind::invalid_argument,
            "transfer_report: accuracies must be in [0, 1]");
    require(base > 0.0, ErrorKind::invalid_argument, "transfer_report: base accuracy is zero");
    return {transferred - base, transferred / base, remaining, total};
}

inline TransferReport transfer_report(double transferred, double base, const Ticket& t) {
    std::size_t total = 0, kept = 0;
    for (const auto& m : t.masks) {
        total += m.bits.size();
        for (auto b : m.bits) kept += b;
    }
    return transfer_report(transferred, base, kept, total);
}

}  // namespace wt
