#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wt/error.hpp"
#include "wt/models.hpp"
#include "wt/param_store.hpp"

namespace wt {

/// Little-endian byte sink.
class ByteWriter {
   public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    void raw(std::span<const std::uint8_t> s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    void str16(std::string_view s) {
        require(s.size() <= 0xFFFF, ErrorKind::invalid_argument, "string too long to serialize");
        u16(static_cast<std::uint16_t>(s.size()));
        raw(s);
    }

    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

   private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked little-endian reader; every overrun is a format error.
class ByteReader {
   public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::span<const std::uint8_t> raw(std::size_t n) {
        need(n);
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }
    std::string str16() {
        const auto n = u16();
        auto r = raw(n);
        return std::string(r.begin(), r.end());
    }
    void expect_magic(std::string_view magic) {
        auto r = raw(magic.size());
        if (std::string_view(reinterpret_cast<const char*>(r.data()), r.size()) != magic) {
            fail(ErrorKind::format, what_ + ": bad magic, expected '" + std::string(magic) + "'");
        }
    }
    bool done() const noexcept { return pos_ == bytes_.size(); }
    std::size_t position() const noexcept { return pos_; }
    const std::string& what() const noexcept { return what_; }

   private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) fail(ErrorKind::format, what_ + ": truncated at byte " + std::to_string(pos_));
    }
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::string what_;
};

inline constexpr std::uint32_t kSnapshotVersion = 1;
inline constexpr std::uint32_t kMaskVersion = 1;

/// WTNS section: u32 version, u32 count, then per tensor u16 name length,
/// name, u8 rank, u32 extents, f32 values.
inline void write_snapshot(ByteWriter& w, const ParamStore& store, bool initial) {
    w.raw("WTNS");
    w.u32(kSnapshotVersion);
    w.u32(static_cast<std::uint32_t>(store.size()));
    for (const auto& e : store.entries()) {
        w.str16(e.name);
        const auto& shape = e.value.shape();
        w.u8(static_cast<std::uint8_t>(shape.size()));
        for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
        if (initial) {
            require(store.sealed(), ErrorKind::state, "snapshot: store has no initial values");
            for (float v : e.initial) w.f32(v);
        } else {
            for (float v : e.value.data()) w.f32(v);
        }
    }
}

inline std::vector<NamedTensor> read_snapshot(ByteReader& r) {
    r.expect_magic("WTNS");
    const auto version = r.u32();
    if (version != kSnapshotVersion) {
        fail(ErrorKind::format, r.what() + ": unsupported snapshot version " + std::to_string(version));
    }
    const auto count = r.u32();
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.str16();
        const auto rank = r.u8();
        if (rank == 0 || rank > 8) fail(ErrorKind::format, r.what() + ": bad rank for '" + t.name + "'");
        std::size_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            const auto d = r.u32();
            if (d == 0 || d > (1u << 24)) fail(ErrorKind::format, r.what() + ": bad extent for '" + t.name + "'");
            t.shape.push_back(d);
            n *= d;
            if (n > (1u << 28)) fail(ErrorKind::format, r.what() + ": tensor '" + t.name + "' too large");
        }
        t.values.resize(n);
        for (auto& v : t.values) v = r.f32();
        out.push_back(std::move(t));
    }
    return out;
}

struct MaskRecord {
    std::string name;
    std::vector<std::uint8_t> bits;  // one byte per weight, 0 or 1
};

/// WTMK section: u32 version, u32 count, then per prunable tensor u16 name
/// length, name, u32 bit count, LSB-first packed bits.
inline void write_masks(ByteWriter& w, const ParamStore& store) {
    w.raw("WTMK");
    w.u32(kMaskVersion);
    const auto idx = store.prunable_indices();
    w.u32(static_cast<std::uint32_t>(idx.size()));
    for (auto i : idx) {
        const auto& e = store.at(i);
        w.str16(e.name);
        w.u32(static_cast<std::uint32_t>(e.mask.size()));
        std::vector<std::uint8_t> packed((e.mask.size() + 7) / 8, 0);
        for (std::size_t k = 0; k < e.mask.size(); ++k) {
            if (e.mask[k]) packed[k / 8] |= static_cast<std::uint8_t>(1u << (k % 8));
        }
        w.raw(packed);
    }
}

inline std::vector<MaskRecord> read_masks(ByteReader& r) {
    r.expect_magic("WTMK");
    const auto version = r.u32();
    if (version != kMaskVersion) fail(ErrorKind::format, r.what() + ": unsupported mask version " + std::to_string(version));
    const auto count = r.u32();
    std::vector<MaskRecord> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        MaskRecord m;
        m.name = r.str16();
        const auto bits = r.u32();
        if (bits > (1u << 28)) fail(ErrorKind::format, r.what() + ": mask '" + m.name + "' too large");
        const auto packed = r.raw((bits + 7) / 8);
        m.bits.resize(bits);
        for (std::size_t k = 0; k < bits; ++k) m.bits[k] = (packed[k / 8] >> (k % 8)) & 1u;
        for (std::size_t k = bits; k < packed.size() * 8; ++k) {
            if ((packed[k / 8] >> (k % 8)) & 1u) fail(ErrorKind::format, r.what() + ": nonzero padding bits in mask '" + m.name + "'");
        }
        out.push_back(std::move(m));
    }
    return out;
}

/// Installs masks onto a store (names and sizes must match exactly) and
/// zeroes the masked values.
inline void install_masks(ParamStore& store, std::span<const MaskRecord> masks) {
    const auto idx = store.prunable_indices();
    require(masks.size() == idx.size(), ErrorKind::format,
            "mask section has " + std::to_string(masks.size()) + " entries, model has " + std::to_string(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
        auto& e = store.at(idx[j]);
        require(masks[j].name == e.name, ErrorKind::format,
                "mask entry '" + masks[j].name + "' where '" + e.name + "' was expected");
        require(masks[j].bits.size() == e.mask.size(), ErrorKind::format,
                "mask '" + e.name + "' has " + std::to_string(masks[j].bits.size()) + " bits, expected " +
                    std::to_string(e.mask.size()));
        e.mask = masks[j].bits;
        auto w = e.value.data();
        for (std::size_t k = 0; k < w.size(); ++k) {
            if (!e.mask[k]) w[k] = 0.0f;
        }
    }
}

/// Checkpoint file: current-value WTNS section followed by the mask section.
inline std::vector<std::uint8_t> encode_checkpoint(const ParamStore& store) {
    ByteWriter w;
    write_snapshot(w, store, false);
    write_masks(w, store);
    return w.take();
}

/// Restores values and masks from a checkpoint into a store of the same
/// architecture. The store's initial snapshot is untouched.
inline void decode_checkpoint(std::span<const std::uint8_t> bytes, ParamStore& store) {
    ByteReader r(bytes, "checkpoint");
    const auto tensors = read_snapshot(r);
    const auto masks = read_masks(r);
    if (!r.done()) fail(ErrorKind::format, "checkpoint: trailing bytes");
    require(tensors.size() == store.size(), ErrorKind::format, "checkpoint: tensor count does not match the model");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        auto& e = store.at(i);
        const auto& t = tensors[i];
        require(t.name == e.name && t.shape == e.value.shape(), ErrorKind::format,
                "checkpoint: entry '" + t.name + "' does not match model entry '" + e.name + "'");
        std::copy(t.values.begin(), t.values.end(), e.value.data().begin());
    }
    install_masks(store, masks);
}

}  // namespace wt
