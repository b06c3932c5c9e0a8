#pragma once

#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wt/error.hpp"
#include "wt/sha256.hpp"

namespace wt {

/// 8-bit raster, channels interleaved per pixel (row-major HWC).
struct Image8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;

    Image8() = default;
    Image8(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

    std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
        return pixels[(y * width + x) * channels + c];
    }

    friend bool operator==(const Image8&, const Image8&) = default;
};

/// Binary P5 (1 channel) or P6 (3 channels), maxval 255.
inline std::vector<std::uint8_t> encode_pnm(const Image8& img) {
    if (img.channels != 1 && img.channels != 3) {
        fail(ErrorKind::invalid_argument, "pnm: only 1- or 3-channel images can be encoded");
    }
    const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) +
                               " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

inline Image8 decode_pnm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    auto corrupt = [](const std::string& why) -> Image8 { fail(ErrorKind::format, "corrupt pixmap: " + why); };
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> std::size_t {
        skip_space();
        if (pos >= bytes.size() || !std::isdigit(bytes[pos])) fail(ErrorKind::format, "corrupt pixmap: bad header");
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            if (v > (1u << 24)) fail(ErrorKind::format, "corrupt pixmap: header value too large");
            ++pos;
        }
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        return corrupt("missing P5/P6 magic");
    }
    const std::size_t channels = bytes[1] == '5' ? 1 : 3;
    pos = 2;
    const std::size_t width = read_int();
    const std::size_t height = read_int();
    const std::size_t maxval = read_int();
    if (width == 0 || height == 0) return corrupt("zero extent");
    if (maxval != 255) return corrupt("only maxval 255 is supported");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) return corrupt("missing header terminator");
    ++pos;
    const std::size_t expected = width * height * channels;
    if (bytes.size() - pos != expected) {
        return corrupt("expected " + std::to_string(expected) + " pixel bytes, found " +
                       std::to_string(bytes.size() - pos));
    }
    Image8 img(width, height, channels);
    std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), img.pixels.begin());
    return img;
}

inline void write_pnm(const std::filesystem::path& path, const Image8& img) { write_file_bytes(path, encode_pnm(img)); }

inline Image8 read_pnm(const std::filesystem::path& path) { return decode_pnm(read_file_bytes(path)); }

}  // namespace wt
