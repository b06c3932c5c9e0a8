#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "wt/error.hpp"
#include "wt/netpbm.hpp"
#include "wt/rng.hpp"
#include "wt/sha256.hpp"
#include "wt/tensor.hpp"

namespace wt {

enum class ArtifactId { seam = 0, checker = 1, noise = 2, tint = 3 };

inline constexpr int kArtifactCount = 4;
inline constexpr int kRealLabel = 0;
inline constexpr int kFakeLabel = 1;
inline constexpr int kNoArtifact = -1;

inline const char* to_string(ArtifactId id) {
    switch (id) {
        case ArtifactId::seam: return "seam";
        case ArtifactId::checker: return "checker";
        case ArtifactId::noise: return "noise";
        case ArtifactId::tint: return "tint";
    }
    return "unknown";
}

inline ArtifactId parse_artifact(std::string_view name) {
    if (name == "seam") return ArtifactId::seam;
    if (name == "checker") return ArtifactId::checker;
    if (name == "noise") return ArtifactId::noise;
    if (name == "tint") return ArtifactId::tint;
    fail(ErrorKind::invalid_argument, "unknown artifact '" + std::string(name) + "'");
}

/// In-memory image classification split. Pixels are float in [0, 1], stored
/// [N, C, H, W].
struct Dataset {
    std::size_t channels = 0, height = 0, width = 0;
    std::vector<float> pixels;
    std::vector<int> labels;
    std::vector<int> artifacts;  // kNoArtifact for real samples
    std::vector<float> amplitudes;

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }
    std::size_t image_elements() const noexcept { return channels * height * width; }

    void append(const Image8& img, int label, int artifact, float amplitude) {
        if (empty() && pixels.empty()) {
            channels = img.channels;
            height = img.height;
            width = img.width;
        } else if (img.channels != channels || img.height != height || img.width != width) {
            fail(ErrorKind::shape, "dataset: image shape differs from the rest of the split");
        }
        const std::size_t plane = height * width;
        const std::size_t base = pixels.size();
        pixels.resize(base + channels * plane);
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                for (std::size_t c = 0; c < channels; ++c) {
                    pixels[base + c * plane + y * width + x] = static_cast<float>(img.at(x, y, c)) / 255.0f;
                }
            }
        }
        labels.push_back(label);
        artifacts.push_back(artifact);
        amplitudes.push_back(amplitude);
    }

    Tensor batch(std::span<const std::size_t> indices) const {
        const std::size_t n = image_elements();
        std::vector<float> values(indices.size() * n);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[i] * n), n,
                        values.begin() + static_cast<std::ptrdiff_t>(i * n));
        }
        return Tensor(Shape{indices.size(), channels, height, width}, std::move(values));
    }

    std::vector<int> batch_labels(std::span<const std::size_t> indices) const {
        std::vector<int> out;
        out.reserve(indices.size());
        for (auto i : indices) out.push_back(labels[i]);
        return out;
    }

    Dataset subset(std::span<const std::size_t> indices) const {
        Dataset out;
        out.channels = channels;
        out.height = height;
        out.width = width;
        const std::size_t n = image_elements();
        out.pixels.reserve(indices.size() * n);
        for (auto i : indices) {
            out.pixels.insert(out.pixels.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * n),
                              pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
            out.labels.push_back(labels[i]);
            out.artifacts.push_back(artifacts[i]);
            out.amplitudes.push_back(amplitudes[i]);
        }
        return out;
    }
};

struct DatasetSplits {
    Dataset train;
    Dataset test;
    std::string fingerprint;  // SHA-256 of the manifest text
};

/// Deterministic permutation of [0, n) for a given (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, 0xE90C0000ULL + epoch));
    shuffle(order.begin(), order.end(), rng);
    return order;
}

struct ManifestRow {
    std::string path;
    std::string split;
    std::string label;
    std::string artifact_id;
    std::string amplitude;
    std::string sha256;
};

inline constexpr std::string_view kManifestHeader = "path,split,label,artifact_id,amplitude,sha256";

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.emplace_back(line.substr(start));
            break;
        }
        fields.emplace_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

inline std::string format_manifest_row(const ManifestRow& r) {
    return r.path + "," + r.split + "," + r.label + "," + r.artifact_id + "," + r.amplitude + "," + r.sha256;
}

inline std::vector<ManifestRow> parse_manifest(std::string_view text) {
    std::vector<ManifestRow> rows;
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader) {
        fail(ErrorKind::format, "manifest.csv: expected header '" + std::string(kManifestHeader) + "'");
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 6) {
            fail(ErrorKind::format, "manifest.csv line " + std::to_string(line_no) + ": expected 6 fields");
        }
        rows.push_back(ManifestRow{f[0], f[1], f[2], f[3], f[4], f[5]});
    }
    return rows;
}

/// Reads a generated dataset directory. Every file is checked against the
/// manifest's SHA-256 column before its pixels are accepted.
inline DatasetSplits load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) fail(ErrorKind::io, "dataset directory '" + dir.string() + "' does not exist");
    const auto manifest_path = dir / "manifest.csv";
    if (!fs::exists(manifest_path)) fail(ErrorKind::io, "dataset '" + dir.string() + "' has no manifest.csv");
    const auto manifest_bytes = read_file_bytes(manifest_path);
    const std::string manifest_text(manifest_bytes.begin(), manifest_bytes.end());
    const auto rows = parse_manifest(manifest_text);
    if (rows.empty()) fail(ErrorKind::format, "dataset '" + dir.string() + "' is empty");

    DatasetSplits out;
    out.fingerprint = sha256_hex(manifest_text);
    for (const auto& row : rows) {
        const auto path = dir / row.path;
        if (!fs::exists(path)) fail(ErrorKind::io, "dataset file missing: " + row.path);
        const auto bytes = read_file_bytes(path);
        if (sha256_hex(bytes) != row.sha256) {
            fail(ErrorKind::format, "manifest checksum disagrees with file " + row.path);
        }
        const Image8 img = decode_pnm(bytes);
        int label = 0;
        if (row.label == "real") {
            label = kRealLabel;
        } else if (row.label == "fake") {
            label = kFakeLabel;
        } else {
            fail(ErrorKind::format, "manifest: bad label '" + row.label + "' for " + row.path);
        }
        int artifact = kNoArtifact;
        float amplitude = 0.0f;
        if (label == kFakeLabel) {
            artifact = static_cast<int>(parse_artifact(row.artifact_id));
            amplitude = std::stof(row.amplitude);
        } else if (!row.artifact_id.empty() || !row.amplitude.empty()) {
            fail(ErrorKind::format, "manifest: real sample " + row.path + " carries artifact metadata");
        }
        if (row.split == "train") {
            out.train.append(img, label, artifact, amplitude);
        } else if (row.split == "test") {
            out.test.append(img, label, artifact, amplitude);
        } else {
            fail(ErrorKind::format, "manifest: bad split '" + row.split + "' for " + row.path);
        }
    }
    return out;
}

}  // namespace wt
