#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "wt/dataset.hpp"
#include "wt/error.hpp"
#include "wt/netpbm.hpp"
#include "wt/rng.hpp"
#include "wt/sha256.hpp"

namespace wt {

struct ArtifactSpec {
    ArtifactId id = ArtifactId::seam;
    double weight = 1.0;
    double amp_lo = 0.3;
    double amp_hi = 0.5;
};

struct SynthConfig {
    std::size_t image_size = 64;
    std::size_t channels = 3;
    std::size_t train_samples = 8000;
    std::size_t test_samples = 2000;
    std::vector<ArtifactSpec> artifacts = {
        {ArtifactId::seam, 1.0, 0.3, 0.5},
        {ArtifactId::checker, 1.0, 0.3, 0.5},
        {ArtifactId::noise, 1.0, 0.3, 0.5},
        {ArtifactId::tint, 1.0, 0.3, 0.5},
    };
    std::uint64_t seed = 1;

    void validate() const {
        require(image_size == 32 || image_size == 64, ErrorKind::config, "synth: image_size must be 32 or 64");
        require(channels == 1 || channels == 3, ErrorKind::config, "synth: channels must be 1 or 3");
        require(train_samples > 0 && test_samples > 0, ErrorKind::config, "synth: zero samples requested");
        require(train_samples % 2 == 0 && test_samples % 2 == 0, ErrorKind::config,
                "synth: sample counts must be even (one real and one fake per base image)");
        require(!artifacts.empty(), ErrorKind::config, "synth: artifact catalog is empty");
        std::vector<int> seen;
        for (const auto& a : artifacts) {
            require(std::isfinite(a.weight) && a.weight > 0.0, ErrorKind::config,
                    std::string("synth: weight for '") + to_string(a.id) + "' must be positive");
            require(std::isfinite(a.amp_lo) && std::isfinite(a.amp_hi) && a.amp_lo >= 0.0 && a.amp_lo <= a.amp_hi &&
                        a.amp_hi <= 1.0,
                    ErrorKind::config,
                    std::string("synth: amplitude range for '") + to_string(a.id) + "' must satisfy 0<=lo<=hi<=1");
            require(std::find(seen.begin(), seen.end(), static_cast<int>(a.id)) == seen.end(), ErrorKind::config,
                    std::string("synth: artifact '") + to_string(a.id) + "' listed twice");
            seen.push_back(static_cast<int>(a.id));
        }
    }

    /// Normalized distribution over the catalog order.
    std::vector<double> frequencies() const {
        double total = 0.0;
        for (const auto& a : artifacts) total += a.weight;
        std::vector<double> out;
        for (const auto& a : artifacts) out.push_back(a.weight / total);
        return out;
    }
};

/// Rectangle [x0, x1) x [y0, y1).
struct Region {
    std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool contains(std::size_t x, std::size_t y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

/// Unquantized image, HWC, values nominally in [0, 1].
struct FloatImage {
    std::size_t width = 0, height = 0, channels = 0;
    std::vector<double> v;
    FloatImage(std::size_t w, std::size_t h, std::size_t c) : width(w), height(h), channels(c), v(w * h * c, 0.0) {}
    double& at(std::size_t x, std::size_t y, std::size_t c) { return v[(y * width + x) * channels + c]; }
};

inline Image8 quantize(const FloatImage& f) {
    Image8 img(f.width, f.height, f.channels);
    for (std::size_t i = 0; i < f.v.size(); ++i) {
        const double c = std::clamp(f.v[i], 0.0, 1.0);
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(c * 255.0));
    }
    return img;
}

/// Face-like composition: background gradient, soft ellipse, two eye blobs,
/// light sensor noise. All jitter comes from `rng`.
inline FloatImage synth_base(std::size_t size, std::size_t channels, Rng& rng) {
    FloatImage img(size, size, channels);
    const double s = static_cast<double>(size);
    double bg[3], gx[3], gy[3], skin[3];
    for (int c = 0; c < 3; ++c) {
        bg[c] = rng.uniform(0.15, 0.55);
        gx[c] = rng.uniform(-0.25, 0.25);
        gy[c] = rng.uniform(-0.25, 0.25);
    }
    const double tone = rng.uniform(0.45, 0.8);
    skin[0] = tone + 0.1;
    skin[1] = tone * 0.85;
    skin[2] = tone * 0.7;
    const double cx = s * rng.uniform(0.42, 0.58), cy = s * rng.uniform(0.42, 0.58);
    const double rx = s * rng.uniform(0.24, 0.32), ry = s * rng.uniform(0.30, 0.40);
    const double eye_dx = rx * rng.uniform(0.35, 0.5), eye_y = cy - ry * rng.uniform(0.2, 0.35);
    const double eye_sigma = s * rng.uniform(0.03, 0.05);
    const double eye_depth = rng.uniform(0.3, 0.5);

    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double u = static_cast<double>(x) / s - 0.5, w = static_cast<double>(y) / s - 0.5;
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            const double ex = (px - cx) / rx, ey = (py - cy) / ry;
            const double r = std::sqrt(ex * ex + ey * ey);
            const double face = 1.0 / (1.0 + std::exp((r - 1.0) * 12.0));
            double eyes = 0.0;
            for (double side : {-1.0, 1.0}) {
                const double dx = px - (cx + side * eye_dx), dy = py - eye_y;
                eyes += std::exp(-(dx * dx + dy * dy) / (2.0 * eye_sigma * eye_sigma));
            }
            eyes = std::min(eyes, 1.0) * face;
            double rgb[3];
            for (int c = 0; c < 3; ++c) {
                const double back = bg[c] + gx[c] * u + gy[c] * w;
                rgb[c] = (1.0 - face) * back + face * skin[c] - eye_depth * eyes;
            }
            if (channels == 1) {
                img.at(x, y, 0) = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2] + 0.01 * rng.normal();
            } else {
                for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = rgb[c] + 0.01 * rng.normal();
            }
        }
    }
    return img;
}

/// Region an artifact of this type occupies when anchored at (ax, ay).
inline Region artifact_region(ArtifactId id, std::size_t size, std::size_t ax, std::size_t ay) {
    if (id == ArtifactId::seam) {
        const std::size_t h = std::max<std::size_t>(2, size / 16);
        return {ax, ay, ax + size / 2, ay + h};
    }
    return {ax, ay, ax + size / 4, ay + size / 4};
}

/// Adds one artifact in place and returns where it went.
inline Region apply_artifact(FloatImage& img, ArtifactId id, double amplitude, Rng& rng) {
    const std::size_t size = img.width;
    const Region probe = artifact_region(id, size, 0, 0);
    const std::size_t ax = rng.below(size - probe.x1 + 1);
    const std::size_t ay = rng.below(size - probe.y1 + 1);
    const Region r = artifact_region(id, size, ax, ay);
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const std::size_t tint_channel = img.channels == 1 ? 0 : rng.below(img.channels);
    for (std::size_t y = r.y0; y < r.y1; ++y) {
        for (std::size_t x = r.x0; x < r.x1; ++x) {
            switch (id) {
                case ArtifactId::seam:
                    for (std::size_t c = 0; c < img.channels; ++c) img.at(x, y, c) += sign * amplitude;
                    break;
                case ArtifactId::checker: {
                    const double d = ((x + y) % 2 == 0) ? amplitude : -amplitude;
                    for (std::size_t c = 0; c < img.channels; ++c) img.at(x, y, c) += d;
                    break;
                }
                case ArtifactId::noise:
                    for (std::size_t c = 0; c < img.channels; ++c) img.at(x, y, c) += amplitude * rng.normal();
                    break;
                case ArtifactId::tint:
                    img.at(x, y, tint_channel) += sign * amplitude;
                    break;
            }
        }
    }
    return r;
}

struct SynthSample {
    std::string split;
    std::size_t index = 0;  // pair index within the split
    Image8 real;
    Image8 fake;
    ArtifactId artifact = ArtifactId::seam;
    double amplitude = 0.0;
    Region region;
};

/// Pair p of a split: a real base image and its manipulated twin. The RNG
/// stream depends only on (seed, split, p), so pairs can be produced in any
/// order.
inline SynthSample synth_pair(const SynthConfig& cfg, const std::string& split, std::size_t p) {
    const std::uint64_t split_tag = split == "train" ? 1 : 2;
    Rng rng(mix_seed(mix_seed(cfg.seed, split_tag), p));
    FloatImage base = synth_base(cfg.image_size, cfg.channels, rng);
    SynthSample s;
    s.split = split;
    s.index = p;
    s.real = quantize(base);

    const auto freq = cfg.frequencies();
    double u = rng.uniform();
    std::size_t k = 0;
    while (k + 1 < freq.size() && u >= freq[k]) {
        u -= freq[k];
        ++k;
    }
    const ArtifactSpec& spec = cfg.artifacts[k];
    s.artifact = spec.id;
    s.amplitude = spec.amp_lo == spec.amp_hi ? spec.amp_lo : rng.uniform(spec.amp_lo, spec.amp_hi);
    s.region = apply_artifact(base, spec.id, s.amplitude, rng);
    s.fake = quantize(base);
    return s;
}

inline std::string format_amplitude(double a) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", a);
    return buf;
}

/// Walks every pair in manifest order: train then test, real before fake.
inline void synth_visit(const SynthConfig& cfg, const std::function<void(const SynthSample&)>& visit) {
    cfg.validate();
    for (const auto& [split, n] : {std::pair<std::string, std::size_t>{"train", cfg.train_samples},
                                   std::pair<std::string, std::size_t>{"test", cfg.test_samples}}) {
        for (std::size_t p = 0; p < n / 2; ++p) visit(synth_pair(cfg, split, p));
    }
}

inline std::string sample_path(const std::string& split, bool fake, std::size_t index, std::size_t channels) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.%s", index, channels == 1 ? "pgm" : "ppm");
    return split + (fake ? "/fake/" : "/real/") + name;
}

/// Builds the same dataset that synth_generate would write, without disk I/O.
inline DatasetSplits synth_build(const SynthConfig& cfg) {
    DatasetSplits out;
    std::string manifest = std::string(kManifestHeader) + "\n";
    synth_visit(cfg, [&](const SynthSample& s) {
        Dataset& d = s.split == "train" ? out.train : out.test;
        const std::string amp = format_amplitude(s.amplitude);
        d.append(s.real, kRealLabel, kNoArtifact, 0.0f);
        d.append(s.fake, kFakeLabel, static_cast<int>(s.artifact), std::stof(amp));
        manifest += format_manifest_row({sample_path(s.split, false, s.index, cfg.channels), s.split, "real", "", "",
                                         sha256_hex(encode_pnm(s.real))}) +
                    "\n";
        manifest += format_manifest_row({sample_path(s.split, true, s.index, cfg.channels), s.split, "fake",
                                         to_string(s.artifact), amp, sha256_hex(encode_pnm(s.fake))}) +
                    "\n";
    });
    out.fingerprint = sha256_hex(manifest);
    return out;
}

/// Writes train/{real,fake}, test/{real,fake} and manifest.csv under `dir`.
inline void synth_generate(const SynthConfig& cfg, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    cfg.validate();
    std::error_code ec;
    for (const char* sub : {"train/real", "train/fake", "test/real", "test/fake"}) {
        fs::create_directories(dir / sub, ec);
        if (ec) fail(ErrorKind::io, "cannot create '" + (dir / sub).string() + "': " + ec.message());
    }
    std::string manifest = std::string(kManifestHeader) + "\n";
    synth_visit(cfg, [&](const SynthSample& s) {
        for (bool fake : {false, true}) {
            const auto rel = sample_path(s.split, fake, s.index, cfg.channels);
            const auto bytes = encode_pnm(fake ? s.fake : s.real);
            write_file_bytes(dir / rel, bytes);
            manifest += format_manifest_row({rel, s.split, fake ? "fake" : "real", fake ? to_string(s.artifact) : "",
                                             fake ? format_amplitude(s.amplitude) : "", sha256_hex(bytes)}) +
                        "\n";
        }
    });
    write_file_bytes(dir / "manifest.csv",
                     std::span(reinterpret_cast<const std::uint8_t*>(manifest.data()), manifest.size()));
}

/// Digest over every regular file under `dir` (sorted relative path + bytes).
inline std::string directory_digest(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
    }
    std::sort(files.begin(), files.end());
    Sha256 h;
    for (const auto& f : files) {
        h.update(f.generic_string()).update(std::string_view("\0", 1));
        h.update(read_file_bytes(dir / f));
    }
    return h.hex();
}

}  // namespace wt
