#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "wt/dataset.hpp"
#include "wt/error.hpp"
#include "wt/models.hpp"
#include "wt/pruning.hpp"
#include "wt/sha256.hpp"
#include "wt/synth.hpp"
#include "wt/train.hpp"

namespace wt {

struct GradcamOptions {
    std::string layer;  // empty: last convolutional layer
    std::size_t images = 8;
    std::vector<double> sparsities = {0.0, 0.6, 0.8};
};

struct TransferOptions {
    std::string ticket;
    std::string target_dir;
    bool from_trained = false;
    std::string checkpoint;  // trained weights for from_trained
};

struct ExperimentConfig {
    ArchId arch = ArchId::cnn5_desk;
    std::string data_dir;  // empty: build the synthetic dataset in memory
    SynthConfig synth;
    PruneSchedule schedule;
    TrainConfig train;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string out = "runs/default";
    GradcamOptions gradcam;
    TransferOptions transfer;
    double tau = 0.75;

    ExperimentConfig() { schedule.epochs_per_round = train.max_epochs; }
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto p = s.find(sep, start);
        out.push_back(trim(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start)));
        if (p == std::string_view::npos) break;
        start = p + 1;
    }
    return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || ptr != end) fail(ErrorKind::config, key + ": '" + v + "' is not a number");
    return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || ptr != end) fail(ErrorKind::config, key + ": '" + v + "' is not a nonnegative integer");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(ErrorKind::config, key + ": '" + v + "' is not a boolean");
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F f) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += f(v[i]);
    }
    return out;
}

/// "name:weight:lo:hi" entries, comma separated.
inline std::vector<ArtifactSpec> parse_artifacts(const std::string& key, const std::string& v) {
    std::vector<ArtifactSpec> out;
    for (const auto& item : split_list(v)) {
        const auto f = split_list(item, ':');
        if (f.size() != 4) fail(ErrorKind::config, key + ": expected name:weight:lo:hi, got '" + item + "'");
        ArtifactSpec a;
        try {
            a.id = parse_artifact(f[0]);
        } catch (const Error& e) {
            fail(ErrorKind::config, key + ": " + e.what());
        }
        a.weight = parse_double(key, f[1]);
        a.amp_lo = parse_double(key, f[2]);
        a.amp_hi = parse_double(key, f[3]);
        out.push_back(a);
    }
    return out;
}

}  // namespace detail

/// Applies one key. Unknown keys are rejected.
inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& v) {
    using namespace detail;
    auto size = [&] { return static_cast<std::size_t>(parse_uint(key, v)); };
    auto num = [&] { return parse_double(key, v); };
    if (key == "arch") {
        try {
            c.arch = parse_arch(v);
        } catch (const Error& e) {
            fail(ErrorKind::config, std::string("arch: ") + e.what());
        }
    } else if (key == "data.dir") c.data_dir = v;
    else if (key == "synth.image_size") c.synth.image_size = size();
    else if (key == "synth.channels") c.synth.channels = size();
    else if (key == "synth.train_samples") c.synth.train_samples = size();
    else if (key == "synth.test_samples") c.synth.test_samples = size();
    else if (key == "synth.seed") c.synth.seed = parse_uint(key, v);
    else if (key == "synth.artifacts") c.synth.artifacts = parse_artifacts(key, v);
    else if (key == "schedule.mode") c.schedule.mode = parse_prune_mode(v);
    else if (key == "schedule.rounds") c.schedule.rounds = size();
    else if (key == "schedule.fraction") c.schedule.fraction = num();
    else if (key == "schedule.targets") {
        c.schedule.targets.clear();
        for (const auto& t : split_list(v)) c.schedule.targets.push_back(parse_double(key, t));
    } else if (key == "schedule.one_shot_target") c.schedule.one_shot_target = num();
    else if (key == "schedule.rewind") c.schedule.rewind = parse_rewind(v);
    else if (key == "train.lr") c.train.lr = num();
    else if (key == "train.batch_size") c.train.batch_size = size();
    else if (key == "train.max_epochs") c.train.max_epochs = c.schedule.epochs_per_round = size();
    else if (key == "train.patience") c.train.patience = c.schedule.patience = size();
    else if (key == "train.val_fraction") c.train.val_fraction = num();
    else if (key == "seeds") {
        c.seeds.clear();
        for (const auto& s : split_list(v)) c.seeds.push_back(parse_uint(key, s));
    } else if (key == "out") c.out = v;
    else if (key == "gradcam.layer") c.gradcam.layer = v;
    else if (key == "gradcam.images") c.gradcam.images = size();
    else if (key == "gradcam.sparsities") {
        c.gradcam.sparsities.clear();
        for (const auto& s : split_list(v)) c.gradcam.sparsities.push_back(parse_double(key, s));
    } else if (key == "transfer.ticket") c.transfer.ticket = v;
    else if (key == "transfer.target_dir") c.transfer.target_dir = v;
    else if (key == "transfer.from_trained") c.transfer.from_trained = parse_bool(key, v);
    else if (key == "transfer.checkpoint") c.transfer.checkpoint = v;
    else if (key == "sensitivity.tau") c.tau = num();
    else fail(ErrorKind::config, "unknown config key '" + key + "'");
}

inline void validate(const ExperimentConfig& c) {
    c.synth.validate();
    c.schedule.validate();
    c.train.validate();
    require(!c.seeds.empty(), ErrorKind::config, "seeds: at least one seed is required");
    require(!c.out.empty(), ErrorKind::config, "out: output directory is empty");
    require(c.gradcam.images >= 1, ErrorKind::config, "gradcam.images must be at least 1");
    require(!c.gradcam.sparsities.empty(), ErrorKind::config, "gradcam.sparsities is empty");
    for (double s : c.gradcam.sparsities) {
        require(s >= 0.0 && s < 1.0, ErrorKind::config, "gradcam.sparsities entries must be in [0, 1)");
    }
    require(c.tau > 0.0 && c.tau <= 1.0, ErrorKind::config, "sensitivity.tau must be in (0, 1]");
}

/// Parses `key = value` lines; `#` starts a comment.
inline ExperimentConfig parse_config(std::string_view text) {
    ExperimentConfig c;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    std::map<std::string, std::size_t> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto body = detail::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            fail(ErrorKind::config, "line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const auto key = detail::trim(std::string_view(body).substr(0, eq));
        const auto value = detail::trim(std::string_view(body).substr(eq + 1));
        if (auto [it, fresh] = seen.emplace(key, line_no); !fresh) {
            fail(ErrorKind::config, "line " + std::to_string(line_no) + ": key '" + key + "' repeats line " +
                                        std::to_string(it->second));
        }
        set_config_value(c, key, value);
    }
    validate(c);
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return parse_config(std::string(bytes.begin(), bytes.end()));
}

/// Canonical text form; parse_config(to_text(c)) reproduces c.
inline std::string to_text(const ExperimentConfig& c) {
    using detail::format_double;
    using detail::join;
    std::ostringstream os;
    auto d = [](double v) { return format_double(v); };
    os << "arch = " << to_string(c.arch) << "\n";
    os << "data.dir = " << c.data_dir << "\n";
    os << "synth.image_size = " << c.synth.image_size << "\n";
    os << "synth.channels = " << c.synth.channels << "\n";
    os << "synth.train_samples = " << c.synth.train_samples << "\n";
    os << "synth.test_samples = " << c.synth.test_samples << "\n";
    os << "synth.seed = " << c.synth.seed << "\n";
    os << "synth.artifacts = " << join(c.synth.artifacts, [&](const ArtifactSpec& a) {
        return std::string(to_string(a.id)) + ":" + d(a.weight) + ":" + d(a.amp_lo) + ":" + d(a.amp_hi);
    }) << "\n";
    os << "schedule.mode = " << to_string(c.schedule.mode) << "\n";
    os << "schedule.rounds = " << c.schedule.rounds << "\n";
    os << "schedule.fraction = " << d(c.schedule.fraction) << "\n";
    os << "schedule.targets = " << join(c.schedule.targets, d) << "\n";
    os << "schedule.one_shot_target = " << d(c.schedule.one_shot_target) << "\n";
    os << "schedule.rewind = " << to_string(c.schedule.rewind) << "\n";
    os << "train.lr = " << d(c.train.lr) << "\n";
    os << "train.batch_size = " << c.train.batch_size << "\n";
    os << "train.max_epochs = " << c.train.max_epochs << "\n";
    os << "train.patience = " << c.train.patience << "\n";
    os << "train.val_fraction = " << d(c.train.val_fraction) << "\n";
    os << "seeds = " << join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }) << "\n";
    os << "out = " << c.out << "\n";
    os << "gradcam.layer = " << c.gradcam.layer << "\n";
    os << "gradcam.images = " << c.gradcam.images << "\n";
    os << "gradcam.sparsities = " << join(c.gradcam.sparsities, d) << "\n";
    os << "transfer.ticket = " << c.transfer.ticket << "\n";
    os << "transfer.target_dir = " << c.transfer.target_dir << "\n";
    os << "transfer.from_trained = " << (c.transfer.from_trained ? "true" : "false") << "\n";
    os << "transfer.checkpoint = " << c.transfer.checkpoint << "\n";
    os << "sensitivity.tau = " << d(c.tau) << "\n";
    return os.str();
}

/// SHA-256 of the canonical text, so formatting and comments do not matter.
/// The output directory is left out: it says where a run goes, not what it is.
inline std::string config_hash(const ExperimentConfig& c) {
    ExperimentConfig k = c;
    k.out.clear();
    return sha256_hex(to_text(k));
}

}  // namespace wt
