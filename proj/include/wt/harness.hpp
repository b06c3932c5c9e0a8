#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wt/attribution.hpp"
#include "wt/config.hpp"
#include "wt/dataset.hpp"
#include "wt/imp.hpp"
#include "wt/models.hpp"
#include "wt/sensitivity.hpp"
#include "wt/serialize.hpp"
#include "wt/synth.hpp"
#include "wt/ticket.hpp"
#include "wt/train.hpp"

namespace wt {

inline double retention_ratio(double a_sparse, double a_dense) {
    require(a_dense > 0.0, ErrorKind::invalid_argument, "retention_ratio: dense accuracy is zero");
    return a_sparse / a_dense;
}

inline constexpr std::string_view kSparsityCurveHeader = "run_id,arch,mode,round,sparsity,threshold,accuracy,epochs,seed";
inline constexpr std::string_view kAttentionShiftHeader = "run_id,image_id,class,sparsity,delta_frobenius";
inline constexpr std::string_view kSensitivityHeader =
    "run_id,arch,mode,seed,round,sparsity,artifact,frequency,samples,detected,sensitivity,half_width,meets_tau";
inline constexpr std::string_view kTransferHeader =
    "run_id,arch,seed,start,ticket_sparsity,base_accuracy,transfer_accuracy,delta,retention,params_remaining,params_total";
inline constexpr std::string_view kDenseHeader = "run_id,arch,seed,accuracy,epochs";
inline constexpr std::string_view kRetentionHeader =
    "arch,mode,round,sparsity,accuracy_median,dense_accuracy_median,retention,seeds,nearest_to";
inline constexpr std::string_view kTransferSummaryHeader =
    "arch,start,ticket_sparsity,base_median,transfer_median,delta,retention,seeds";

using Logger = std::function<void(const std::string&)>;

/// Value of WT_THREADS (default 1). Work is single-threaded regardless, so
/// every setting is deterministic; malformed values are still rejected.
inline std::size_t threads_from_env() {
    const char* v = std::getenv("WT_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1) fail(ErrorKind::config, std::string("WT_THREADS must be a positive integer, got '") + v + "'");
    return static_cast<std::size_t>(n);
}

namespace detail {

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

class CsvWriter {
   public:
    CsvWriter(const std::filesystem::path& path, std::string_view header) : path_(path), out_(path, std::ios::trunc) {
        if (!out_) fail(ErrorKind::io, "cannot write '" + path.string() + "'");
        out_ << header << "\n";
    }
    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << fields[i];
        out_ << "\n";
    }
    void close() {
        out_.close();
        if (!out_) fail(ErrorKind::io, "short write to '" + path_.string() + "'");
    }

   private:
    std::filesystem::path path_;
    std::ofstream out_;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) fail(ErrorKind::format, "csv: missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
};

inline CsvTable read_csv(const std::filesystem::path& path, std::string_view expected_header) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != expected_header) {
        fail(ErrorKind::format, path.filename().string() + ": schema drift, expected header '" +
                                    std::string(expected_header) + "'");
    }
    CsvTable t;
    t.header = split_csv_line(line);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != t.header.size()) {
            fail(ErrorKind::format, path.filename().string() + " line " + std::to_string(line_no) + ": expected " +
                                        std::to_string(t.header.size()) + " fields");
        }
        t.rows.push_back(std::move(f));
    }
    return t;
}

inline double to_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail(ErrorKind::format, what + ": '" + s + "' is not a number");
    }
}

inline double median(std::vector<double> v) {
    require(!v.empty(), ErrorKind::invalid_argument, "median of nothing");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline Image8 to_image8(const Dataset& d, std::size_t index) {
    Image8 img(d.width, d.height, d.channels);
    const std::size_t plane = d.height * d.width;
    const float* px = d.pixels.data() + index * d.image_elements();
    for (std::size_t y = 0; y < d.height; ++y) {
        for (std::size_t x = 0; x < d.width; ++x) {
            for (std::size_t c = 0; c < d.channels; ++c) {
                img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(px[c * plane + y * d.width + x] * 255.0f));
            }
        }
    }
    return img;
}

}  // namespace detail

/// Shared state of one command invocation.
class Harness {
   public:
    Harness(ExperimentConfig cfg, Logger log = {}) : cfg_(std::move(cfg)), log_(std::move(log)) {
        validate(cfg_);
        hash_ = config_hash(cfg_);
        threads_ = threads_from_env();
        start_ = std::chrono::steady_clock::now();
    }

    const ExperimentConfig& config() const noexcept { return cfg_; }
    const std::string& hash() const noexcept { return hash_; }
    std::filesystem::path out() const { return cfg_.out; }

    std::string run_id(std::uint64_t seed) const { return hash_.substr(0, 12) + "-s" + std::to_string(seed); }

    /// Dataset from data.dir, or the synthetic configuration built in memory.
    const DatasetSplits& data() {
        if (!data_loaded_) {
            data_ = cfg_.data_dir.empty() ? synth_build(cfg_.synth) : load_dataset(cfg_.data_dir);
            require(!data_.train.empty() && !data_.test.empty(), ErrorKind::format,
                    "dataset needs both train and test samples");
            data_loaded_ = true;
            log("dataset ready: " + std::to_string(data_.train.size()) + " train, " + std::to_string(data_.test.size()) +
                " test");
        }
        return data_;
    }

    ArchSpec arch_spec() {
        const auto& d = data();
        return ArchSpec{cfg_.arch, InputShape{d.train.channels, d.train.height, d.train.width}, 2};
    }

    TrainConfig train_config(std::uint64_t seed) const {
        TrainConfig t = cfg_.train;
        t.seed = seed;
        return t;
    }

    void log(const std::string& msg) const {
        if (log_) log_(msg);
    }

    void prepare_out() {
        std::error_code ec;
        std::filesystem::create_directories(out(), ec);
        if (ec) fail(ErrorKind::io, "cannot create '" + out().string() + "': " + ec.message());
        const auto text = to_text(cfg_);
        write_file_bytes(out() / "config.txt",
                         std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
        artifact(out() / "config.txt");
    }

    void artifact(const std::filesystem::path& p) { artifacts_.push_back(p.string()); }
    void warn(const std::string& w) {
        warnings_.push_back(w);
        log("warning: " + w);
    }

    nlohmann::json& record() { return record_; }

    /// Writes run_record.json and checks that every listed artifact exists.
    nlohmann::json finish(const std::string& command, const std::string& name = "run_record.json") {
        const auto path = out() / name;
        artifacts_.push_back(path.string());
        record_["command"] = command;
        record_["config_hash"] = hash_;
        record_["arch"] = to_string(cfg_.arch);
        record_["seeds"] = cfg_.seeds;
        record_["threads"] = threads_;
        record_["warnings"] = warnings_;
        record_["artifacts"] = artifacts_;
        record_["wall_clock_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        const auto text = record_.dump(2) + "\n";
        write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
        for (const auto& a : artifacts_) {
            require(std::filesystem::exists(a), ErrorKind::internal, "run record lists missing artifact '" + a + "'");
        }
        return record_;
    }

   private:
    ExperimentConfig cfg_;
    Logger log_;
    std::string hash_;
    std::size_t threads_ = 1;
    std::chrono::steady_clock::time_point start_;
    DatasetSplits data_;
    bool data_loaded_ = false;
    std::vector<std::string> artifacts_;
    std::vector<std::string> warnings_;
    nlohmann::json record_ = nlohmann::json::object();
};

inline nlohmann::json round_json(const RoundRecord& r, std::uint64_t seed) {
    return {{"seed", seed},         {"round", r.round},       {"sparsity", r.sparsity},
            {"threshold", r.threshold}, {"accuracy", r.accuracy}, {"epochs", r.epochs},
            {"checkpoint", r.checkpoint}, {"diverged", r.diverged}, {"diagnostic", r.diagnostic}};
}

inline std::vector<std::string> curve_row(const std::string& run_id, const ExperimentConfig& c, const RoundRecord& r,
                                          std::uint64_t seed) {
    return {run_id,
            to_string(c.arch),
            to_string(c.schedule.mode),
            std::to_string(r.round),
            detail::fmt("%.6f", r.sparsity),
            detail::fmt("%.9g", r.threshold),
            detail::fmt("%.6f", r.accuracy),
            std::to_string(r.epochs),
            std::to_string(seed)};
}

/// Writes the synthetic dataset to the output directory.
inline nlohmann::json cmd_generate(const ExperimentConfig& cfg, const Logger& log = {}) {
    validate(cfg);
    synth_generate(cfg.synth, cfg.out);
    const auto manifest = read_file_bytes(std::filesystem::path(cfg.out) / "manifest.csv");
    nlohmann::json rec = {{"command", "generate"},
                          {"dir", cfg.out},
                          {"train_samples", cfg.synth.train_samples},
                          {"test_samples", cfg.synth.test_samples},
                          {"manifest_sha256", sha256_hex(manifest)},
                          {"directory_sha256", directory_digest(cfg.out)}};
    if (log) log("generated " + std::to_string(cfg.synth.train_samples + cfg.synth.test_samples) + " images in " + cfg.out);
    return rec;
}

/// Dense training per seed.
inline nlohmann::json cmd_train(const ExperimentConfig& cfg, const Logger& log = {}) {
    Harness h(cfg, log);
    h.prepare_out();
    const auto& d = h.data();
    detail::CsvWriter csv(h.out() / "dense_accuracy.csv", kDenseHeader);
    auto& runs = h.record()["runs"] = nlohmann::json::array();
    for (auto seed : cfg.seeds) {
        auto model = build_model(h.arch_spec(), seed);
        const auto result = train(*model, d.train, h.train_config(seed), [&](std::size_t e, double tl, double vl) {
            h.log("seed " + std::to_string(seed) + " epoch " + std::to_string(e + 1) + " train_loss " +
                  detail::fmt("%.4f", tl) + " val_loss " + detail::fmt("%.4f", vl));
        });
        if (result.diverged) h.warn("seed " + std::to_string(seed) + ": " + result.diagnostic);
        const double acc = result.diverged ? 0.0 : evaluate(*model, d.test);
        const auto dir = h.out() / ("seed_" + std::to_string(seed));
        std::filesystem::create_directories(dir);
        write_file_bytes(dir / "dense.wtck", encode_checkpoint(model->params()));
        h.artifact(dir / "dense.wtck");
        csv.row({h.run_id(seed), to_string(cfg.arch), std::to_string(seed), detail::fmt("%.6f", acc),
                 std::to_string(result.epochs)});
        runs.push_back({{"seed", seed}, {"accuracy", acc}, {"epochs", result.epochs}, {"diverged", result.diverged}});
        h.log("seed " + std::to_string(seed) + " dense accuracy " + detail::fmt("%.4f", acc));
    }
    csv.close();
    h.artifact(h.out() / "dense_accuracy.csv");
    return h.finish("train");
}

/// Empirical artifact frequencies among the training fakes.
inline std::vector<double> artifact_frequencies(const Dataset& train) {
    std::vector<double> counts(kArtifactCount, 0.0);
    double fakes = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train.labels[i] != kFakeLabel) continue;
        counts[static_cast<std::size_t>(train.artifacts[i])] += 1.0;
        fakes += 1.0;
    }
    if (fakes > 0.0) {
        for (auto& c : counts) c /= fakes;
    }
    return counts;
}

/// Full IMP or one-shot sweep per seed: sparsity curve, per-round
/// checkpoints and tickets, and per-artifact sensitivity.
inline nlohmann::json cmd_prune(const ExperimentConfig& cfg, const Logger& log = {}) {
    Harness h(cfg, log);
    h.prepare_out();
    const auto& d = h.data();
    const auto freq = artifact_frequencies(d.train);
    detail::CsvWriter curve(h.out() / "sparsity_curve.csv", kSparsityCurveHeader);
    detail::CsvWriter sens(h.out() / "sensitivity.csv", kSensitivityHeader);
    auto& rounds = h.record()["rounds"] = nlohmann::json::array();
    for (auto seed : cfg.seeds) {
        const auto run_id = h.run_id(seed);
        const auto dir = h.out() / ("seed_" + std::to_string(seed));
        std::filesystem::create_directories(dir / "tickets");
        auto model = build_model(h.arch_spec(), seed);
        ImpOptions opts;
        opts.checkpoint_dir = dir / "checkpoints";
        opts.on_warning = [&](const std::string& w) { h.warn("seed " + std::to_string(seed) + ": " + w); };
        opts.on_round = [&](const RoundRecord& r, Model& m) {
            char name[32];
            std::snprintf(name, sizeof name, "round_%02zu.wtkt", r.round);
            write_ticket(dir / "tickets" / name, m, seed, d.fingerprint);
            h.artifact(dir / "tickets" / name);
            h.artifact(r.checkpoint);
            if (r.diverged) {
                h.warn("seed " + std::to_string(seed) + " round " + std::to_string(r.round) + ": " + r.diagnostic);
                return;
            }
            for (int a = 0; a < kArtifactCount; ++a) {
                const auto id = static_cast<ArtifactId>(a);
                if (artifact_indices(d.test, id).size() < kMinSensitivitySamples) continue;
                const auto s = artifact_sensitivity(m, d.test, id);
                sens.row({run_id, to_string(cfg.arch), to_string(cfg.schedule.mode), std::to_string(seed),
                          std::to_string(r.round), detail::fmt("%.6f", r.sparsity), to_string(id),
                          detail::fmt("%.6f", freq[static_cast<std::size_t>(a)]), std::to_string(s.samples),
                          std::to_string(s.detected), detail::fmt("%.6f", s.rate), detail::fmt("%.6f", s.half_width),
                          s.rate >= cfg.tau ? "1" : "0"});
            }
            h.log("seed " + std::to_string(seed) + " round " + std::to_string(r.round) + " sparsity " +
                  detail::fmt("%.4f", r.sparsity) + " accuracy " + detail::fmt("%.4f", r.accuracy) + " epochs " +
                  std::to_string(r.epochs));
        };
        const auto records = prune_run(*model, d.train, d.test, cfg.schedule, cfg.train, seed, opts);
        for (const auto& r : records) {
            curve.row(curve_row(run_id, cfg, r, seed));
            rounds.push_back(round_json(r, seed));
        }
        h.record()["checkpoints"][std::to_string(seed)] = {
            {"near_0.6", nearest_record(records, 0.6).round}, {"near_0.8", nearest_record(records, 0.8).round}};
    }
    curve.close();
    sens.close();
    h.artifact(h.out() / "sparsity_curve.csv");
    h.artifact(h.out() / "sensitivity.csv");
    return h.finish("prune");
}

/// Grad-CAM overlays along the pruning sweep plus the attention-shift series.
inline nlohmann::json cmd_gradcam(const ExperimentConfig& cfg, const Logger& log = {}) {
    Harness h(cfg, log);
    h.prepare_out();
    const auto& d = h.data();
    const std::size_t n_images = std::min(cfg.gradcam.images, d.test.size());
    detail::CsvWriter csv(h.out() / "attention_shift.csv", kAttentionShiftHeader);
    detail::CsvWriter curve(h.out() / "sparsity_curve.csv", kSparsityCurveHeader);
    for (auto seed : cfg.seeds) {
        const auto run_id = h.run_id(seed);
        const auto dir = h.out() / ("seed_" + std::to_string(seed)) / "gradcam";
        std::filesystem::create_directories(dir);
        auto model = build_model(h.arch_spec(), seed);
        const std::string layer = cfg.gradcam.layer.empty() ? model->feature_layers().back() : cfg.gradcam.layer;
        // Fails early on a bad layer name, before any training.
        gradcam(*model, d.test.batch(std::vector<std::size_t>{0}), d.test.labels[0], layer);

        std::vector<std::vector<Heatmap>> maps;  // [round][image]
        ImpOptions opts;
        opts.on_warning = [&](const std::string& w) { h.warn(w); };
        opts.on_round = [&](const RoundRecord& r, Model& m) {
            std::vector<Heatmap> row;
            for (std::size_t i = 0; i < n_images; ++i) {
                row.push_back(gradcam(m, d.test.batch(std::vector<std::size_t>{i}), d.test.labels[i], layer));
            }
            maps.push_back(std::move(row));
            h.log("seed " + std::to_string(seed) + " round " + std::to_string(r.round) + " sparsity " +
                  detail::fmt("%.4f", r.sparsity) + " accuracy " + detail::fmt("%.4f", r.accuracy));
        };
        const auto records = prune_run(*model, d.train, d.test, cfg.schedule, cfg.train, seed, opts);
        for (const auto& r : records) curve.row(curve_row(run_id, cfg, r, seed));
        for (double target : cfg.gradcam.sparsities) {
            const auto& r = nearest_record(records, target);
            for (std::size_t i = 0; i < n_images; ++i) {
                const double delta = attention_shift(maps[0][i], maps[r.round][i]);
                csv.row({run_id, std::to_string(i), std::to_string(d.test.labels[i]), detail::fmt("%.6f", r.sparsity),
                         detail::fmt("%.9g", delta)});
                char name[48];
                std::snprintf(name, sizeof name, "img%03zu_round%02zu.ppm", i, r.round);
                write_pnm(dir / name, heatmap_render(maps[r.round][i], detail::to_image8(d.test, i)));
                h.artifact(dir / name);
            }
        }
        h.record()["layers"][std::to_string(seed)] = layer;
    }
    csv.close();
    curve.close();
    h.artifact(h.out() / "attention_shift.csv");
    h.artifact(h.out() / "sparsity_curve.csv");
    return h.finish("gradcam");
}

/// Ticket transfer: dense baseline from the ticket's initialization versus
/// the masked ticket, both trained on the target dataset.
inline nlohmann::json cmd_transfer(const ExperimentConfig& cfg, const Logger& log = {}) {
    require(!cfg.transfer.ticket.empty(), ErrorKind::config, "transfer.ticket is required");
    require(!cfg.transfer.from_trained || !cfg.transfer.checkpoint.empty(), ErrorKind::config,
            "transfer.from_trained needs transfer.checkpoint");
    ExperimentConfig c = cfg;
    if (!c.transfer.target_dir.empty()) c.data_dir = c.transfer.target_dir;
    Harness h(c, log);
    h.prepare_out();
    const Ticket ticket = read_ticket(c.transfer.ticket);
    const auto& d = h.data();
    std::unique_ptr<Model> trained;
    if (c.transfer.from_trained) {
        trained = ticket_model(ticket);
        decode_checkpoint(read_file_bytes(c.transfer.checkpoint), trained->params());
    }
    detail::CsvWriter csv(h.out() / "transfer.csv", kTransferHeader);
    auto& runs = h.record()["runs"] = nlohmann::json::array();
    for (auto seed : c.seeds) {
        auto base = ticket_model(ticket, true);
        require(base->spec().input.channels == d.train.channels && base->spec().input.height == d.train.height,
                ErrorKind::shape, "transfer: target dataset shape does not match the ticket");
        const auto base_result = train(*base, d.train, h.train_config(seed));
        const double a2 = base_result.diverged ? 0.0 : evaluate(*base, d.test);
        const auto tr = transfer_train(ticket, d.train, d.test, h.train_config(seed),
                                       trained ? &trained->params() : nullptr);
        if (tr.diverged) h.warn("seed " + std::to_string(seed) + ": " + tr.diagnostic);
        const auto rep = transfer_report(tr.accuracy, a2, ticket);
        const std::string start = c.transfer.from_trained ? "trained" : "init";
        csv.row({h.run_id(seed), to_string(ticket.spec.arch), std::to_string(seed), start,
                 detail::fmt("%.6f", ticket.sparsity), detail::fmt("%.6f", a2), detail::fmt("%.6f", tr.accuracy),
                 detail::fmt("%.6f", rep.delta), detail::fmt("%.6f", rep.retention),
                 std::to_string(rep.params_remaining), std::to_string(rep.params_total)});
        runs.push_back({{"seed", seed}, {"base_accuracy", a2}, {"transfer_accuracy", tr.accuracy},
                        {"delta", rep.delta}, {"retention", rep.retention}, {"sparsity", tr.sparsity}});
        h.log("seed " + std::to_string(seed) + " base " + detail::fmt("%.4f", a2) + " transfer " +
              detail::fmt("%.4f", tr.accuracy));
    }
    csv.close();
    h.artifact(h.out() / "transfer.csv");
    h.record()["ticket"] = {{"path", c.transfer.ticket},
                            {"arch", to_string(ticket.spec.arch)},
                            {"seed", ticket.seed},
                            {"sparsity", ticket.sparsity},
                            {"source_fingerprint", ticket.fingerprint}};
    return h.finish("transfer");
}

namespace detail {

inline nlohmann::json nan_to_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

inline void report_curves(const std::filesystem::path& dir, nlohmann::json& rec, std::vector<std::string>& artifacts) {
    const auto t = read_csv(dir / "sparsity_curve.csv", kSparsityCurveHeader);
    const auto c_arch = t.column("arch"), c_mode = t.column("mode"), c_round = t.column("round"),
               c_sp = t.column("sparsity"), c_acc = t.column("accuracy"), c_seed = t.column("seed");
    // (arch, mode) -> round -> values across seeds
    std::map<std::pair<std::string, std::string>, std::map<long, std::pair<std::vector<double>, std::vector<double>>>>
        groups;
    for (const auto& r : t.rows) {
        const long round = std::lround(to_double(r[c_round], "round"));
        auto& g = groups[{r[c_arch], r[c_mode]}][round];
        g.first.push_back(to_double(r[c_sp], "sparsity"));
        g.second.push_back(to_double(r[c_acc], "accuracy"));
        (void)c_seed;
    }
    CsvWriter out(dir / "retention_table.csv", kRetentionHeader);
    auto& rows = rec["retention"] = nlohmann::json::array();
    for (const auto& [key, by_round] : groups) {
        require(by_round.contains(0), ErrorKind::format,
                "sparsity_curve.csv: no round-0 dense rows for " + key.first + "/" + key.second);
        const double dense = median(by_round.at(0).second);
        // Rounds nearest 0.6 and 0.8 by median sparsity.
        std::map<long, std::string> labels;
        for (double target : {0.6, 0.8}) {
            long best = 0;
            double gap = 2.0;
            for (const auto& [round, v] : by_round) {
                const double g = std::fabs(median(v.first) - target);
                if (g < gap) gap = g, best = round;
            }
            labels[best] += (labels[best].empty() ? "" : "|") + fmt("%.1f", target);
        }
        for (const auto& [round, v] : by_round) {
            const double sp = median(v.first), acc = median(v.second);
            const double ret = dense > 0.0 ? acc / dense : std::numeric_limits<double>::quiet_NaN();
            const std::string label = labels.contains(round) ? labels[round] : "";
            out.row({key.first, key.second, std::to_string(round), fmt("%.6f", sp), fmt("%.6f", acc),
                     fmt("%.6f", dense), fmt("%.6f", ret), std::to_string(v.second.size()), label});
            rows.push_back({{"arch", key.first},
                            {"mode", key.second},
                            {"round", round},
                            {"sparsity", sp},
                            {"accuracy_median", acc},
                            {"dense_accuracy_median", dense},
                            {"retention", nan_to_null(ret)},
                            {"seeds", v.second.size()},
                            {"nearest_to", label}});
        }
    }
    out.close();
    artifacts.push_back((dir / "retention_table.csv").string());
}

inline void report_transfer(const std::filesystem::path& dir, nlohmann::json& rec, std::vector<std::string>& artifacts) {
    const auto t = read_csv(dir / "transfer.csv", kTransferHeader);
    std::map<std::tuple<std::string, std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> g;
    const auto c_arch = t.column("arch"), c_start = t.column("start"), c_sp = t.column("ticket_sparsity"),
               c_base = t.column("base_accuracy"), c_tr = t.column("transfer_accuracy");
    for (const auto& r : t.rows) {
        auto& v = g[{r[c_arch], r[c_start], r[c_sp]}];
        v.first.push_back(to_double(r[c_base], "base_accuracy"));
        v.second.push_back(to_double(r[c_tr], "transfer_accuracy"));
    }
    CsvWriter out(dir / "transfer_summary.csv", kTransferSummaryHeader);
    auto& rows = rec["transfer"] = nlohmann::json::array();
    for (const auto& [key, v] : g) {
        const double base = median(v.first), tr = median(v.second);
        const auto rep = transfer_report(tr, base);
        out.row({std::get<0>(key), std::get<1>(key), std::get<2>(key), fmt("%.6f", base), fmt("%.6f", tr),
                 fmt("%.6f", rep.delta), fmt("%.6f", rep.retention), std::to_string(v.first.size())});
        rows.push_back({{"arch", std::get<0>(key)},
                        {"start", std::get<1>(key)},
                        {"ticket_sparsity", std::get<2>(key)},
                        {"base_median", base},
                        {"transfer_median", tr},
                        {"delta", rep.delta},
                        {"retention", rep.retention}});
    }
    out.close();
    artifacts.push_back((dir / "transfer_summary.csv").string());
}

inline nlohmann::json bias_json(const SurvivalBiasReport& rep) {
    nlohmann::json j;
    j["sparsities"] = rep.table.sparsities;
    j["table"] = nlohmann::json::array();
    for (std::size_t a = 0; a < rep.table.artifacts.size(); ++a) {
        j["table"].push_back({{"artifact", rep.table.artifacts[a]},
                              {"frequency", rep.table.frequencies[a]},
                              {"sensitivity", rep.table.sensitivity[a]}});
    }
    j["retention"] = nlohmann::json::array();
    for (const auto& r : rep.rows) {
        j["retention"].push_back({{"artifact", r.artifact},
                                  {"frequency", r.frequency},
                                  {"dense_sensitivity", r.dense},
                                  {"final_sensitivity", r.final},
                                  {"retention", nan_to_null(r.retention)},
                                  {"drop", r.drop}});
    }
    j["rank_correlation"] = nan_to_null(rep.rank_correlation);
    j["correlation_status"] = to_string(rep.correlation_status);
    j["negative_bias"] = rep.negative_bias;
    return j;
}

/// Median sensitivity per (artifact, round) across seeds, then the survival
/// report per (arch, mode).
inline void report_sensitivity(const std::filesystem::path& dir, nlohmann::json& rec,
                               std::vector<std::string>& artifacts) {
    const auto t = read_csv(dir / "sensitivity.csv", kSensitivityHeader);
    const auto c_arch = t.column("arch"), c_mode = t.column("mode"), c_round = t.column("round"),
               c_sp = t.column("sparsity"), c_art = t.column("artifact"), c_freq = t.column("frequency"),
               c_sens = t.column("sensitivity");
    struct Cell {
        std::vector<double> sparsity, sensitivity, frequency;
    };
    std::map<std::pair<std::string, std::string>, std::map<std::string, std::map<long, Cell>>> g;
    for (const auto& r : t.rows) {
        auto& cell = g[{r[c_arch], r[c_mode]}][r[c_art]][std::lround(to_double(r[c_round], "round"))];
        cell.sparsity.push_back(to_double(r[c_sp], "sparsity"));
        cell.sensitivity.push_back(to_double(r[c_sens], "sensitivity"));
        cell.frequency.push_back(to_double(r[c_freq], "frequency"));
    }
    auto& out = rec["survival_bias"] = nlohmann::json::array();
    for (const auto& [key, by_art] : g) {
        nlohmann::json entry = {{"arch", key.first}, {"mode", key.second}};
        // Rounds present for every artifact.
        std::vector<long> rounds;
        for (const auto& [round, cell] : by_art.begin()->second) {
            bool everywhere = true;
            for (const auto& [name, cells] : by_art) everywhere = everywhere && cells.contains(round);
            if (everywhere) rounds.push_back(round);
        }
        SensitivityTable table;
        for (long round : rounds) table.sparsities.push_back(median(by_art.begin()->second.at(round).sparsity));
        for (const auto& [name, cells] : by_art) {
            table.artifacts.push_back(name);
            table.frequencies.push_back(median(cells.begin()->second.frequency));
            std::vector<double> row;
            for (long round : rounds) row.push_back(median(cells.at(round).sensitivity));
            table.sensitivity.push_back(std::move(row));
        }
        try {
            entry["report"] = bias_json(survival_bias_report(table));
        } catch (const Error& e) {
            entry["skipped"] = e.what();
        }
        out.push_back(std::move(entry));
    }
    const auto path = dir / "survival_bias.json";
    const auto text = out.dump(2) + "\n";
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    artifacts.push_back(path.string());
}

}  // namespace detail

/// Aggregates per-seed medians from a run directory.
inline nlohmann::json cmd_report(const std::filesystem::path& dir, const Logger& log = {}) {
    require(std::filesystem::is_directory(dir), ErrorKind::io, "report: '" + dir.string() + "' is not a directory");
    const bool curves = std::filesystem::exists(dir / "sparsity_curve.csv");
    const bool transfer = std::filesystem::exists(dir / "transfer.csv");
    const bool sensitivity = std::filesystem::exists(dir / "sensitivity.csv");
    require(curves || transfer, ErrorKind::io,
            "report: '" + dir.string() + "' has neither sparsity_curve.csv nor transfer.csv");
    nlohmann::json rec = {{"command", "report"}, {"dir", dir.string()}};
    std::vector<std::string> artifacts;
    if (curves) detail::report_curves(dir, rec, artifacts);
    if (transfer) detail::report_transfer(dir, rec, artifacts);
    if (sensitivity) detail::report_sensitivity(dir, rec, artifacts);
    const auto path = dir / "report.json";
    artifacts.push_back(path.string());
    rec["artifacts"] = artifacts;
    const auto text = rec.dump(2) + "\n";
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    if (log) log("report written to " + path.string());
    return rec;
}

}  // namespace wt
