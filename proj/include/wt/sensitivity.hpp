#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "wt/dataset.hpp"
#include "wt/error.hpp"
#include "wt/models.hpp"
#include "wt/train.hpp"

namespace wt {

struct Sensitivity {
    std::size_t samples = 0;
    std::size_t detected = 0;
    double rate = 0.0;
    double half_width = 0.0;  // 95% Wilson interval
};

inline double wilson_half_width(std::size_t detected, std::size_t n, double z = 1.959963984540054) {
    require(n > 0, ErrorKind::invalid_argument, "wilson interval of zero samples");
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(detected) / nn;
    const double z2 = z * z;
    return z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / (1.0 + z2 / nn);
}

/// Fraction of predictions equal to the fake label.
inline Sensitivity estimate_sensitivity(std::span<const int> predictions) {
    require(!predictions.empty(), ErrorKind::invalid_argument, "sensitivity: no samples");
    Sensitivity s;
    s.samples = predictions.size();
    for (int p : predictions) s.detected += p == kFakeLabel ? 1 : 0;
    s.rate = static_cast<double>(s.detected) / static_cast<double>(s.samples);
    s.half_width = wilson_half_width(s.detected, s.samples);
    return s;
}

inline constexpr std::size_t kMinSensitivitySamples = 30;

inline std::vector<std::size_t> artifact_indices(const Dataset& data, ArtifactId artifact) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.labels[i] == kFakeLabel && data.artifacts[i] == static_cast<int>(artifact)) idx.push_back(i);
    }
    return idx;
}

/// P(predict fake | artifact) over the fakes in `data` carrying it.
inline Sensitivity artifact_sensitivity(Model& model, const Dataset& data, ArtifactId artifact,
                                        std::size_t min_samples = kMinSensitivitySamples) {
    const auto idx = artifact_indices(data, artifact);
    require(idx.size() >= min_samples, ErrorKind::invalid_argument,
            std::string("artifact_sensitivity: only ") + std::to_string(idx.size()) + " fakes carry '" +
                to_string(artifact) + "', need at least " + std::to_string(min_samples));
    return estimate_sensitivity(predict(model, data, idx));
}

/// Sensitivity of each artifact (rows) at each sparsity level (columns).
struct SensitivityTable {
    std::vector<double> sparsities;
    std::vector<std::string> artifacts;
    std::vector<double> frequencies;               // one per artifact
    std::vector<std::vector<double>> sensitivity;  // [artifact][level]
};

enum class CorrelationStatus { ok, not_applicable, undefined };

inline const char* to_string(CorrelationStatus s) {
    switch (s) {
        case CorrelationStatus::ok: return "ok";
        case CorrelationStatus::not_applicable: return "not_applicable";
        case CorrelationStatus::undefined: return "undefined";
    }
    return "unknown";
}

struct ArtifactRetention {
    std::string artifact;
    double frequency = 0.0;
    double dense = 0.0;
    double final = 0.0;
    double retention = 0.0;  // final / dense; NaN when dense is 0
    double drop = 0.0;       // dense - final
};

struct SurvivalBiasReport {
    SensitivityTable table;
    std::vector<ArtifactRetention> rows;  // rarest first, ties in input order
    double rank_correlation = std::numeric_limits<double>::quiet_NaN();
    CorrelationStatus correlation_status = CorrelationStatus::undefined;
    bool negative_bias = false;  // rarest artifacts lose more than the most common
};

/// Average ranks (1-based), ties share the mean rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

/// Spearman correlation; NaN when either side has no variation.
inline double spearman(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size() && a.size() >= 2, ErrorKind::invalid_argument, "spearman: need two equal-length series");
    const auto ra = average_ranks(a), rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n, mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sab / std::sqrt(saa * sbb);
}

/// Diagnostic only: compares sensitivity at the first (least sparse) and
/// last (most sparse) levels per artifact and relates retention to frequency.
inline SurvivalBiasReport survival_bias_report(const SensitivityTable& t) {
    const std::size_t n_art = t.artifacts.size();
    require(n_art >= 2, ErrorKind::invalid_argument, "survival_bias_report: need at least two artifacts");
    require(t.frequencies.size() == n_art && t.sensitivity.size() == n_art, ErrorKind::invalid_argument,
            "survival_bias_report: one frequency and one sensitivity row per artifact");
    require(t.sparsities.size() >= 3, ErrorKind::invalid_argument,
            "survival_bias_report: need sensitivities at three or more sparsity levels");
    for (std::size_t l = 1; l < t.sparsities.size(); ++l) {
        require(t.sparsities[l] > t.sparsities[l - 1], ErrorKind::invalid_argument,
                "survival_bias_report: sparsity levels must increase");
    }
    for (std::size_t a = 0; a < n_art; ++a) {
        require(t.sensitivity[a].size() == t.sparsities.size(), ErrorKind::invalid_argument,
                "survival_bias_report: row for '" + t.artifacts[a] + "' has the wrong length");
        require(t.frequencies[a] > 0.0, ErrorKind::invalid_argument, "survival_bias_report: frequencies must be positive");
    }

    SurvivalBiasReport rep;
    rep.table = t;
    std::vector<double> retention(n_art);
    for (std::size_t a = 0; a < n_art; ++a) {
        ArtifactRetention r;
        r.artifact = t.artifacts[a];
        r.frequency = t.frequencies[a];
        r.dense = t.sensitivity[a].front();
        r.final = t.sensitivity[a].back();
        r.retention = r.dense > 0.0 ? r.final / r.dense : std::numeric_limits<double>::quiet_NaN();
        r.drop = r.dense - r.final;
        retention[a] = r.retention;
        rep.rows.push_back(r);
    }

    const auto [fmin, fmax] = std::minmax_element(t.frequencies.begin(), t.frequencies.end());
    if (*fmin == *fmax) {
        rep.correlation_status = CorrelationStatus::not_applicable;
    } else if (std::any_of(retention.begin(), retention.end(), [](double v) { return std::isnan(v); })) {
        rep.correlation_status = CorrelationStatus::undefined;
    } else {
        rep.rank_correlation = spearman(t.frequencies, retention);
        rep.correlation_status = std::isnan(rep.rank_correlation) ? CorrelationStatus::undefined : CorrelationStatus::ok;
    }
    if (*fmin != *fmax) {
        double rare = 0.0, common = 0.0;
        std::size_t n_rare = 0, n_common = 0;
        for (const auto& r : rep.rows) {
            if (r.frequency == *fmin) rare += r.drop, ++n_rare;
            if (r.frequency == *fmax) common += r.drop, ++n_common;
        }
        rep.negative_bias = rare / static_cast<double>(n_rare) > common / static_cast<double>(n_common);
    }
    std::stable_sort(rep.rows.begin(), rep.rows.end(),
                     [](const auto& a, const auto& b) { return a.frequency < b.frequency; });
    return rep;
}

}  // namespace wt
