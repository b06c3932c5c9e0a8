#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <vector>

#include "test_util.hpp"
#include "wt/dataset.hpp"
#include "wt/sensitivity.hpp"
#include "wt/synth.hpp"

namespace wt {
namespace {

SynthConfig small_config(std::size_t size = 32, std::size_t channels = 3) {
    SynthConfig cfg;
    cfg.image_size = size;
    cfg.channels = channels;
    cfg.train_samples = 40;
    cfg.test_samples = 20;
    cfg.seed = 17;
    return cfg;
}

TEST(Synth, ZeroAmplitudeLeavesFakeIdentical) {
    auto cfg = small_config();
    for (auto& a : cfg.artifacts) a.amp_lo = a.amp_hi = 0.0;
    for (std::size_t p = 0; p < 20; ++p) {
        const auto s = synth_pair(cfg, "train", p);
        EXPECT_EQ(s.real, s.fake) << p;
        EXPECT_EQ(s.amplitude, 0.0);
    }
}

TEST(Synth, ArtifactStaysInsideItsRegion) {
    for (std::size_t channels : {1, 3}) {
        for (std::size_t size : {32, 64}) {
            const auto cfg = small_config(size, channels);
            std::set<ArtifactId> seen;
            for (std::size_t p = 0; p < 40; ++p) {
                const auto s = synth_pair(cfg, p % 2 ? "train" : "test", p);
                seen.insert(s.artifact);
                ASSERT_GT(s.amplitude, 0.0);
                bool any_inside = false;
                for (std::size_t y = 0; y < size; ++y) {
                    for (std::size_t x = 0; x < size; ++x) {
                        for (std::size_t c = 0; c < channels; ++c) {
                            const bool differs = s.real.at(x, y, c) != s.fake.at(x, y, c);
                            if (!s.region.contains(x, y)) {
                                ASSERT_FALSE(differs) << to_string(s.artifact) << " leaked at " << x << "," << y;
                            }
                            any_inside |= differs;
                        }
                    }
                }
                EXPECT_TRUE(any_inside) << to_string(s.artifact);
                EXPECT_LE(s.region.x1, size);
                EXPECT_LE(s.region.y1, size);
            }
            EXPECT_EQ(seen.size(), 4u);
        }
    }
}

TEST(Synth, EqualWeightsGiveMultinomialCounts) {
    SynthConfig cfg = small_config();
    cfg.train_samples = 8000;
    std::size_t counts[kArtifactCount] = {};
    for (std::size_t p = 0; p < 4000; ++p) counts[static_cast<int>(synth_pair(cfg, "train", p).artifact)]++;
    const double sigma = std::sqrt(4000 * 0.25 * 0.75);
    for (auto c : counts) EXPECT_LE(std::fabs(static_cast<double>(c) - 1000.0), 3.0 * sigma) << c;
}

TEST(Synth, SkewedWeightsFollowFrequencies) {
    SynthConfig cfg = small_config();
    cfg.artifacts = {{ArtifactId::seam, 10, 0.3, 0.5}, {ArtifactId::tint, 1, 0.3, 0.5}};
    const auto f = cfg.frequencies();
    EXPECT_NEAR(f[0], 10.0 / 11.0, 1e-15);
    std::size_t tint = 0;
    for (std::size_t p = 0; p < 2200; ++p) tint += synth_pair(cfg, "train", p).artifact == ArtifactId::tint;
    const double sigma = std::sqrt(2200 * (1.0 / 11) * (10.0 / 11));
    EXPECT_LE(std::fabs(static_cast<double>(tint) - 200.0), 3.0 * sigma);
}

TEST(Synth, PixelRangeAndClassBalance) {
    const auto d = synth_build(small_config());
    EXPECT_EQ(d.train.size(), 40u);
    EXPECT_EQ(d.test.size(), 20u);
    for (const Dataset* split : {&d.train, &d.test}) {
        std::size_t real = 0, fake = 0;
        for (std::size_t i = 0; i < split->size(); ++i) {
            if (split->labels[i] == kRealLabel) {
                ++real;
                EXPECT_EQ(split->artifacts[i], kNoArtifact);
                EXPECT_EQ(split->amplitudes[i], 0.0f);
            } else {
                ++fake;
                EXPECT_GE(split->artifacts[i], 0);
            }
        }
        EXPECT_EQ(real, fake);
        for (float v : split->pixels) {
            ASSERT_GE(v, 0.0f);
            ASSERT_LE(v, 1.0f);
        }
    }
}

TEST(Synth, ConfigValidation) {
    auto cfg = small_config();
    cfg.image_size = 48;
    EXPECT_WT_ERROR(cfg.validate(), ErrorKind::config);
    cfg = small_config();
    cfg.train_samples = 0;
    EXPECT_WT_ERROR(cfg.validate(), ErrorKind::config);
    cfg = small_config();
    cfg.train_samples = 41;
    EXPECT_WT_ERROR(cfg.validate(), ErrorKind::config);
    cfg = small_config();
    cfg.artifacts[0].weight = 0.0;
    EXPECT_WT_ERROR(cfg.validate(), ErrorKind::config);
    cfg = small_config();
    cfg.artifacts[1].amp_hi = 1.5;
    EXPECT_WT_ERROR(cfg.validate(), ErrorKind::config);
    cfg = small_config();
    cfg.artifacts[1].id = ArtifactId::seam;
    EXPECT_WT_ERROR(cfg.validate(), ErrorKind::config);
}

TEST(SynthDisk, DigestIsStableAndSeedSensitive) {
    test::TempDir a("synth_a"), b("synth_b"), c("synth_c");
    auto cfg = small_config();
    synth_generate(cfg, a.path());
    synth_generate(cfg, b.path());
    cfg.seed += 1;
    synth_generate(cfg, c.path());
    EXPECT_EQ(directory_digest(a.path()), directory_digest(b.path()));
    EXPECT_NE(directory_digest(a.path()), directory_digest(c.path()));
    EXPECT_TRUE(std::filesystem::exists(a / "train/real/00000.ppm"));
    EXPECT_TRUE(std::filesystem::exists(a / "test/fake/00009.ppm"));
}

TEST(SynthDisk, RoundTripMatchesInMemoryBuild) {
    for (std::size_t channels : {1, 3}) {
        test::TempDir dir("synth_rt");
        const auto cfg = small_config(32, channels);
        synth_generate(cfg, dir.path());
        const auto loaded = load_dataset(dir.path());
        const auto built = synth_build(cfg);
        EXPECT_EQ(loaded.train.pixels, built.train.pixels);
        EXPECT_EQ(loaded.test.pixels, built.test.pixels);
        EXPECT_EQ(loaded.train.labels, built.train.labels);
        EXPECT_EQ(loaded.train.artifacts, built.train.artifacts);
        EXPECT_EQ(loaded.train.amplitudes, built.train.amplitudes);
        EXPECT_EQ(loaded.fingerprint, built.fingerprint);
        if (channels == 1) EXPECT_TRUE(std::filesystem::exists(dir / "train/fake/00000.pgm"));
    }
}

std::string slurp(const std::filesystem::path& p) {
    const auto b = read_file_bytes(p);
    return {b.begin(), b.end()};
}

void spit(const std::filesystem::path& p, const std::string& s) {
    write_file_bytes(p, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

TEST(Loader, Errors) {
    test::TempDir empty("empty");
    EXPECT_WT_ERROR(load_dataset(empty.path()), ErrorKind::io);
    EXPECT_WT_ERROR(load_dataset(empty / "nope"), ErrorKind::io);
    spit(empty / "manifest.csv", std::string(kManifestHeader) + "\n");
    EXPECT_WT_ERROR(load_dataset(empty.path()), ErrorKind::format);
    spit(empty / "manifest.csv", "path,label\n");
    EXPECT_WT_ERROR(load_dataset(empty.path()), ErrorKind::format);

    test::TempDir dir("loader");
    synth_generate(small_config(), dir.path());
    const auto manifest = slurp(dir / "manifest.csv");

    std::filesystem::remove(dir / "train/fake/00003.ppm");
    EXPECT_WT_ERROR(load_dataset(dir.path()), ErrorKind::io);
    synth_generate(small_config(), dir.path());

    auto bytes = read_file_bytes(dir / "test/real/00001.ppm");
    bytes.back() ^= 0x40;
    write_file_bytes(dir / "test/real/00001.ppm", bytes);
    EXPECT_WT_ERROR(load_dataset(dir.path()), ErrorKind::format);

    // Truncated pixmap whose checksum was updated: the decoder must object.
    synth_generate(small_config(), dir.path());
    auto good = read_file_bytes(dir / "train/real/00002.ppm");
    good.resize(good.size() - 10);
    write_file_bytes(dir / "train/real/00002.ppm", good);
    const auto old_sha = sha256_file(dir / "train/real/00002.ppm");
    std::string patched = manifest;
    const auto row = patched.find("train/real/00002.ppm");
    ASSERT_NE(row, std::string::npos);
    const auto sha_pos = patched.find('\n', row) - 64;
    patched.replace(sha_pos, 64, old_sha);
    spit(dir / "manifest.csv", patched);
    try {
        load_dataset(dir.path());
        ADD_FAILURE() << "corrupt pixmap accepted";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::format);
        EXPECT_NE(std::string(e.what()).find("corrupt pixmap"), std::string::npos) << e.what();
    }

    // Real sample with artifact metadata.
    synth_generate(small_config(), dir.path());
    std::string meta = manifest;
    const auto real_row = meta.find("train/real/00000.ppm,train,real,,");
    ASSERT_NE(real_row, std::string::npos);
    meta.replace(real_row, std::string("train/real/00000.ppm,train,real,,").size(), "train/real/00000.ppm,train,real,seam,");
    spit(dir / "manifest.csv", meta);
    EXPECT_WT_ERROR(load_dataset(dir.path()), ErrorKind::format);
}

TEST(Loader, EpochOrderIsSeededPermutation) {
    const auto a = epoch_order(100, 5, 0);
    const auto b = epoch_order(100, 5, 1);
    EXPECT_NE(a, b);
    EXPECT_EQ(a, epoch_order(100, 5, 0));
    EXPECT_EQ(b, epoch_order(100, 5, 1));
    EXPECT_NE(a, epoch_order(100, 6, 0));
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Netpbm, RejectsCorruptInput) {
    const std::string cases[] = {"", "P3\n1 1\n255\n\x01\x02\x03", "P6\n0 1\n255\n", "P6\n1 1\n65535\n\x01\x02\x03",
                                 "P6\n2 1\n255\n\x01\x02\x03", "P5\n1 1\n255"};
    for (const auto& c : cases) {
        const std::vector<std::uint8_t> bytes(c.begin(), c.end());
        EXPECT_WT_ERROR(decode_pnm(bytes), ErrorKind::format);
    }
    const std::string ok = "P5\n# comment\n2 1\n255\n\x07\x09";
    const auto img = decode_pnm(std::vector<std::uint8_t>(ok.begin(), ok.end()));
    EXPECT_EQ(img.width, 2u);
    EXPECT_EQ(img.at(1, 0, 0), 9);
}

// --- sensitivity ----------------------------------------------------------

class ConstantModel final : public Model {
   public:
    ConstantModel(ArchSpec spec, int cls) : Model(spec), cls_(cls) {}
    std::vector<std::string> feature_layers() const override { return {}; }
    std::vector<std::string> dense_layers() const override { return {}; }

   private:
    Tensor run(const Tensor& batch, bool, FeatureMaps*) override {
        Tensor out(Shape{batch.dim(0), 2}, 0.0f);
        for (std::size_t n = 0; n < batch.dim(0); ++n) out[n * 2 + static_cast<std::size_t>(cls_)] = 1.0f;
        return out;
    }
    std::unique_ptr<Model> copy_self() const override { return std::make_unique<ConstantModel>(*this); }
    int cls_;
};

TEST(Sensitivity, ConstantModels) {
    SynthConfig cfg = small_config();
    cfg.test_samples = 400;
    const auto data = synth_build(cfg);
    ArchSpec spec{ArchId::cnn5_desk, {3, 32, 32}, 2};
    ConstantModel fake(spec, kFakeLabel), real(spec, kRealLabel);
    for (auto a : {ArtifactId::seam, ArtifactId::checker, ArtifactId::noise, ArtifactId::tint}) {
        const auto s1 = artifact_sensitivity(fake, data.test, a);
        EXPECT_EQ(s1.rate, 1.0);
        EXPECT_GE(s1.samples, kMinSensitivitySamples);
        EXPECT_EQ(artifact_sensitivity(real, data.test, a).rate, 0.0);
    }
}

TEST(Sensitivity, DirectCountAndInterval) {
    const std::vector<int> preds{1, 1, 0, 1, 1, 0, 1, 1, 0, 1};
    const auto s = estimate_sensitivity(preds);
    EXPECT_EQ(s.detected, 7u);
    EXPECT_DOUBLE_EQ(s.rate, 0.7);
    // Wilson 95% for 7/10: [0.3968, 0.8922].
    EXPECT_NEAR(s.half_width, (0.892209 - 0.396791) / 2, 1e-5);
    EXPECT_WT_ERROR(estimate_sensitivity(std::vector<int>{}), ErrorKind::invalid_argument);
}

TEST(Sensitivity, TooFewSamplesFails) {
    const auto data = synth_build(small_config());
    ArchSpec spec{ArchId::cnn5_desk, {3, 32, 32}, 2};
    ConstantModel fake(spec, kFakeLabel);
    EXPECT_WT_ERROR(artifact_sensitivity(fake, data.test, ArtifactId::seam), ErrorKind::invalid_argument);
}

SensitivityTable table(std::vector<double> freq, std::vector<std::vector<double>> sens) {
    SensitivityTable t;
    t.sparsities = {0.0, 0.6, 0.8};
    for (std::size_t a = 0; a < freq.size(); ++a) t.artifacts.push_back("a" + std::to_string(a));
    t.frequencies = std::move(freq);
    t.sensitivity = std::move(sens);
    return t;
}

TEST(SurvivalBias, ConstantSeriesHasUndefinedCorrelation) {
    const auto rep = survival_bias_report(table({10, 1}, {{0.9, 0.9, 0.9}, {0.8, 0.8, 0.8}}));
    for (const auto& r : rep.rows) EXPECT_EQ(r.retention, 1.0);
    EXPECT_EQ(rep.correlation_status, CorrelationStatus::undefined);
    EXPECT_TRUE(std::isnan(rep.rank_correlation));
    EXPECT_FALSE(rep.negative_bias);
}

TEST(SurvivalBias, RareLossSetsNegativeBias) {
    const auto rep = survival_bias_report(table({10, 1}, {{0.95, 0.93, 0.90}, {0.9, 0.8, 0.6}}));
    EXPECT_TRUE(rep.negative_bias);
    ASSERT_EQ(rep.rows.size(), 2u);
    EXPECT_EQ(rep.rows[0].artifact, "a1");
    EXPECT_NEAR(rep.rows[0].drop, 0.3, 1e-12);
    EXPECT_NEAR(rep.rows[1].drop, 0.05, 1e-12);
    EXPECT_EQ(rep.correlation_status, CorrelationStatus::ok);
    EXPECT_DOUBLE_EQ(rep.rank_correlation, 1.0);

    const auto flipped = survival_bias_report(table({10, 1}, {{0.9, 0.8, 0.6}, {0.95, 0.93, 0.90}}));
    EXPECT_FALSE(flipped.negative_bias);
    EXPECT_DOUBLE_EQ(flipped.rank_correlation, -1.0);
}

TEST(SurvivalBias, EqualFrequenciesNotApplicable) {
    const auto rep = survival_bias_report(table({1, 1, 1}, {{0.9, 0.8, 0.7}, {0.9, 0.9, 0.5}, {1, 1, 1}}));
    EXPECT_EQ(rep.correlation_status, CorrelationStatus::not_applicable);
    EXPECT_FALSE(rep.negative_bias);
}

TEST(SurvivalBias, DegenerateInputsFail) {
    EXPECT_WT_ERROR(survival_bias_report(table({1}, {{0.9, 0.8, 0.7}})), ErrorKind::invalid_argument);
    auto t = table({10, 1}, {{0.9, 0.8}, {0.9, 0.8}});
    t.sparsities = {0.0, 0.8};
    EXPECT_WT_ERROR(survival_bias_report(t), ErrorKind::invalid_argument);
    t = table({10, 1}, {{0.9, 0.8, 0.7}, {0.9, 0.8, 0.7}});
    t.sparsities = {0.0, 0.8, 0.6};
    EXPECT_WT_ERROR(survival_bias_report(t), ErrorKind::invalid_argument);
}

TEST(SurvivalBias, RanksAndSpearman) {
    const std::vector<double> v{3, 1, 3, 2};
    EXPECT_EQ(average_ranks(v), (std::vector<double>{3.5, 1, 3.5, 2}));
    const std::vector<double> a{1, 2, 3, 4}, b{10, 20, 30, 40}, c{4, 3, 2, 1};
    EXPECT_DOUBLE_EQ(spearman(a, b), 1.0);
    EXPECT_DOUBLE_EQ(spearman(a, c), -1.0);
}

}  // namespace
}  // namespace wt
