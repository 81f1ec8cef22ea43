#include <gtest/gtest.h>

#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "piheart/bvp.hpp"
#include "piheart/errors.hpp"

namespace piheart {
namespace {

std::vector<double> values_of(const std::vector<BvpSample>& s) {
    std::vector<double> v;
    v.reserve(s.size());
    for (const auto& x : s) {
        v.push_back(x.value);
    }
    return v;
}

BvpConfig clean(double bpm) {
    BvpConfig c;
    c.hr_profile = HrProfile::constant(bpm);
    return c;
}

TEST(Synthesize, SampleCountAndTimestamps) {
    const auto s = synthesize(clean(60), 30.0);
    ASSERT_EQ(s.size(), 3000u);
    for (std::size_t k = 0; k < s.size(); ++k) {
        EXPECT_EQ(s[k].t_ms, static_cast<std::int64_t>(k) * 10);
    }
    EXPECT_TRUE(synthesize(clean(60), 0.005).empty());
}

TEST(Synthesize, TimestampRoundingAtOddRates) {
    BvpConfig c = clean(60);
    c.sample_rate_hz = 30.0;
    const auto s = synthesize(c, 2.0);
    ASSERT_EQ(s.size(), 60u);
    for (std::size_t k = 0; k < s.size(); ++k) {
        EXPECT_EQ(s[k].t_ms, std::llround(static_cast<double>(k) * 1000.0 / 30.0));
    }
}

TEST(Synthesize, SixtyBpmIsPeriodicAtOneHertz) {
    const auto v = values_of(synthesize(clean(60), 30.0));
    // 1 Hz at 100 Hz sampling: exact 100-sample period.
    for (std::size_t i = 0; i + 100 < v.size(); ++i) {
        ASSERT_NEAR(v[i], v[i + 100], 1e-9) << "at " << i;
    }
    EXPECT_EQ(testing::direct_dft_argmax(v, 1, 1500, false), 30u); // 30 cycles in 30 s
}

TEST(Synthesize, AutocorrelationAt72Bpm) {
    const auto v = values_of(synthesize(clean(72), 30.0));
    const auto lag = testing::autocorrelation_peak(v, 50, 120);
    EXPECT_TRUE(lag == 83 || lag == 84) << lag;
}

TEST(Synthesize, SpectralPeakWithinOneBinOfRate) {
    for (double bpm : {48.0, 66.0, 72.0, 100.0, 133.0, 180.0}) {
        const auto v = values_of(synthesize(clean(bpm), 30.0));
        const auto k = testing::direct_dft_argmax(v, 1, 1500, false);
        const double expected = bpm / 60.0 * 30.0;
        EXPECT_LE(std::abs(static_cast<double>(k) - expected), 1.0) << bpm;
    }
}

TEST(Synthesize, OneSystolicPeakAndSmallerNotchPerBeat) {
    const auto v = values_of(synthesize(clean(60), 1.0));
    std::vector<std::pair<std::size_t, double>> maxima;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        if (v[i] > v[i - 1] && v[i] >= v[i + 1]) {
            maxima.emplace_back(i, v[i]);
        }
    }
    ASSERT_EQ(maxima.size(), 2u);
    EXPECT_EQ(maxima[0].first, 15u);
    EXPECT_EQ(maxima[1].first, 40u);
    EXPECT_GT(maxima[0].second, maxima[1].second);
    EXPECT_NEAR(maxima[1].second / maxima[0].second, 0.5, 0.02);
}

TEST(Synthesize, DeterministicUnderSeed) {
    BvpConfig c = clean(75);
    c.noise_sigma = 0.05;
    c.artifact_rate = 4.0;
    c.seed = 42;
    const auto a = synthesize(c, 20.0);
    const auto b = synthesize(c, 20.0);
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(BvpSample)));
    c.seed = 43;
    EXPECT_NE(synthesize(c, 20.0), a);
}

TEST(Synthesize, RateChangeWaitsForBeatBoundary) {
    BvpConfig c;
    c.hr_profile = HrProfile({{1.5, 60, 60}, {10, 120, 120}});
    BvpGenerator gen(c);
    for (int i = 0; i < 500; ++i) {
        gen.next();
    }
    const auto& onsets = gen.beat_onsets();
    ASSERT_GE(onsets.size(), 5u);
    // Beat starting at 1.0 s runs to 2.0 s at 60 bpm; the 120 bpm rate applies from 2.0 s.
    EXPECT_DOUBLE_EQ(onsets[1], 1.0);
    EXPECT_DOUBLE_EQ(onsets[2], 2.0);
    EXPECT_DOUBLE_EQ(onsets[3], 2.5);
}

TEST(Synthesize, RejectsInvalidConfig) {
    BvpConfig c = clean(72);
    c.sample_rate_hz = 0;
    EXPECT_THROW(synthesize(c, 1.0), ConfigError);
    EXPECT_THROW(synthesize(clean(0), 1.0), ConfigError);
    EXPECT_THROW(synthesize(clean(301), 1.0), ConfigError);
    EXPECT_NO_THROW(synthesize(clean(300), 1.0));
    c = clean(72);
    c.noise_sigma = -1;
    EXPECT_THROW(synthesize(c, 1.0), ConfigError);
    EXPECT_THROW(synthesize(clean(72), 0.0), ConfigError);
    EXPECT_THROW(synthesize(clean(72), -2.0), ConfigError);
}

TEST(HrProfileTest, RampInterpolates) {
    HrProfile p({{10, 60, 60}, {10, 60, 120}});
    EXPECT_DOUBLE_EQ(p.bpm_at(5), 60);
    EXPECT_DOUBLE_EQ(p.bpm_at(15), 90);
    EXPECT_DOUBLE_EQ(p.bpm_at(100), 120);
}

TEST(Artifacts, ZeroRateOrAmplitudeIsIdentity) {
    const auto s = synthesize(clean(72), 60.0);
    EXPECT_EQ(inject_artifacts(s, 0.0, 5.0, 7), s);
    EXPECT_EQ(inject_artifacts(s, 6.0, 0.0, 7), s);
}

TEST(Artifacts, BurstCountMatchesSeededSchedule) {
    const auto s = synthesize(clean(72), 60.0);
    const auto out = inject_artifacts(s, 6.0, 3.0, 1234);

    // Oracle: re-run the seeded schedule and count onsets independently from the output.
    const auto onsets = artifact_onsets(static_cast<std::int64_t>(s.size()), 6.0, 100.0, 1234);
    std::size_t spikes = 0;
    double prev = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        // The swell changes by at most A*pi/400 per sample; only an onset spike jumps by ~A.
        const double artifact = out[i].value - s[i].value;
        if (artifact - prev >= 0.9 * 3.0) {
            ++spikes;
        }
        prev = artifact;
    }
    EXPECT_EQ(spikes, onsets.size());
    EXPECT_GE(onsets.size(), 1u);
    EXPECT_LE(onsets.size(), 15u);
    EXPECT_EQ(inject_artifacts(s, 6.0, 3.0, 1234), out);
}

TEST(Artifacts, MeanRateOverManySeeds) {
    double total = 0.0;
    const int seeds = 200;
    for (int seed = 0; seed < seeds; ++seed) {
        total += static_cast<double>(artifact_onsets(6000, 6.0, 100.0, static_cast<std::uint64_t>(seed)).size());
    }
    // Poisson mean 6, standard error of the mean sqrt(6/200) ~ 0.17.
    EXPECT_NEAR(total / seeds, 6.0, 0.7);
}

TEST(Artifacts, BurstEnergyIsBelowBand) {
    std::vector<BvpSample> zero(3000);
    for (std::size_t i = 0; i < zero.size(); ++i) {
        zero[i].t_ms = static_cast<std::int64_t>(i) * 10;
    }
    auto out = inject_artifacts(zero, 6.0, 1.0, 99);
    // Remove the spikes to look at the swell alone.
    const auto onsets = artifact_onsets(3000, 6.0, 100.0, 99);
    std::vector<double> v;
    for (std::size_t i = 0; i < out.size(); ++i) {
        v.push_back(out[i].value);
    }
    for (auto o : onsets) {
        v[static_cast<std::size_t>(o)] -= 1.0;
    }
    double below = 0.0;
    double inband = 0.0;
    for (std::size_t k = 1; k <= 150; ++k) {
        const double e = std::norm(testing::direct_dft_bin(v, k));
        (k < 20 ? below : inband) += e;
    }
    EXPECT_GT(below, 20.0 * inband);
}

// ---------------------------------------------------------------------------
// CSV replay

class ReplayTest : public ::testing::Test {
protected:
    std::filesystem::path path_ = std::filesystem::temp_directory_path() /
                                  ("bvp_replay_" + std::to_string(::getpid()) + ".csv");
    void write(const std::string& text) {
        std::ofstream(path_, std::ios::binary) << text;
    }
    void TearDown() override { std::filesystem::remove(path_); }
};

TEST_F(ReplayTest, ParsesRowsWithoutHeader) {
    write("0,0.10\n10,0.30");
    const auto s = replay(path_);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0], (BvpSample{0, 0.10}));
    EXPECT_EQ(s[1], (BvpSample{10, 0.30}));
}

TEST_F(ReplayTest, EmptyFileIsEmptyStream) {
    write("");
    EXPECT_TRUE(replay(path_).empty());
    write("t_ms,value\n");
    EXPECT_TRUE(replay(path_).empty());
}

TEST_F(ReplayTest, BadValueNamesLine) {
    write("10,abc\n");
    try {
        replay(path_);
        FAIL() << "expected InputError";
    } catch (const InputError& e) {
        EXPECT_EQ(e.line(), 1u);
    }
    write("t_ms,value\n0,1\n10,2\n20\n");
    try {
        replay(path_);
        FAIL() << "expected InputError";
    } catch (const InputError& e) {
        EXPECT_EQ(e.line(), 4u);
    }
}

TEST_F(ReplayTest, NonIncreasingTimestampRejected) {
    write("0,1\n10,2\n10,3\n");
    try {
        replay(path_);
        FAIL();
    } catch (const InputError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST_F(ReplayTest, MissingFile) { EXPECT_THROW(replay("/nonexistent/dir/x.csv"), InputError); }

TEST_F(ReplayTest, WriteThenReplayIsExact) {
    BvpConfig c = clean(77);
    c.noise_sigma = 0.1;
    c.seed = 5;
    const auto s = synthesize(c, 5.0);
    write_bvp_csv(path_, s);
    std::ifstream in(path_);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "t_ms,value");
    EXPECT_EQ(replay(path_), s);
}

} // namespace
} // namespace piheart
