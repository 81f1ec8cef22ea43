#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "piheart/rng.hpp"

namespace piheart {

/// One blood-volume-pulse reading. `t_ms` counts from stream start.
struct BvpSample {
    std::int64_t t_ms = 0;
    double value = 0.0;

    bool operator==(const BvpSample&) const = default;
};

/// Timestamp of sample `index` at `sample_rate_hz`, rounded to whole ms.
std::int64_t sample_timestamp_ms(std::int64_t index, double sample_rate_hz);

/// Target heart rate over time. Each segment either holds a rate or ramps
/// linearly between two rates; the last segment's end rate holds forever.
class HrProfile {
public:
    struct Segment {
        double duration_s = 0.0;
        double from_bpm = 0.0;
        double to_bpm = 0.0;
    };

    HrProfile() = default;
    explicit HrProfile(std::vector<Segment> segments);

    static HrProfile constant(double bpm);

    double bpm_at(double t_s) const;
    const std::vector<Segment>& segments() const noexcept { return segments_; }

    /// Throws ConfigError unless every rate lies in (0, 300] and durations are positive.
    void validate() const;

private:
    std::vector<Segment> segments_;
};

/// Beat morphology, positions and widths are fractions of the beat period.
struct PulseShape {
    double systolic_amplitude = 1.0;
    double systolic_center = 0.15;
    double systolic_width = 0.30;
    double notch_ratio = 0.5;     // notch amplitude relative to the systolic peak
    double notch_position = 0.40; // notch center measured from beat onset
    double notch_width = 0.25;

    /// Waveform value at beat phase in [0, 1).
    double at_phase(double phase) const;
};

struct BvpConfig {
    double sample_rate_hz = 100.0;
    HrProfile hr_profile = HrProfile::constant(72.0);
    PulseShape pulse_shape{};
    double noise_sigma = 0.0;
    double artifact_rate = 0.0;      // bursts per minute
    double artifact_amplitude = 2.0; // used when artifact_rate > 0
    std::uint64_t seed = 0;

    void validate() const;
};

/// Streaming movement-artifact model: Poisson-timed bursts, each a slow
/// half-sine swell (4 s, well under 40 bpm) plus a one-sample spike at onset.
class ArtifactInjector {
public:
    static constexpr double kBurstSeconds = 4.0;

    ArtifactInjector(double rate_per_min, double burst_amplitude, double sample_rate_hz, std::uint64_t seed);

    /// Adds the artifact contribution for the next sample in sequence.
    double apply(double value);

    /// Onset sample indices scheduled so far.
    const std::vector<std::int64_t>& onsets() const noexcept { return onsets_; }

private:
    void schedule_until(std::int64_t index);

    double rate_per_sample_;
    double amplitude_;
    std::int64_t burst_len_;
    PortableRng rng_;
    double next_onset_ = 0.0;
    std::int64_t index_ = 0;
    std::vector<std::int64_t> onsets_;
    std::vector<std::int64_t> active_;
};

/// Unbounded sample generator. Rate changes take effect at beat boundaries.
class BvpGenerator {
public:
    explicit BvpGenerator(BvpConfig config);

    BvpSample next();
    std::int64_t produced() const noexcept { return index_; }

    /// Onset times (seconds) of every beat started so far.
    const std::vector<double>& beat_onsets() const noexcept { return beat_onsets_; }

private:
    BvpConfig config_;
    PortableRng noise_rng_;
    ArtifactInjector artifacts_;
    std::int64_t index_ = 0;
    double beat_start_s_ = 0.0;
    double beat_period_s_ = 0.0;
    std::vector<double> beat_onsets_;
};

/// floor(duration_s * sample_rate_hz) samples of synthetic BVP.
std::vector<BvpSample> synthesize(const BvpConfig& config, double duration_s);

/// Returns a copy of `stream` with movement artifacts added.
std::vector<BvpSample> inject_artifacts(std::span<const BvpSample> stream, double artifact_rate,
                                        double burst_amplitude, std::uint64_t seed,
                                        double sample_rate_hz = 100.0);

/// Onset indices the injector would place in an `n_samples` stream.
std::vector<std::int64_t> artifact_onsets(std::int64_t n_samples, double artifact_rate,
                                          double sample_rate_hz, std::uint64_t seed);

/// Parses BVP CSV (`t_ms,value`, header optional). Throws InputError with the line.
std::vector<BvpSample> replay(const std::filesystem::path& path);
std::vector<BvpSample> parse_bvp_csv(std::istream& in);

void write_bvp_csv(std::ostream& out, std::span<const BvpSample> samples);
void write_bvp_csv(const std::filesystem::path& path, std::span<const BvpSample> samples);

} // namespace piheart
