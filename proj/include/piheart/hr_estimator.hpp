#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "piheart/bvp.hpp"

namespace piheart {

enum class EstimatorMode {
    Magnitude, // argmax |X[k]|
    RealPart,  // argmax |Re X[k]|, as the original device script did
    PeakInterval,
};

std::string_view to_string(EstimatorMode mode);
/// Accepts "magnitude", "real-part" and "peak-interval"; throws ConfigError otherwise.
EstimatorMode parse_estimator_mode(std::string_view text);

struct EstimatorConfig {
    double sample_rate_hz = 100.0;
    double window_seconds = 30.0;
    double overlap = 0.75;
    double min_bpm = 40.0;
    double max_bpm = 300.0;

    std::size_t window_samples() const;
    std::size_t hop_samples() const;
    /// Width of one DFT bin in bpm: fs / N * 60.
    double bin_width_bpm() const;
    /// Inclusive bin range whose centre frequency lies inside [min_bpm, max_bpm].
    std::size_t first_bin() const;
    std::size_t last_bin() const;

    void validate() const;
};

struct HrEstimate {
    double bpm = 0.0;
    std::int64_t bin_index = 0;
    double bin_width_bpm = 0.0;
    std::int64_t window_end_t = 0;
    EstimatorMode mode = EstimatorMode::Magnitude;
    bool low_confidence = false;
};

class NoDominantFrequency : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InsufficientPeaks : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One STFT window: max-abs normalisation, DFT, band restriction to
/// [min_bpm, max_bpm], argmax (lower bin wins ties), bpm = k * fs / N * 60.
/// `window_end_t` of the result is left at 0.
HrEstimate estimate_window(std::span<const double> samples, EstimatorMode mode = EstimatorMode::Magnitude,
                           const EstimatorConfig& config = {});

/// Beat-interval estimate used as an independent check on the STFT path.
///
/// Local maxima above 60% of the normalised window maximum are taken as
/// beats (0.2 s refractory, the higher peak wins inside it), refined with a
/// parabolic fit, and the rate is 60 / median interval.
HrEstimate oracle_peak_interval(std::span<const double> samples, double sample_rate_hz = 100.0);

/// Streaming STFT front end. Emits one estimate once `window_samples()` have
/// arrived and then every `hop_samples()`.
class SlidingWindow {
public:
    explicit SlidingWindow(EstimatorConfig config = {});

    /// Throws StreamError on out-of-order timestamps or a gap of more than
    /// one sample period; the window is left unchanged in that case.
    std::optional<HrEstimate> push_sample(const BvpSample& sample, EstimatorMode mode = EstimatorMode::Magnitude);

    void reset();

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t hop() const noexcept { return hop_; }
    std::uint64_t total_pushed() const noexcept { return total_pushed_; }
    const EstimatorConfig& config() const noexcept { return config_; }

    /// Most recent `capacity()` samples, oldest first.
    std::vector<double> snapshot() const;

private:
    EstimatorConfig config_;
    std::size_t capacity_;
    std::size_t hop_;
    std::vector<double> ring_;
    std::size_t head_ = 0;
    std::uint64_t total_pushed_ = 0;
    std::optional<std::int64_t> last_t_;
};

/// Batch equivalent of streaming through SlidingWindow: one estimate per
/// hop-aligned window of `samples`.
std::vector<HrEstimate> estimate_stream(std::span<const BvpSample> samples,
                                        EstimatorMode mode = EstimatorMode::Magnitude,
                                        const EstimatorConfig& config = {});

} // namespace piheart
