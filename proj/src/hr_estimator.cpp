#include "piheart/hr_estimator.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "piheart/errors.hpp"

namespace piheart {

namespace {

struct FftwFree {
    void operator()(void* p) const { fftw_free(p); }
};
using RealBuffer = std::unique_ptr<double[], FftwFree>;
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

// FFTW planning is not thread-safe; execution with the new-array API is.
class R2cPlan {
public:
    explicit R2cPlan(std::size_t n) : n_(n) {
        RealBuffer in(fftw_alloc_real(n));
        ComplexBuffer out(fftw_alloc_complex(n / 2 + 1));
        plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
    }
    ~R2cPlan() { fftw_destroy_plan(plan_); }
    R2cPlan(const R2cPlan&) = delete;
    R2cPlan& operator=(const R2cPlan&) = delete;

    std::vector<std::complex<double>> run(std::span<const double> input) const {
        RealBuffer in(fftw_alloc_real(n_));
        ComplexBuffer out(fftw_alloc_complex(n_ / 2 + 1));
        std::copy(input.begin(), input.end(), in.get());
        fftw_execute_dft_r2c(plan_, in.get(), out.get());
        std::vector<std::complex<double>> spectrum(n_ / 2 + 1);
        for (std::size_t k = 0; k < spectrum.size(); ++k) {
            spectrum[k] = {out[k][0], out[k][1]};
        }
        return spectrum;
    }

private:
    std::size_t n_;
    fftw_plan plan_;
};

const R2cPlan& plan_for(std::size_t n) {
    static std::mutex mutex;
    static std::map<std::size_t, std::unique_ptr<R2cPlan>> plans;
    std::lock_guard lock(mutex);
    auto& slot = plans[n];
    if (!slot) {
        slot = std::make_unique<R2cPlan>(n);
    }
    return *slot;
}

double max_abs(std::span<const double> xs) {
    double m = 0.0;
    for (double x : xs) {
        m = std::max(m, std::abs(x));
    }
    return m;
}

} // namespace

std::string_view to_string(EstimatorMode mode) {
    switch (mode) {
    case EstimatorMode::Magnitude:
        return "magnitude";
    case EstimatorMode::RealPart:
        return "real-part";
    case EstimatorMode::PeakInterval:
        return "peak-interval";
    }
    return "unknown";
}

EstimatorMode parse_estimator_mode(std::string_view text) {
    if (text == "magnitude") {
        return EstimatorMode::Magnitude;
    }
    if (text == "real-part") {
        return EstimatorMode::RealPart;
    }
    if (text == "peak-interval") {
        return EstimatorMode::PeakInterval;
    }
    throw ConfigError("unknown estimator mode '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// EstimatorConfig

std::size_t EstimatorConfig::window_samples() const {
    return static_cast<std::size_t>(std::llround(window_seconds * sample_rate_hz));
}

std::size_t EstimatorConfig::hop_samples() const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(window_samples()) * (1.0 - overlap)));
}

double EstimatorConfig::bin_width_bpm() const {
    return sample_rate_hz / static_cast<double>(window_samples()) * 60.0;
}

std::size_t EstimatorConfig::first_bin() const {
    // Rounding slack so an exact boundary (40 bpm -> bin 20) stays inside.
    const double k = min_bpm / bin_width_bpm();
    return static_cast<std::size_t>(std::ceil(k - 1e-9));
}

std::size_t EstimatorConfig::last_bin() const {
    const double k = max_bpm / bin_width_bpm();
    return std::min(static_cast<std::size_t>(std::floor(k + 1e-9)), window_samples() / 2);
}

void EstimatorConfig::validate() const {
    if (!(sample_rate_hz > 0.0)) {
        throw ConfigError("sample rate must be positive");
    }
    if (!(window_seconds > 0.0) || window_samples() < 2) {
        throw ConfigError("window must hold at least two samples");
    }
    if (!(overlap >= 0.0 && overlap < 1.0) || hop_samples() == 0) {
        throw ConfigError("overlap must be in [0, 1) and leave a non-zero hop");
    }
    if (!(min_bpm > 0.0 && min_bpm < max_bpm)) {
        throw ConfigError("bpm band must satisfy 0 < min < max");
    }
    if (first_bin() > last_bin()) {
        throw ConfigError("bpm band contains no DFT bin");
    }
}

// ---------------------------------------------------------------------------
// Single window

HrEstimate estimate_window(std::span<const double> samples, EstimatorMode mode, const EstimatorConfig& config) {
    const std::size_t n = config.window_samples();
    if (samples.size() != n) {
        throw ContractError("estimate_window needs exactly " + std::to_string(n) + " samples, got " +
                            std::to_string(samples.size()));
    }
    if (mode == EstimatorMode::PeakInterval) {
        return oracle_peak_interval(samples, config.sample_rate_hz);
    }
    const double peak = max_abs(samples);
    if (peak == 0.0 || !std::isfinite(peak)) {
        throw NoDominantFrequency("window is all zero");
    }

    std::vector<double> normalized(samples.begin(), samples.end());
    for (double& x : normalized) {
        x /= peak;
    }
    const auto spectrum = plan_for(n).run(normalized);

    // Scores within rounding noise of each other are a tie; the lower bin keeps it.
    constexpr double kTieTolerance = 1e-9;
    std::size_t best_bin = config.first_bin();
    double best = -1.0;
    for (std::size_t k = config.first_bin(); k <= config.last_bin(); ++k) {
        const double score = mode == EstimatorMode::RealPart ? std::abs(spectrum[k].real()) : std::abs(spectrum[k]);
        if (score > best + kTieTolerance * std::max(best, 1.0)) {
            best = score;
            best_bin = k;
        }
    }

    HrEstimate est;
    est.bin_index = static_cast<std::int64_t>(best_bin);
    est.bin_width_bpm = config.bin_width_bpm();
    est.bpm = static_cast<double>(best_bin) * config.sample_rate_hz / static_cast<double>(n) * 60.0;
    est.mode = mode;
    est.low_confidence = best < 1e-9 * static_cast<double>(n);
    return est;
}

HrEstimate oracle_peak_interval(std::span<const double> samples, double sample_rate_hz) {
    const double peak = max_abs(samples);
    if (samples.size() < 3 || peak == 0.0 || !std::isfinite(peak)) {
        throw InsufficientPeaks("no beats in window");
    }
    const double threshold = 0.6;
    const auto refractory = static_cast<std::size_t>(std::llround(0.2 * sample_rate_hz));
    auto at = [&](std::size_t i) { return samples[i] / peak; };

    struct Peak {
        std::size_t index;
        double value;
        double position;
    };
    std::vector<Peak> peaks;
    for (std::size_t i = 1; i + 1 < samples.size(); ++i) {
        const double v = at(i);
        if (v < threshold || !(v > at(i - 1) && v >= at(i + 1))) {
            continue;
        }
        // Vertex of the parabola through the three neighbouring samples.
        const double a = at(i - 1);
        const double c = at(i + 1);
        const double denom = a - 2.0 * v + c;
        const double offset = denom != 0.0 ? 0.5 * (a - c) / denom : 0.0;
        const Peak p{i, v, static_cast<double>(i) + offset};
        if (!peaks.empty() && i - peaks.back().index < refractory) {
            if (p.value > peaks.back().value) {
                peaks.back() = p;
            }
            continue;
        }
        peaks.push_back(p);
    }
    if (peaks.size() < 2) {
        throw InsufficientPeaks("fewer than two peaks detected");
    }

    std::vector<double> intervals;
    intervals.reserve(peaks.size() - 1);
    for (std::size_t i = 1; i < peaks.size(); ++i) {
        intervals.push_back((peaks[i].position - peaks[i - 1].position) / sample_rate_hz);
    }
    std::sort(intervals.begin(), intervals.end());
    const std::size_t mid = intervals.size() / 2;
    const double median =
        intervals.size() % 2 ? intervals[mid] : 0.5 * (intervals[mid - 1] + intervals[mid]);

    HrEstimate est;
    est.bpm = 60.0 / median;
    est.bin_width_bpm = sample_rate_hz / static_cast<double>(samples.size()) * 60.0;
    est.bin_index = std::llround(est.bpm / est.bin_width_bpm);
    est.mode = EstimatorMode::PeakInterval;
    return est;
}

// ---------------------------------------------------------------------------
// Streaming

SlidingWindow::SlidingWindow(EstimatorConfig config)
    : config_((config.validate(), config)),
      capacity_(config_.window_samples()),
      hop_(config_.hop_samples()),
      ring_(capacity_, 0.0) {}

std::optional<HrEstimate> SlidingWindow::push_sample(const BvpSample& sample, EstimatorMode mode) {
    if (last_t_) {
        if (sample.t_ms <= *last_t_) {
            throw StreamError("out-of-order sample at t=" + std::to_string(sample.t_ms) + " ms after t=" +
                              std::to_string(*last_t_) + " ms");
        }
        const double period_ms = 1000.0 / config_.sample_rate_hz;
        if (static_cast<double>(sample.t_ms - *last_t_) > 1.5 * period_ms) {
            throw StreamError("gap of " + std::to_string(sample.t_ms - *last_t_) + " ms before t=" +
                              std::to_string(sample.t_ms) + " ms");
        }
    }
    last_t_ = sample.t_ms;
    ring_[head_] = sample.value;
    head_ = (head_ + 1) % capacity_;
    ++total_pushed_;

    if (total_pushed_ < capacity_ || (total_pushed_ - capacity_) % hop_ != 0) {
        return std::nullopt;
    }
    const auto window = snapshot();
    auto est = estimate_window(window, mode, config_);
    est.window_end_t = sample.t_ms;
    return est;
}

void SlidingWindow::reset() {
    std::fill(ring_.begin(), ring_.end(), 0.0);
    head_ = 0;
    total_pushed_ = 0;
    last_t_.reset();
}

std::vector<double> SlidingWindow::snapshot() const {
    std::vector<double> out;
    out.reserve(capacity_);
    for (std::size_t i = 0; i < capacity_; ++i) {
        out.push_back(ring_[(head_ + i) % capacity_]);
    }
    return out;
}

std::vector<HrEstimate> estimate_stream(std::span<const BvpSample> samples, EstimatorMode mode,
                                        const EstimatorConfig& config) {
    config.validate();
    const std::size_t n = config.window_samples();
    const std::size_t hop = config.hop_samples();
    std::vector<HrEstimate> out;
    std::vector<double> window(n);
    for (std::size_t start = 0; start + n <= samples.size(); start += hop) {
        for (std::size_t i = 0; i < n; ++i) {
            window[i] = samples[start + i].value;
        }
        auto est = estimate_window(window, mode, config);
        est.window_end_t = samples[start + n - 1].t_ms;
        out.push_back(est);
    }
    return out;
}

} // namespace piheart
