#include "piheart/bvp.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>
#include <string_view>

#include "piheart/errors.hpp"

namespace piheart {

namespace {

constexpr double kMaxBpm = 300.0;
constexpr std::uint64_t kArtifactStream = 0x9E3779B97F4A7C15ULL;

double raised_cosine(double offset, double width) {
    if (std::abs(offset) > width / 2.0) {
        return 0.0;
    }
    return 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * offset / width));
}

// Shortest offset between two phases on the unit circle.
double wrap_phase(double d) { return d - std::floor(d + 0.5); }

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) {
        s.remove_suffix(1);
    }
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    return s;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
    text = trim(text);
    if (text.empty()) {
        return false;
    }
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

} // namespace

std::int64_t sample_timestamp_ms(std::int64_t index, double sample_rate_hz) {
    return std::llround(static_cast<double>(index) * 1000.0 / sample_rate_hz);
}

// ---------------------------------------------------------------------------
// HrProfile

HrProfile::HrProfile(std::vector<Segment> segments) : segments_(std::move(segments)) {}

HrProfile HrProfile::constant(double bpm) { return HrProfile({Segment{1.0, bpm, bpm}}); }

double HrProfile::bpm_at(double t_s) const {
    if (segments_.empty()) {
        return 0.0;
    }
    double start = 0.0;
    for (const auto& seg : segments_) {
        if (t_s < start + seg.duration_s) {
            const double frac = std::clamp((t_s - start) / seg.duration_s, 0.0, 1.0);
            return seg.from_bpm + frac * (seg.to_bpm - seg.from_bpm);
        }
        start += seg.duration_s;
    }
    return segments_.back().to_bpm;
}

void HrProfile::validate() const {
    if (segments_.empty()) {
        throw ConfigError("hr_profile has no segments");
    }
    for (const auto& seg : segments_) {
        if (!(seg.duration_s > 0.0)) {
            throw ConfigError("hr_profile segment duration must be positive");
        }
        for (double bpm : {seg.from_bpm, seg.to_bpm}) {
            if (!(bpm > 0.0 && bpm <= kMaxBpm)) {
                throw ConfigError("hr_profile rate " + std::to_string(bpm) + " outside (0, 300] bpm");
            }
        }
    }
}

double PulseShape::at_phase(double phase) const {
    const double systolic = raised_cosine(wrap_phase(phase - systolic_center), systolic_width);
    const double notch = raised_cosine(wrap_phase(phase - notch_position), notch_width);
    return systolic_amplitude * (systolic + notch_ratio * notch);
}

void BvpConfig::validate() const {
    if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) {
        throw ConfigError("sample_rate_hz must be positive");
    }
    hr_profile.validate();
    if (!(noise_sigma >= 0.0)) {
        throw ConfigError("noise_sigma must be >= 0");
    }
    if (!(artifact_rate >= 0.0)) {
        throw ConfigError("artifact_rate must be >= 0");
    }
    if (!(artifact_amplitude >= 0.0)) {
        throw ConfigError("artifact amplitude must be >= 0");
    }
}

// ---------------------------------------------------------------------------
// ArtifactInjector

ArtifactInjector::ArtifactInjector(double rate_per_min, double burst_amplitude, double sample_rate_hz,
                                   std::uint64_t seed)
    : rate_per_sample_(rate_per_min / 60.0 / sample_rate_hz),
      amplitude_(burst_amplitude),
      burst_len_(std::max<std::int64_t>(1, std::llround(kBurstSeconds * sample_rate_hz))),
      rng_(seed) {
    if (!(burst_amplitude >= 0.0)) {
        throw ConfigError("burst amplitude must be >= 0");
    }
    if (!(rate_per_min >= 0.0)) {
        throw ConfigError("artifact rate must be >= 0");
    }
    if (rate_per_sample_ > 0.0) {
        next_onset_ = rng_.exponential(rate_per_sample_);
    }
}

void ArtifactInjector::schedule_until(std::int64_t index) {
    while (static_cast<std::int64_t>(std::floor(next_onset_)) <= index) {
        const auto onset = static_cast<std::int64_t>(std::floor(next_onset_));
        onsets_.push_back(onset);
        active_.push_back(onset);
        next_onset_ += rng_.exponential(rate_per_sample_);
    }
}

double ArtifactInjector::apply(double value) {
    const std::int64_t i = index_++;
    if (rate_per_sample_ <= 0.0 || amplitude_ == 0.0) {
        return value;
    }
    schedule_until(i);
    std::erase_if(active_, [&](std::int64_t onset) { return i - onset >= burst_len_; });
    for (std::int64_t onset : active_) {
        const auto k = static_cast<double>(i - onset);
        value += amplitude_ * std::sin(std::numbers::pi * k / static_cast<double>(burst_len_));
        if (i == onset) {
            value += amplitude_;
        }
    }
    return value;
}

// ---------------------------------------------------------------------------
// BvpGenerator

BvpGenerator::BvpGenerator(BvpConfig config)
    : config_((config.validate(), std::move(config))),
      noise_rng_(config_.seed),
      artifacts_(config_.artifact_rate, config_.artifact_amplitude, config_.sample_rate_hz,
                 config_.seed ^ kArtifactStream) {
    beat_period_s_ = 60.0 / config_.hr_profile.bpm_at(0.0);
    beat_onsets_.push_back(0.0);
}

BvpSample BvpGenerator::next() {
    const std::int64_t i = index_++;
    const double t = static_cast<double>(i) / config_.sample_rate_hz;
    // New rates are only picked up when a beat completes.
    while (t >= beat_start_s_ + beat_period_s_) {
        beat_start_s_ += beat_period_s_;
        beat_period_s_ = 60.0 / config_.hr_profile.bpm_at(beat_start_s_);
        beat_onsets_.push_back(beat_start_s_);
    }
    const double phase = (t - beat_start_s_) / beat_period_s_;
    double value = config_.pulse_shape.at_phase(phase);
    if (config_.noise_sigma > 0.0) {
        value += config_.noise_sigma * noise_rng_.normal();
    }
    value = artifacts_.apply(value);
    return BvpSample{sample_timestamp_ms(i, config_.sample_rate_hz), value};
}

std::vector<BvpSample> synthesize(const BvpConfig& config, double duration_s) {
    if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
        throw ConfigError("duration must be positive");
    }
    BvpGenerator gen(config);
    const auto n = static_cast<std::size_t>(std::floor(duration_s * config.sample_rate_hz));
    std::vector<BvpSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(gen.next());
    }
    return out;
}

std::vector<BvpSample> inject_artifacts(std::span<const BvpSample> stream, double artifact_rate,
                                        double burst_amplitude, std::uint64_t seed, double sample_rate_hz) {
    ArtifactInjector injector(artifact_rate, burst_amplitude, sample_rate_hz, seed);
    std::vector<BvpSample> out(stream.begin(), stream.end());
    for (auto& s : out) {
        s.value = injector.apply(s.value);
    }
    return out;
}

std::vector<std::int64_t> artifact_onsets(std::int64_t n_samples, double artifact_rate, double sample_rate_hz,
                                          std::uint64_t seed) {
    ArtifactInjector injector(artifact_rate, 1.0, sample_rate_hz, seed);
    for (std::int64_t i = 0; i < n_samples; ++i) {
        injector.apply(0.0);
    }
    auto onsets = injector.onsets();
    std::erase_if(onsets, [&](std::int64_t o) { return o >= n_samples; });
    return onsets;
}

// ---------------------------------------------------------------------------
// CSV

std::vector<BvpSample> parse_bvp_csv(std::istream& in) {
    std::vector<BvpSample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view row = trim(line);
        if (row.empty()) {
            continue;
        }
        if (line_no == 1 && row == "t_ms,value") {
            continue;
        }
        const auto comma = row.find(',');
        if (comma == std::string_view::npos) {
            throw InputError("expected 't_ms,value'", line_no);
        }
        BvpSample s;
        if (!parse_number(row.substr(0, comma), s.t_ms)) {
            throw InputError("bad timestamp", line_no);
        }
        if (!parse_number(row.substr(comma + 1), s.value) || !std::isfinite(s.value)) {
            throw InputError("bad value", line_no);
        }
        if (!out.empty() && s.t_ms <= out.back().t_ms) {
            throw InputError("timestamps must strictly increase", line_no);
        }
        out.push_back(s);
    }
    return out;
}

std::vector<BvpSample> replay(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open " + path.string());
    }
    return parse_bvp_csv(in);
}

void write_bvp_csv(std::ostream& out, std::span<const BvpSample> samples) {
    out << "t_ms,value\n";
    char buf[64];
    for (const auto& s : samples) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, s.value);
        out << s.t_ms << ',' << std::string_view(buf, static_cast<std::size_t>(ptr - buf)) << '\n';
    }
}

void write_bvp_csv(const std::filesystem::path& path, std::span<const BvpSample> samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write " + path.string());
    }
    write_bvp_csv(out, samples);
    if (!out) {
        throw InputError("write failed for " + path.string());
    }
}

} // namespace piheart
