#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace piheart {

/// The single actuator command: perform one heartbeat.
struct BeatCommand {
    std::int64_t t_ms = 0;
    double bpm = 0.0;
    std::int64_t interval_ms = 0;
};

struct MotionWaypoint {
    std::int64_t t_ms = 0; // offset from beat start
    double angle_deg = 0.0;

    bool operator==(const MotionWaypoint&) const = default;
};

struct LightEvent {
    std::int64_t t_ms = 0;
    bool on = false;
};

/// One servo sweep 0 -> 180 -> 0 degrees at full speed.
struct MotionProfile {
    std::int64_t start_ms = 0;
    std::vector<MotionWaypoint> waypoints;
    std::vector<LightEvent> light_events;
};

struct BeatSchedulerConfig {
    double min_bpm = 40.0;
    double max_bpm = 300.0;
    std::int64_t profile_duration_ms = 300;
    bool led_enabled = false;
};

/// Turns a heart rate into timed beat commands.
///
/// A new rate never moves the beat that is already scheduled; it sets the
/// interval used after that beat. Late ticks emit one command and drop the
/// missed beats instead of queueing them.
class BeatScheduler {
public:
    explicit BeatScheduler(BeatSchedulerConfig config = {});

    /// Returns false (state untouched) when `bpm` is outside the band.
    bool set_rate(double bpm);
    void stop();

    std::optional<BeatCommand> tick(std::int64_t now_ms);

    /// Starts a sweep unless the previous one is still in flight, in which
    /// case the beat is dropped and counted.
    std::optional<MotionProfile> execute_beat(std::int64_t now_ms);

    bool beating() const noexcept { return beating_; }
    std::optional<double> current_bpm() const noexcept { return current_bpm_; }
    std::optional<std::int64_t> next_beat_t() const noexcept { return next_beat_t_; }
    std::int64_t interval_ms() const noexcept { return interval_ms_; }
    std::uint64_t dropped_beats() const noexcept { return dropped_; }
    bool led_enabled() const noexcept { return config_.led_enabled; }

    static std::int64_t interval_for(double bpm);

private:
    BeatSchedulerConfig config_;
    bool beating_ = false;
    std::optional<double> current_bpm_;
    std::optional<double> pending_bpm_;
    std::optional<std::int64_t> next_beat_t_;
    std::int64_t interval_ms_ = 0;
    std::int64_t busy_until_ = INT64_MIN;
    std::uint64_t dropped_ = 0;
};

} // namespace piheart
