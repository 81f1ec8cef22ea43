#include "piheart/beat_scheduler.hpp"

#include <cmath>

namespace piheart {

BeatScheduler::BeatScheduler(BeatSchedulerConfig config) : config_(config) {}

std::int64_t BeatScheduler::interval_for(double bpm) { return std::llround(60000.0 / bpm); }

bool BeatScheduler::set_rate(double bpm) {
    if (!(bpm >= config_.min_bpm && bpm <= config_.max_bpm)) {
        return false;
    }
    if (!beating_ || !next_beat_t_) {
        beating_ = true;
        current_bpm_ = bpm;
        interval_ms_ = interval_for(bpm);
        next_beat_t_.reset();
        pending_bpm_.reset();
        return true;
    }
    pending_bpm_ = bpm;
    return true;
}

void BeatScheduler::stop() {
    beating_ = false;
    current_bpm_.reset();
    pending_bpm_.reset();
    next_beat_t_.reset();
    interval_ms_ = 0;
}

std::optional<BeatCommand> BeatScheduler::tick(std::int64_t now_ms) {
    if (!beating_) {
        return std::nullopt;
    }
    if (!next_beat_t_) {
        next_beat_t_ = now_ms + interval_ms_;
        return std::nullopt;
    }
    if (now_ms < *next_beat_t_) {
        return std::nullopt;
    }
    if (pending_bpm_) {
        current_bpm_ = *pending_bpm_;
        interval_ms_ = interval_for(*pending_bpm_);
        pending_bpm_.reset();
    }
    BeatCommand cmd{now_ms, *current_bpm_, interval_ms_};
    std::int64_t next = *next_beat_t_ + interval_ms_;
    if (next <= now_ms) {
        next = now_ms + interval_ms_;
    }
    next_beat_t_ = next;
    return cmd;
}

std::optional<MotionProfile> BeatScheduler::execute_beat(std::int64_t now_ms) {
    if (now_ms < busy_until_) {
        ++dropped_;
        return std::nullopt;
    }
    const std::int64_t d = config_.profile_duration_ms;
    busy_until_ = now_ms + d;
    MotionProfile profile;
    profile.start_ms = now_ms;
    profile.waypoints = {{0, 0.0}, {d / 2, 180.0}, {d, 0.0}};
    if (config_.led_enabled) {
        profile.light_events = {{0, true}, {d, false}};
    }
    return profile;
}

} // namespace piheart
