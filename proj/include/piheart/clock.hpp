#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace piheart {

/// Signal-time clock: milliseconds since `epoch`, scaled by `accel`.
///
/// Nodes and the orchestrator built from the same SimClock agree on signal
/// time, which is what the end-to-end checks compare.
struct SimClock {
    using WallClock = std::chrono::steady_clock;

    WallClock::time_point epoch = WallClock::now();
    double accel = 1.0;

    static SimClock start_now(double accel = 1.0) {
        if (!(accel > 0.0) || !std::isfinite(accel)) {
            throw std::invalid_argument("clock acceleration must be positive");
        }
        return SimClock{WallClock::now(), accel};
    }

    std::int64_t now_ms() const { return to_signal(WallClock::now()); }

    std::int64_t to_signal(WallClock::time_point t) const {
        const double wall_ms = std::chrono::duration<double, std::milli>(t - epoch).count();
        return static_cast<std::int64_t>(std::floor(wall_ms * accel));
    }

    WallClock::time_point wall_at(std::int64_t signal_ms) const {
        const double wall_ms = static_cast<double>(signal_ms) / accel;
        return epoch + std::chrono::duration_cast<WallClock::duration>(std::chrono::duration<double, std::milli>(wall_ms));
    }

    /// Wall duration of a signal-time span.
    WallClock::duration wall_span(std::int64_t signal_ms) const {
        return std::chrono::duration_cast<WallClock::duration>(
            std::chrono::duration<double, std::milli>(static_cast<double>(signal_ms) / accel));
    }
};

} // namespace piheart
