#include <cmath>
#include <condition_variable>
#include <mutex>

#include "piheart/orchestrator/session.hpp"

namespace piheart {

void run_plan(Session& session, const SessionPlan& plan, const SimClock& clock, std::int64_t origin_ms,
              std::stop_token stop) {
    plan.validate();
    if (session.phase() == SessionPhase::Idle) {
        session.start(plan.segments.front());
    } else {
        session.apply_segment(plan.segments.front());
    }

    std::mutex m;
    std::condition_variable_any cv;
    auto sleep_until_signal = [&](std::int64_t signal_ms) {
        std::unique_lock lock(m);
        return !cv.wait_until(lock, stop, clock.wall_at(signal_ms), [] { return false; }) && !stop.stop_requested();
    };

    double elapsed_s = 0.0;
    for (std::size_t k = 0; k < plan.segments.size(); ++k) {
        if (k > 0) {
            session.apply_segment(plan.segments[k]);
        }
        elapsed_s += plan.segments[k].duration_s;
        if (!sleep_until_signal(origin_ms + std::llround(elapsed_s * 1000.0))) {
            return;
        }
    }
}

} // namespace piheart
