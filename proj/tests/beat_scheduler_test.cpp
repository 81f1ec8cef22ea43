#include <gtest/gtest.h>

#include <random>

#include "piheart/beat_scheduler.hpp"

namespace piheart {
namespace {

TEST(BeatSchedulerTest, IntervalsFromRate) {
    BeatScheduler s;
    ASSERT_TRUE(s.set_rate(60));
    EXPECT_EQ(s.interval_ms(), 1000);
    BeatScheduler t;
    ASSERT_TRUE(t.set_rate(75));
    EXPECT_EQ(t.interval_ms(), 800);
}

TEST(BeatSchedulerTest, OutOfBandRateRejectedStateUnchanged) {
    BeatScheduler s;
    EXPECT_FALSE(s.set_rate(30));
    EXPECT_FALSE(s.beating());
    ASSERT_TRUE(s.set_rate(60));
    EXPECT_FALSE(s.set_rate(301));
    EXPECT_FALSE(s.set_rate(39.9));
    EXPECT_EQ(s.current_bpm(), 60.0);
    EXPECT_EQ(s.interval_ms(), 1000);
}

TEST(BeatSchedulerTest, FirstBeatOneIntervalAfterFirstTick) {
    BeatScheduler s;
    s.set_rate(60);
    EXPECT_FALSE(s.tick(0));
    EXPECT_FALSE(s.tick(999));
    const auto cmd = s.tick(1000);
    ASSERT_TRUE(cmd);
    EXPECT_EQ(cmd->t_ms, 1000);
    EXPECT_EQ(s.next_beat_t(), 2000);
}

TEST(BeatSchedulerTest, StallEmitsOnceAndDropsMissedBeats) {
    BeatScheduler s;
    s.set_rate(60);
    s.tick(0);
    const auto cmd = s.tick(3500);
    ASSERT_TRUE(cmd);
    EXPECT_EQ(cmd->t_ms, 3500);
    EXPECT_EQ(s.next_beat_t(), 4500);
    EXPECT_FALSE(s.tick(3500));
    EXPECT_FALSE(s.tick(4499));
    EXPECT_TRUE(s.tick(4500));
}

TEST(BeatSchedulerTest, StoppedNeverBeats) {
    BeatScheduler s;
    for (std::int64_t t = 0; t < 100000; t += 7) {
        EXPECT_FALSE(s.tick(t));
    }
    s.set_rate(100);
    s.tick(0);
    s.stop();
    for (std::int64_t t = 0; t < 10000; t += 7) {
        EXPECT_FALSE(s.tick(t));
    }
}

TEST(BeatSchedulerTest, NewRateAppliesAfterScheduledBeat) {
    BeatScheduler s;
    s.set_rate(60);
    s.tick(0); // next at 1000
    s.set_rate(120);
    EXPECT_EQ(s.next_beat_t(), 1000);
    EXPECT_FALSE(s.tick(600));
    const auto c1 = s.tick(1000);
    ASSERT_TRUE(c1);
    EXPECT_EQ(c1->interval_ms, 500);
    EXPECT_EQ(s.next_beat_t(), 1500);
}

TEST(BeatSchedulerTest, CountOverWindowMatchesRate) {
    for (double bpm : {40.0, 55.0, 72.0, 90.0, 133.0, 180.0}) {
        BeatScheduler s;
        s.set_rate(bpm);
        int count = 0;
        const std::int64_t total_ms = 60000;
        for (std::int64_t t = 0; t <= total_ms; ++t) {
            count += s.tick(t).has_value();
        }
        const double expected = std::floor(60.0 * bpm / 60.0);
        EXPECT_NEAR(count, expected, 1.0) << bpm;
    }
}

TEST(BeatSchedulerTest, RateChangesNeverShortenBelowFasterInterval) {
    // Emission lags the due time by up to one tick step, so the invariant is on due times.
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> bpm(40.0, 300.0);
    std::uniform_int_distribution<int> step(1, 40);
    BeatScheduler s;
    double current = bpm(rng);
    s.set_rate(current);
    double fastest_since_last = current;
    std::optional<std::int64_t> last_due;
    int checked = 0;
    for (std::int64_t t = 0; t < 200000; t += step(rng)) {
        if (t % 997 < 40) {
            current = bpm(rng);
            s.set_rate(current);
            fastest_since_last = std::max(fastest_since_last, current);
        }
        const auto due = s.next_beat_t();
        if (auto c = s.tick(t)) {
            ASSERT_TRUE(due);
            EXPECT_GE(c->t_ms, *due);
            if (last_due) {
                EXPECT_GE(*due - *last_due, BeatScheduler::interval_for(fastest_since_last));
                ++checked;
            }
            last_due = due;
            fastest_since_last = current;
        }
    }
    EXPECT_GT(checked, 100);
}

TEST(BeatSchedulerTest, MotionProfileShape) {
    BeatScheduler s;
    s.set_rate(60);
    const auto p = s.execute_beat(1000);
    ASSERT_TRUE(p);
    const std::vector<MotionWaypoint> expected{{0, 0.0}, {150, 180.0}, {300, 0.0}};
    EXPECT_EQ(p->waypoints, expected);
    EXPECT_TRUE(p->light_events.empty());
    EXPECT_FALSE(s.led_enabled());
}

TEST(BeatSchedulerTest, LedEventsOnlyWhenEnabled) {
    BeatScheduler s({.led_enabled = true});
    s.set_rate(60);
    EXPECT_FALSE(s.execute_beat(0)->light_events.empty());
}

TEST(BeatSchedulerTest, SaturationDropsAlternateBeatsAt300Bpm) {
    BeatScheduler s;
    s.set_rate(300);
    int commands = 0;
    int executed = 0;
    for (std::int64_t t = 0; t <= 60000; ++t) {
        if (s.tick(t)) {
            ++commands;
            executed += s.execute_beat(t).has_value();
        }
    }
    EXPECT_EQ(s.interval_ms(), 200);
    EXPECT_EQ(commands, 300);
    EXPECT_EQ(static_cast<int>(s.dropped_beats()) + executed, commands);
    EXPECT_NEAR(static_cast<double>(s.dropped_beats()), commands / 2.0, 1.0);
}

} // namespace
} // namespace piheart
