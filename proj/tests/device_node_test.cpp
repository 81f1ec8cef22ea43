#include <gtest/gtest.h>

#include <unistd.h>

#include <atomic>
#include <filesystem>

#include "json.hpp"
#include "piheart/device_node.hpp"
#include "piheart/errors.hpp"
#include "piheart/mqtt/broker.hpp"
#include "test_support.hpp"

namespace piheart {
namespace {

using json = nlohmann::json;
using testing::eventually;
using testing::Inbox;
using namespace std::chrono_literals;

DeviceConfig synth_node(const mqtt::Broker& broker, double bpm, double accel) {
    DeviceConfig c;
    c.device_id = "dev1";
    c.broker = broker.endpoint();
    BvpConfig bvp;
    bvp.hr_profile = HrProfile::constant(bpm);
    c.bvp_source = bvp;
    c.clock = SimClock::start_now(accel);
    return c;
}

mqtt::ClientOptions observer(const mqtt::Broker& b, std::string id = "observer") {
    mqtt::ClientOptions o;
    o.broker = b.endpoint();
    o.client_id = std::move(id);
    return o;
}

std::vector<json> payloads(const Inbox& inbox) {
    std::vector<json> out;
    for (const auto& [topic, payload] : inbox.messages()) {
        out.push_back(json::parse(payload));
    }
    return out;
}

class TempCsv {
public:
    TempCsv() : path_(std::filesystem::temp_directory_path() / ("node_" + std::to_string(::getpid()) + "_" +
                                                                   std::to_string(counter_++) + ".csv")) {}
    ~TempCsv() { std::filesystem::remove(path_); }
    const std::filesystem::path& path() const { return path_; }

private:
    static inline int counter_ = 0;
    std::filesystem::path path_;
};

TEST(BvpSourceParse, SynthAndReplay) {
    const auto s = parse_bvp_source("synth:hr=72");
    ASSERT_TRUE(std::holds_alternative<BvpConfig>(s));
    EXPECT_DOUBLE_EQ(std::get<BvpConfig>(s).hr_profile.bpm_at(0), 72.0);
    const auto n = parse_bvp_source("synth:hr=90,noise=0.02,seed=42,artifacts=3");
    EXPECT_DOUBLE_EQ(std::get<BvpConfig>(n).noise_sigma, 0.02);
    EXPECT_EQ(std::get<BvpConfig>(n).seed, 42u);
    EXPECT_DOUBLE_EQ(std::get<BvpConfig>(n).artifact_rate, 3.0);
    EXPECT_TRUE(std::holds_alternative<BvpConfig>(parse_bvp_source("synth")));
    EXPECT_EQ(std::get<std::filesystem::path>(parse_bvp_source("replay:/tmp/x.csv")), "/tmp/x.csv");
    EXPECT_THROW(parse_bvp_source("camera:0"), ConfigError);
    EXPECT_THROW(parse_bvp_source("synth:hr=fast"), ConfigError);
    EXPECT_THROW(parse_bvp_source("synth:bpm=72"), ConfigError);
    EXPECT_THROW(parse_bvp_source("synth:hr=400"), ConfigError);
    EXPECT_THROW(parse_bvp_source("replay:"), ConfigError);
}

TEST(DeviceNodeConfig, RejectsBadIdsAndMissingBroker) {
    mqtt::Broker broker({.listen = {"127.0.0.1", 0}});
    auto c = synth_node(broker, 72, 100);
    c.device_id = "a/b";
    EXPECT_THROW(DeviceNode{c}, ConfigError);
    c.device_id = "";
    EXPECT_THROW(DeviceNode{c}, ConfigError);
    c.device_id = "+";
    EXPECT_THROW(DeviceNode{c}, ConfigError);

    auto d = synth_node(broker, 72, 100);
    broker.stop();
    EXPECT_THROW(DeviceNode{d}, mqtt::ConnectError);
}

TEST(DeviceNodeTest, HrCadenceUnderAcceleratedClock) {
    mqtt::Broker broker({.listen = {"127.0.0.1", 0}});
    mqtt::Client obs;
    obs.connect(observer(broker));
    Inbox hr;
    obs.subscribe(topics::hr("dev1"), hr.callback());

    DeviceNode node(synth_node(broker, 72, 100));
    EXPECT_FALSE(node.status().last_estimate);
    // 30 s + 3 hops of signal time = 0.525 s wall at x100.
    ASSERT_TRUE(hr.wait_for_count(4, 5s));
    const auto msgs = payloads(hr);
    // First estimate once sample 3000 (t = 29.99 s) is in, then every 7.5 s.
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(msgs[i]["t_ms"].get<std::int64_t>(), 29990 + static_cast<std::int64_t>(i) * 7500);
        EXPECT_NEAR(msgs[i]["bpm"].get<double>(), 72.0, 2.0);
    }
    node.stop();
    const auto st = node.status();
    ASSERT_TRUE(st.last_estimate);
    EXPECT_EQ(st.hr_published, hr.size());
    EXPECT_EQ(st.last_estimate->bpm, payloads(hr).back()["bpm"].get<double>());
    EXPECT_GE(st.bvp_batches, 52u);
}

TEST(DeviceNodeTest, HrIsRetainedForLateJoiners) {
    mqtt::Broker broker({.listen = {"127.0.0.1", 0}});
    DeviceNode node(synth_node(broker, 60, 100));
    ASSERT_TRUE(eventually([&] { return node.status().hr_published >= 1; }, 5s));
    mqtt::Client late;
    late.connect(observer(broker, "late"));
    Inbox hr;
    late.subscribe(topics::hr("dev1"), hr.callback());
    ASSERT_TRUE(hr.wait_for_count(1, 1s));
}

TEST(DeviceNodeTest, BvpBatchesCarryHundredSamplesAndFirstTimestamp) {
    mqtt::Broker broker({.listen = {"127.0.0.1", 0}});
    mqtt::Client obs;
    obs.connect(observer(broker));
    Inbox bvp;
    obs.subscribe(topics::bvp("dev1"), bvp.callback());
    DeviceNode node(synth_node(broker, 72, 100));
    ASSERT_TRUE(bvp.wait_for_count(5, 5s));
    node.stop();
    const auto msgs = payloads(bvp);
    // Oracle: the same synthetic stream generated offline.
    BvpConfig c;
    c.hr_profile = HrProfile::constant(72);
    const auto expected = synthesize(c, 5.0);
    for (std::size_t b = 0; b < 5; ++b) {
        EXPECT_EQ(msgs[b]["t_ms"].get<std::int64_t>(), static_cast<std::int64_t>(b) * 1000);
        const auto& samples = msgs[b]["samples"];
        ASSERT_EQ(samples.size(), 100u);
        for (std::size_t i = 0; i < 100; ++i) {
            EXPECT_EQ(samples[i].get<double>(), expected[b * 100 + i].value);
        }
    }
}

TEST(DeviceNodeTest, BeatRateDrivesBeatEvents) {
    mqtt::Broker broker({.listen = {"127.0.0.1", 0}});
    mqtt::Client ctl;
    ctl.connect(observer(broker, "ctl"));
    Inbox beats;
    ctl.subscribe(topics::beat_event("dev1"), beats.callback());
    DeviceNode node(synth_node(broker, 72, 100));

    ctl.publish(topics::beat_rate("dev1"), R"({"bpm":60})");
    ASSERT_TRUE(beats.wait_for_count(40, 5s));
    const auto msgs = payloads(beats);
    for (const auto& m : msgs) {
        EXPECT_EQ(m["bpm"].get<double>(), 60.0);
        EXPECT_EQ(m["interval_ms"].get<std::int64_t>(), 1000);
    }
    // Wake-up jitter moves single beats; the least-squares slope of beat
    // time against beat index measures the cadence itself.
    const std::size_t n = 40;
    double mean_k = 0.0;
    double mean_t = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        mean_k += static_cast<double>(k) / n;
        mean_t += static_cast<double>(msgs[k]["t_ms"].get<std::int64_t>()) / n;
    }
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double dk = static_cast<double>(k) - mean_k;
        sxy += dk * (static_cast<double>(msgs[k]["t_ms"].get<std::int64_t>()) - mean_t);
        sxx += dk * dk;
    }
    EXPECT_NEAR(sxy / sxx, 1000.0, 10.0);

    ctl.publish(topics::beat_rate("dev1"), R"({"stop":true})");
    std::this_thread::sleep_for(50ms); // 5 s signal time for the stop to land
    const auto settled = beats.size();
    std::this_thread::sleep_for(100ms);
    EXPECT_EQ(beats.size(), settled);
    EXPECT_FALSE(node.status().beat_bpm);
}

TEST(DeviceNodeTest, IdleActuatorByDefault) {
    mqtt::Broker broker({.listen = {"127.0.0.1", 0}});
    mqtt::Client obs;
    obs.connect(observer(broker));
    Inbox beats;
    obs.subscribe(topics::beat_event("dev1"), beats.callback());
    DeviceNode node(synth_node(broker, 72, 100));
    std::this_thread::sleep_for(600ms); // 60 s signal time
    EXPECT_EQ(beats.size(), 0u);
    EXPECT_EQ(node.status().beats_executed, 0u);
    EXPECT_GE(node.status().hr_published, 4u);
}

TEST(DeviceNodeTest, InvalidBeatRateReportedOnStatus) {
    mqtt::Broker broker({.listen = {"127.0.0.1", 0}});
    mqtt::Client ctl;
    ctl.connect(observer(broker, "ctl"));
    Inbox status;
    ctl.subscribe(topics::status("dev1"), status.callback());
    DeviceNode node(synth_node(broker, 72, 100));
    ctl.publish(topics::beat_rate("dev1"), "not json");
    ctl.publish(topics::beat_rate("dev1"), R"({"bpm":500})");
    ASSERT_TRUE(status.wait_for_count(2));
    for (const auto& m : payloads(status)) {
        EXPECT_EQ(m["event"], "bad_beat_rate");
    }
    EXPECT_FALSE(node.status().beat_bpm);
}

TEST(DeviceNodeTest, PipelineMatchesBatchEstimator) {
    BvpConfig c;
    c.hr_profile = HrProfile({{60, 65, 65}, {60, 65, 110}, {60, 110, 80}});
    c.noise_sigma = 0.05;
    c.artifact_rate = 2.0;
    c.seed = 11;
    const auto samples = synthesize(c, 180.0);
    TempCsv csv;
    write_bvp_csv(csv.path(), samples);
    const auto batch = estimate_stream(samples, EstimatorMode::Magnitude, {});
    ASSERT_EQ(batch.size(), 21u);

    mqtt::Broker broker({.listen = {"127.0.0.1", 0}});
    mqtt::Client obs;
    obs.connect(observer(broker));
    Inbox hr;
    obs.subscribe(topics::hr("dev1"), hr.callback());
    DeviceConfig dc;
    dc.device_id = "dev1";
    dc.broker = broker.endpoint();
    dc.bvp_source = csv.path();
    dc.clock = SimClock::start_now(500);
    DeviceNode node(dc);
    ASSERT_TRUE(eventually([&] { return node.status().source_exhausted; }, 10s));
    node.stop();
    ASSERT_TRUE(eventually([&] { return hr.size() == batch.size(); }));
    const auto msgs = payloads(hr);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        EXPECT_EQ(msgs[i]["bpm"].get<double>(), batch[i].bpm) << i;
        EXPECT_EQ(msgs[i]["t_ms"].get<std::int64_t>(), batch[i].window_end_t) << i;
    }
}

TEST(DeviceNodeTest, StreamGapIncrementsDropCounter) {
    auto samples = synthesize(BvpConfig{}, 40.0);
    // Remove 0.5 s from the middle of the stream.
    samples.erase(samples.begin() + 1500, samples.begin() + 1550);
    TempCsv csv;
    write_bvp_csv(csv.path(), samples);

    mqtt::Broker broker({.listen = {"127.0.0.1", 0}});
    mqtt::Client obs;
    obs.connect(observer(broker));
    Inbox status;
    Inbox hr;
    obs.subscribe(topics::status("dev1"), status.callback());
    obs.subscribe(topics::hr("dev1"), hr.callback());
    DeviceConfig dc;
    dc.device_id = "dev1";
    dc.broker = broker.endpoint();
    dc.bvp_source = csv.path();
    dc.clock = SimClock::start_now(500);
    DeviceNode node(dc);
    ASSERT_TRUE(eventually([&] { return node.status().source_exhausted; }, 10s));
    node.stop();
    EXPECT_EQ(node.status().stream_drops, 1u);
    ASSERT_GE(status.size(), 1u);
    EXPECT_EQ(json::parse(status.messages()[0].second)["event"], "stream_error");
    // 3900 samples after the gap would need 3000 for a first window: the
    // reset window restarts at sample 1500, leaving 2450 samples, so no estimate.
    EXPECT_EQ(hr.size(), 0u);
}

TEST(DeviceNodeTest, OwnHeartLoopbackTracksPublishedRate) {
    mqtt::Broker broker({.listen = {"127.0.0.1", 0}});
    // Minimal router: the node's own hr goes back to its own beat_rate.
    mqtt::Client router;
    router.connect(observer(broker, "router"));
    std::mutex m;
    std::vector<double> published;
    router.subscribe(topics::hr("dev1"), [&](std::string_view, std::string_view payload) {
        const double bpm = json::parse(payload)["bpm"].get<double>();
        {
            std::lock_guard lock(m);
            published.push_back(bpm);
        }
        router.publish(topics::beat_rate("dev1"), json{{"bpm", bpm}}.dump());
    });
    Inbox beats;
    mqtt::Client obs;
    obs.connect(observer(broker));
    obs.subscribe(topics::beat_event("dev1"), beats.callback());

    BvpConfig c;
    c.hr_profile = HrProfile({{40, 70, 70}, {40, 70, 120}});
    auto dc = synth_node(broker, 70, 100);
    dc.bvp_source = c;
    DeviceNode node(dc);
    ASSERT_TRUE(eventually([&] { return node.status().hr_published >= 8; }, 10s));
    ASSERT_TRUE(eventually([&] { return node.status().beats_executed >= 1; }));
    // The actuator settles on the latest routed rate.
    EXPECT_TRUE(eventually([&] {
        std::lock_guard lock(m);
        return node.status().beat_bpm == published.back();
    }));
    node.stop();

    std::vector<double> rates;
    {
        std::lock_guard lock(m);
        rates = published;
    }
    // Every executed beat runs at a rate the node published, with the matching interval.
    const auto msgs = payloads(beats);
    ASSERT_FALSE(msgs.empty());
    for (const auto& b : msgs) {
        const double bpm = b["bpm"].get<double>();
        EXPECT_NE(std::find(rates.begin(), rates.end(), bpm), rates.end()) << bpm;
        EXPECT_EQ(b["interval_ms"].get<std::int64_t>(), std::llround(60000.0 / bpm));
    }
}

TEST(DeviceNodeTest, BrokerLossStopsNodeWithSessionError) {
    auto broker = std::make_unique<mqtt::Broker>(mqtt::BrokerConfig{.listen = {"127.0.0.1", 0}});
    DeviceNode node(synth_node(*broker, 72, 100));
    std::this_thread::sleep_for(50ms);
    broker.reset();
    std::atomic<bool> returned{false};
    std::thread waiter([&] {
        node.wait();
        returned = true;
    });
    EXPECT_TRUE(eventually([&] { return returned.load(); }));
    waiter.join();
    EXPECT_TRUE(node.status().session_error);
}

} // namespace
} // namespace piheart
