#include "piheart/device_node.hpp"

#include <atomic>
#include <charconv>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "piheart/errors.hpp"
#include "piheart/mqtt/client.hpp"
#include "piheart/mqtt/topic.hpp"

namespace piheart {

using json = nlohmann::json;

namespace topics {
std::string hr(std::string_view id) { return "piheart/" + std::string(id) + "/hr"; }
std::string bvp(std::string_view id) { return "piheart/" + std::string(id) + "/bvp"; }
std::string beat_rate(std::string_view id) { return "piheart/" + std::string(id) + "/beat_rate"; }
std::string beat_event(std::string_view id) { return "piheart/" + std::string(id) + "/beat_event"; }
std::string status(std::string_view id) { return "piheart/" + std::string(id) + "/status"; }
} // namespace topics

namespace {

double parse_number(std::string_view key, std::string_view text) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ConfigError("bad value for '" + std::string(key) + "': '" + std::string(text) + "'");
    }
    return v;
}

} // namespace

BvpSource parse_bvp_source(std::string_view text) {
    if (text.starts_with("replay:")) {
        const auto path = text.substr(7);
        if (path.empty()) {
            throw ConfigError("replay source needs a path");
        }
        return std::filesystem::path(std::string(path));
    }
    if (!text.starts_with("synth")) {
        throw ConfigError("unknown BVP source '" + std::string(text) + "' (expected synth:... or replay:<path>)");
    }
    BvpConfig c;
    auto rest = text.substr(5);
    if (!rest.empty()) {
        if (rest.front() != ':') {
            throw ConfigError("unknown BVP source '" + std::string(text) + "'");
        }
        rest.remove_prefix(1);
    }
    while (!rest.empty()) {
        const auto comma = rest.find(',');
        const auto item = rest.substr(0, comma);
        rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        const auto eq = item.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("expected key=value in BVP source, got '" + std::string(item) + "'");
        }
        const auto key = item.substr(0, eq);
        const auto value = item.substr(eq + 1);
        if (key == "hr") {
            c.hr_profile = HrProfile::constant(parse_number(key, value));
        } else if (key == "noise") {
            c.noise_sigma = parse_number(key, value);
        } else if (key == "seed") {
            c.seed = static_cast<std::uint64_t>(parse_number(key, value));
        } else if (key == "artifacts") {
            c.artifact_rate = parse_number(key, value);
        } else if (key == "fs") {
            c.sample_rate_hz = parse_number(key, value);
        } else {
            throw ConfigError("unknown BVP source key '" + std::string(key) + "'");
        }
    }
    c.validate();
    return c;
}

void DeviceConfig::validate() const {
    if (device_id.empty() || !mqtt::valid_topic_name(device_id) || device_id.find('/') != std::string::npos) {
        throw ConfigError("device id must be a non-empty single topic level without wildcards");
    }
    if (const auto* synth = std::get_if<BvpConfig>(&bvp_source)) {
        synth->validate();
    }
    estimator.validate();
    if (bvp_batch == 0) {
        throw ConfigError("bvp batch size must be positive");
    }
    if (!(clock.accel > 0.0)) {
        throw ConfigError("clock acceleration must be positive");
    }
}

struct DeviceNode::Impl {
    DeviceConfig config;
    mqtt::Client client;
    const SimClock::WallClock::time_point started = SimClock::WallClock::now();

    std::atomic<bool> stopping{false};

    // sampler -> estimator
    std::mutex chunk_mutex;
    std::condition_variable chunk_cv;
    std::deque<std::vector<BvpSample>> chunks;
    bool sampler_done = false;

    // beat_rate callback -> actuator
    struct RateCommand {
        std::optional<double> bpm; // unset means stop
        std::string invalid;       // non-empty: reject with this reason
    };
    std::mutex actuator_mutex;
    std::condition_variable actuator_cv;
    std::deque<RateCommand> commands;
    bool actuator_stop = false;

    // Sampler sleeps here so stop() can wake it.
    std::mutex sleep_mutex;
    std::condition_variable sleep_cv;

    mutable std::mutex status_mutex;
    NodeStatus snapshot;

    std::mutex done_mutex;
    std::condition_variable done_cv;
    bool done = false;
    std::once_flag stop_once;

    std::thread sampler;
    std::thread estimator;
    std::thread actuator;

    explicit Impl(DeviceConfig c) : config(std::move(c)) {}

    template <class F>
    void update_status(F&& f) {
        std::lock_guard lock(status_mutex);
        f(snapshot);
    }

    /// Publishes, turning a broken session into a node stop.
    bool publish(const std::string& topic, const std::string& payload, bool retain = false) {
        try {
            client.publish(topic, payload, retain);
            return true;
        } catch (const mqtt::SessionError& e) {
            session_lost(e.what());
        } catch (const mqtt::ClientStateError& e) {
            session_lost(e.what());
        }
        return false;
    }

    void publish_status(json body) {
        body["t_ms"] = config.clock.now_ms();
        publish(topics::status(config.device_id), body.dump());
    }

    void session_lost(const std::string& reason) {
        update_status([&](NodeStatus& s) {
            if (!s.session_error) {
                s.session_error = reason;
            }
        });
        request_stop();
        std::lock_guard lock(done_mutex);
        done = true;
        done_cv.notify_all();
    }

    void request_stop() {
        stopping = true;
        {
            std::lock_guard lock(sleep_mutex);
        }
        sleep_cv.notify_all();
        {
            std::lock_guard lock(chunk_mutex);
            sampler_done = true;
        }
        chunk_cv.notify_all();
        {
            std::lock_guard lock(actuator_mutex);
            actuator_stop = true;
        }
        actuator_cv.notify_all();
    }

    void start() {
        config.validate();
        std::vector<BvpSample> replayed;
        if (const auto* path = std::get_if<std::filesystem::path>(&config.bvp_source)) {
            replayed = replay(*path);
        }
        mqtt::ClientOptions opts;
        opts.broker = config.broker;
        opts.client_id = "piheart-node-" + config.device_id;
        opts.keep_alive_s = config.keep_alive_s;
        client.on_session_lost([this](const std::string& reason) { session_lost(reason); });
        client.connect(opts);
        client.subscribe(topics::beat_rate(config.device_id),
                         [this](std::string_view, std::string_view payload) { on_beat_rate(payload); });

        actuator = std::thread([this] { actuator_loop(); });
        estimator = std::thread([this] { estimator_loop(); });
        sampler = std::thread([this, samples = std::move(replayed)]() mutable { sampler_loop(std::move(samples)); });
    }

    void on_beat_rate(std::string_view payload) {
        RateCommand cmd;
        try {
            const auto j = json::parse(payload);
            if (j.is_number()) {
                cmd.bpm = j.get<double>();
            } else if (j.is_object() && j.contains("stop") && j["stop"] == true) {
                cmd.bpm.reset();
            } else if (j.is_object() && j.contains("bpm") && j["bpm"].is_number()) {
                cmd.bpm = j["bpm"].get<double>();
            } else {
                cmd.invalid = "beat_rate payload needs a numeric bpm or stop:true";
            }
        } catch (const json::exception& e) {
            cmd.invalid = std::string("beat_rate payload is not JSON: ") + e.what();
        }
        {
            std::lock_guard lock(actuator_mutex);
            commands.push_back(std::move(cmd));
        }
        actuator_cv.notify_all();
    }

    void sampler_loop(std::vector<BvpSample> replayed) {
        const bool is_replay = std::holds_alternative<std::filesystem::path>(config.bvp_source);
        std::optional<BvpGenerator> generator;
        if (!is_replay) {
            generator.emplace(std::get<BvpConfig>(config.bvp_source));
        }
        // Replays are paced relative to their first sample; synthetic samples
        // already carry signal time since the clock epoch.
        const std::int64_t origin = is_replay && !replayed.empty() ? replayed.front().t_ms : 0;
        const std::int64_t start = is_replay ? config.clock.now_ms() : 0;
        std::size_t replay_index = 0;
        std::optional<BvpSample> pending;
        auto fetch = [&]() -> std::optional<BvpSample> {
            if (generator) {
                return generator->next();
            }
            if (replay_index < replayed.size()) {
                return replayed[replay_index++];
            }
            return std::nullopt;
        };
        auto due = [&](const BvpSample& s) { return s.t_ms - origin + start; };

        std::vector<BvpSample> batch;
        batch.reserve(config.bvp_batch);
        pending = fetch();
        while (!stopping) {
            const auto now = config.clock.now_ms();
            std::vector<BvpSample> chunk;
            while (pending && due(*pending) <= now) {
                chunk.push_back(*pending);
                pending = fetch();
            }
            if (!chunk.empty()) {
                update_status([&](NodeStatus& s) { s.samples += chunk.size(); });
                for (const auto& s : chunk) {
                    batch.push_back(s);
                    if (batch.size() == config.bvp_batch) {
                        publish_batch(batch);
                    }
                }
                {
                    std::lock_guard lock(chunk_mutex);
                    chunks.push_back(std::move(chunk));
                }
                chunk_cv.notify_one();
            }
            if (!pending) {
                if (!batch.empty()) {
                    publish_batch(batch);
                }
                update_status([](NodeStatus& s) { s.source_exhausted = true; });
                publish_status({{"event", "source_exhausted"}});
                break;
            }
            // Wake for the next sample, but never more often than once per millisecond.
            const auto wake = std::max(config.clock.wall_at(due(*pending)),
                                       SimClock::WallClock::now() + std::chrono::milliseconds(1));
            std::unique_lock lock(sleep_mutex);
            sleep_cv.wait_until(lock, wake, [&] { return stopping.load(); });
        }
        std::lock_guard lock(chunk_mutex);
        sampler_done = true;
        chunk_cv.notify_all();
    }

    void publish_batch(std::vector<BvpSample>& batch) {
        json samples = json::array();
        for (const auto& s : batch) {
            samples.push_back(s.value);
        }
        const json body{{"t_ms", batch.front().t_ms}, {"samples", std::move(samples)}};
        if (publish(topics::bvp(config.device_id), body.dump())) {
            update_status([](NodeStatus& s) { ++s.bvp_batches; });
        }
        batch.clear();
    }

    void estimator_loop() {
        SlidingWindow window(config.estimator);
        for (;;) {
            std::vector<BvpSample> chunk;
            {
                std::unique_lock lock(chunk_mutex);
                chunk_cv.wait(lock, [&] { return !chunks.empty() || sampler_done; });
                if (chunks.empty()) {
                    return;
                }
                chunk = std::move(chunks.front());
                chunks.pop_front();
            }
            for (const auto& sample : chunk) {
                std::optional<HrEstimate> est;
                try {
                    est = window.push_sample(sample, config.mode);
                } catch (const StreamError& e) {
                    // Restart the window at the sample after the break.
                    update_status([](NodeStatus& s) { ++s.stream_drops; });
                    publish_status({{"event", "stream_error"}, {"error", e.what()}, {"sample_t_ms", sample.t_ms}});
                    window.reset();
                    est = window.push_sample(sample, config.mode);
                } catch (const NoDominantFrequency&) {
                    publish_status({{"event", "no_dominant_frequency"}, {"sample_t_ms", sample.t_ms}});
                }
                if (est) {
                    const json body{{"t_ms", est->window_end_t}, {"bpm", est->bpm}};
                    if (publish(topics::hr(config.device_id), body.dump(), true)) {
                        update_status([&](NodeStatus& s) {
                            s.last_estimate = *est;
                            ++s.hr_published;
                        });
                    }
                }
            }
        }
    }

    void actuator_loop() {
        BeatScheduler scheduler(config.scheduler);
        std::unique_lock lock(actuator_mutex);
        for (;;) {
            auto ready = [&] { return actuator_stop || !commands.empty(); };
            if (const auto next = scheduler.next_beat_t()) {
                actuator_cv.wait_until(lock, config.clock.wall_at(*next), ready);
            } else {
                actuator_cv.wait(lock, ready);
            }
            if (actuator_stop) {
                return;
            }
            auto pending = std::move(commands);
            commands.clear();
            lock.unlock();

            for (const auto& cmd : pending) {
                if (!cmd.invalid.empty()) {
                    publish_status({{"event", "bad_beat_rate"}, {"error", cmd.invalid}});
                } else if (!cmd.bpm) {
                    scheduler.stop();
                } else if (!scheduler.set_rate(*cmd.bpm)) {
                    publish_status({{"event", "bad_beat_rate"}, {"error", "bpm out of range"}, {"bpm", *cmd.bpm}});
                }
            }
            const auto now = config.clock.now_ms();
            if (const auto beat = scheduler.tick(now)) {
                if (scheduler.execute_beat(now)) {
                    const json body{{"t_ms", beat->t_ms}, {"bpm", beat->bpm}, {"interval_ms", beat->interval_ms}};
                    publish(topics::beat_event(config.device_id), body.dump());
                    update_status([](NodeStatus& s) { ++s.beats_executed; });
                }
            }
            update_status([&](NodeStatus& s) {
                s.beats_dropped = scheduler.dropped_beats();
                s.beat_bpm = scheduler.beating() ? scheduler.current_bpm() : std::nullopt;
            });
            lock.lock();
        }
    }

    void shutdown() {
        std::call_once(stop_once, [this] {
            stopping = true;
            sleep_cv.notify_all();
            if (sampler.joinable()) {
                sampler.join();
            }
            {
                std::lock_guard lock(chunk_mutex);
                sampler_done = true;
            }
            chunk_cv.notify_all();
            if (estimator.joinable()) {
                estimator.join();
            }
            {
                std::lock_guard lock(actuator_mutex);
                actuator_stop = true;
            }
            actuator_cv.notify_all();
            if (actuator.joinable()) {
                actuator.join();
            }
            client.disconnect();
            std::lock_guard lock(done_mutex);
            done = true;
            done_cv.notify_all();
        });
    }
};

DeviceNode::DeviceNode(DeviceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) { impl_->start(); }

DeviceNode::~DeviceNode() { impl_->shutdown(); }

NodeStatus DeviceNode::status() const {
    std::lock_guard lock(impl_->status_mutex);
    NodeStatus s = impl_->snapshot;
    s.uptime_ms = std::chrono::duration_cast<std::chrono::milliseconds>(SimClock::WallClock::now() - impl_->started).count();
    return s;
}

const DeviceConfig& DeviceNode::config() const { return impl_->config; }

void DeviceNode::stop() { impl_->shutdown(); }

void DeviceNode::wait() {
    std::unique_lock lock(impl_->done_mutex);
    impl_->done_cv.wait(lock, [&] { return impl_->done; });
}

} // namespace piheart
