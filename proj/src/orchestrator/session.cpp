#include "piheart/orchestrator/session.hpp"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <future>
#include <map>
#include <mutex>
#include <thread>
#include <variant>

#include "piheart/device_node.hpp"
#include "piheart/mqtt/client.hpp"

namespace piheart {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string_view to_string(SessionPhase p) {
    switch (p) {
    case SessionPhase::Idle:
        return "IDLE";
    case SessionPhase::Active:
        return "ACTIVE";
    case SessionPhase::Degraded:
        return "DEGRADED";
    case SessionPhase::Stopped:
        return "STOPPED";
    }
    return "?";
}

namespace {

enum class Feed { Hr, Bvp, BeatEvent, Status, Lost };

struct Incoming {
    Participant who;
    Feed feed;
    std::string payload;
};

struct SetModality {
    Modality modality;
};
struct SetMovie {
    std::string title;
};
struct SetSegment {
    PlanSegment segment;
};
struct Stop {};

struct Control {
    std::variant<SetModality, SetMovie, SetSegment, Stop> action;
    std::promise<void> done;
};

using Work = std::variant<Incoming, std::shared_ptr<Control>>;

std::size_t idx(Participant p) { return p == Participant::A ? 0 : 1; }

std::int64_t wall_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

} // namespace

struct Session::Impl {
    SessionConfig config;
    mqtt::Client clients[2];

    mutable std::mutex state_mutex;
    SessionPhase phase = SessionPhase::Idle;
    RoutingRule rule;
    std::optional<std::string> movie;
    std::optional<double> latest[2];
    SessionStats stats;

    std::mutex work_mutex;
    std::condition_variable work_cv;
    std::deque<Work> work;
    bool accepting = false;
    std::thread router;

    std::unique_ptr<Recorder> recorder;
    std::optional<std::filesystem::path> log_file;

    mutable std::mutex listener_mutex;
    std::map<int, EventListener> listeners;
    int next_listener = 1;

    std::int64_t last_ts = 0; // routing thread only
    std::mutex stop_mutex;

    explicit Impl(SessionConfig c) : config(std::move(c)) {}

    const std::string& device_id(Participant p) const { return p == Participant::A ? config.id_a : config.id_b; }

    std::int64_t next_ts() {
        last_ts = std::max(last_ts, wall_ms());
        return last_ts;
    }

    void emit(const json& event) {
        const auto text = event.dump();
        std::vector<EventListener> copy;
        {
            std::lock_guard lock(listener_mutex);
            for (const auto& [id, l] : listeners) {
                copy.push_back(l);
            }
        }
        for (const auto& l : copy) {
            l(text);
        }
    }

    void enqueue(Work w) {
        {
            std::lock_guard lock(work_mutex);
            if (!accepting) {
                return;
            }
            work.push_back(std::move(w));
        }
        work_cv.notify_one();
    }

    void run_control(std::variant<SetModality, SetMovie, SetSegment, Stop> action) {
        auto c = std::make_shared<Control>();
        c->action = std::move(action);
        auto fut = c->done.get_future();
        {
            std::lock_guard lock(work_mutex);
            if (!accepting) {
                throw SessionStateError("session is not active");
            }
            work.push_back(c);
        }
        work_cv.notify_one();
        fut.get();
    }

    void require_active() const {
        std::lock_guard lock(state_mutex);
        if (phase != SessionPhase::Active && phase != SessionPhase::Degraded) {
            throw SessionStateError(std::string("session is ") + std::string(to_string(phase)));
        }
    }

    ojson base_record(std::int64_t ts, std::string_view kind, std::optional<Participant> who) {
        ojson r;
        r["ts"] = ts;
        r["kind"] = kind;
        r["device"] = who ? json(std::string(to_string(*who))) : json(nullptr);
        std::lock_guard lock(state_mutex);
        r["modality"] = to_string(rule.modality());
        r["movie"] = movie ? json(*movie) : json(nullptr);
        return r;
    }

    void record(const ojson& r) {
        if (recorder) {
            recorder->append(r.dump());
        }
    }

    void send_beat_rate(Participant target, const std::string& payload) {
        try {
            clients[idx(target)].publish(topics::beat_rate(device_id(target)), payload);
            std::lock_guard lock(state_mutex);
            ++stats.beat_rates_sent[idx(target)];
        } catch (const std::exception& e) {
            emit({{"type", "status"},
                  {"device", to_string(target)},
                  {"ts", last_ts},
                  {"detail", {{"event", "beat_rate_failed"}, {"error", e.what()}}}});
        }
    }

    void handle(const Incoming& in) {
        const auto ts = next_ts();
        const auto who = std::string(to_string(in.who));
        if (in.feed == Feed::Lost) {
            emit({{"type", "status"}, {"device", who}, {"ts", ts}, {"detail", {{"event", "broker_lost"}, {"error", in.payload}}}});
            return;
        }
        const json body = json::parse(in.payload, nullptr, false);
        if (body.is_discarded() || !body.is_object()) {
            emit({{"type", "status"}, {"device", who}, {"ts", ts}, {"detail", {{"event", "bad_payload"}}}});
            return;
        }
        switch (in.feed) {
        case Feed::Hr: {
            if (!body.contains("bpm") || !body["bpm"].is_number()) {
                emit({{"type", "status"}, {"device", who}, {"ts", ts}, {"detail", {{"event", "bad_payload"}}}});
                return;
            }
            const double bpm = body["bpm"].get<double>();
            const auto t_ms = body.value("t_ms", std::int64_t{0});
            auto r = base_record(ts, "hr", in.who);
            r["bpm"] = bpm;
            r["t_ms"] = t_ms;
            record(r);
            std::vector<Participant> targets;
            {
                std::lock_guard lock(state_mutex);
                latest[idx(in.who)] = bpm;
                ++stats.hr_records[idx(in.who)];
                targets = rule.targets(in.who);
            }
            const auto payload = json{{"bpm", bpm}}.dump();
            for (auto target : targets) {
                send_beat_rate(target, payload);
            }
            emit({{"type", "hr"}, {"device", who}, {"bpm", bpm}, {"t_ms", t_ms}, {"ts", ts}});
            break;
        }
        case Feed::Bvp: {
            auto r = base_record(ts, "bvp_batch", in.who);
            r["t_ms"] = body.value("t_ms", std::int64_t{0});
            r["samples"] = body.value("samples", json::array());
            record(r);
            std::lock_guard lock(state_mutex);
            ++stats.bvp_records[idx(in.who)];
            break;
        }
        case Feed::BeatEvent: {
            auto r = base_record(ts, "beat_event", in.who);
            r["bpm"] = body.value("bpm", 0.0);
            r["interval_ms"] = body.value("interval_ms", std::int64_t{0});
            r["t_ms"] = body.value("t_ms", std::int64_t{0});
            record(r);
            {
                std::lock_guard lock(state_mutex);
                ++stats.beat_events[idx(in.who)];
            }
            emit({{"type", "beat_event"},
                  {"device", who},
                  {"bpm", r["bpm"]},
                  {"interval_ms", r["interval_ms"]},
                  {"t_ms", r["t_ms"]},
                  {"ts", ts}});
            break;
        }
        case Feed::Status:
            emit({{"type", "status"}, {"device", who}, {"ts", ts}, {"detail", body}});
            break;
        case Feed::Lost:
            break;
        }
    }

    void apply(SetModality m) {
        const auto ts = next_ts();
        Modality previous;
        {
            std::lock_guard lock(state_mutex);
            previous = rule.modality();
            rule = RoutingRule(m.modality);
        }
        auto r = base_record(ts, "modality_change", std::nullopt);
        r["previous"] = to_string(previous);
        if (previous == m.modality) {
            r["noop"] = true;
        }
        record(r);
        if (m.modality == Modality::WithoutHeart) {
            const auto stop = json{{"stop", true}}.dump();
            send_beat_rate(Participant::A, stop);
            send_beat_rate(Participant::B, stop);
        }
        emit({{"type", "modality_change"}, {"value", to_string(m.modality)}, {"ts", ts}});
    }

    void apply(const SetMovie& m) {
        const auto ts = next_ts();
        std::optional<std::string> previous;
        {
            std::lock_guard lock(state_mutex);
            previous = movie;
            movie = m.title;
        }
        auto r = base_record(ts, "movie_change", std::nullopt);
        r["previous"] = previous ? json(*previous) : json(nullptr);
        if (previous == m.title) {
            r["noop"] = true;
        }
        record(r);
        emit({{"type", "movie_change"}, {"value", m.title}, {"ts", ts}});
    }

    void apply(const SetSegment& s) {
        apply(SetMovie{s.segment.movie});
        apply(SetModality{s.segment.modality});
    }

    void route_loop() {
        for (;;) {
            Work w;
            {
                std::unique_lock lock(work_mutex);
                work_cv.wait(lock, [&] { return !work.empty(); });
                w = std::move(work.front());
                work.pop_front();
            }
            if (auto* in = std::get_if<Incoming>(&w)) {
                handle(*in);
                continue;
            }
            auto& c = std::get<std::shared_ptr<Control>>(w);
            if (std::holds_alternative<Stop>(c->action)) {
                const auto stop = json{{"stop", true}}.dump();
                send_beat_rate(Participant::A, stop);
                send_beat_rate(Participant::B, stop);
                c->done.set_value();
                return;
            }
            std::visit(
                [&](const auto& a) {
                    if constexpr (!std::is_same_v<std::decay_t<decltype(a)>, Stop>) {
                        apply(a);
                    }
                },
                c->action);
            c->done.set_value();
        }
    }

    void on_degraded(const std::string& reason) {
        {
            std::lock_guard lock(state_mutex);
            if (phase != SessionPhase::Active) {
                return;
            }
            phase = SessionPhase::Degraded;
        }
        emit({{"type", "session"}, {"phase", "DEGRADED"}, {"reason", "recording failed: " + reason}, {"ts", wall_ms()}});
    }

    void connect(Participant who) {
        const auto& ep = who == Participant::A ? config.device_a : config.device_b;
        mqtt::ClientOptions o;
        o.broker = ep;
        o.client_id = "piheart-orchestrator";
        o.keep_alive_s = config.keep_alive_s;
        o.connect_timeout = config.connect_timeout;
        auto& client = clients[idx(who)];
        client.on_session_lost([this, who](const std::string& reason) { enqueue(Incoming{who, Feed::Lost, reason}); });
        try {
            client.connect(o);
        } catch (const mqtt::ConnectError& e) {
            throw SessionStartError(who, "device " + std::string(to_string(who)) + " broker " + ep.to_string() +
                                             " unreachable: " + e.what());
        }
    }

    void subscribe(Participant who) {
        auto& client = clients[idx(who)];
        const auto& id = device_id(who);
        auto feed = [this, who](Feed f) {
            return [this, who, f](std::string_view, std::string_view payload) {
                enqueue(Incoming{who, f, std::string(payload)});
            };
        };
        client.subscribe(topics::hr(id), feed(Feed::Hr));
        client.subscribe(topics::bvp(id), feed(Feed::Bvp));
        client.subscribe(topics::beat_event(id), feed(Feed::BeatEvent));
        client.subscribe(topics::status(id), feed(Feed::Status));
    }

    void start(std::optional<PlanSegment> first) {
        {
            std::lock_guard lock(state_mutex);
            if (phase != SessionPhase::Idle) {
                throw SessionStateError("session already started");
            }
        }
        if (first && first->movie.empty()) {
            throw CommandError("movie title must not be empty");
        }
        connect(Participant::A);
        try {
            connect(Participant::B);
        } catch (...) {
            clients[0].disconnect();
            throw;
        }
        try {
            std::unique_ptr<LogSink> sink;
            if (config.sink_factory) {
                sink = config.sink_factory();
            } else {
                sink = std::make_unique<FileLogSink>(config.log_path);
                log_file = config.log_path;
            }
            recorder = std::make_unique<Recorder>(std::move(sink), [this](const std::string& r) { on_degraded(r); });
        } catch (...) {
            clients[0].disconnect();
            clients[1].disconnect();
            throw;
        }
        {
            std::lock_guard lock(work_mutex);
            accepting = true;
        }
        router = std::thread([this] { route_loop(); });
        {
            std::lock_guard lock(state_mutex);
            phase = SessionPhase::Active;
        }
        if (first) {
            run_control(SetSegment{*first});
        }
        subscribe(Participant::A);
        subscribe(Participant::B);
        emit({{"type", "session"}, {"phase", "ACTIVE"}, {"ts", wall_ms()}});
    }

    void stop() {
        std::lock_guard stop_lock(stop_mutex);
        {
            std::lock_guard lock(state_mutex);
            if (phase == SessionPhase::Idle || phase == SessionPhase::Stopped) {
                phase = SessionPhase::Stopped;
                return;
            }
        }
        try {
            run_control(Stop{});
        } catch (const SessionStateError&) {
        }
        {
            std::lock_guard lock(work_mutex);
            accepting = false;
            work.clear();
        }
        if (router.joinable()) {
            router.join();
        }
        clients[0].disconnect();
        clients[1].disconnect();
        if (recorder) {
            recorder->close();
        }
        {
            std::lock_guard lock(state_mutex);
            phase = SessionPhase::Stopped;
        }
        emit({{"type", "session"}, {"phase", "STOPPED"}, {"ts", wall_ms()}});
    }
};

Session::Session(SessionConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Session::~Session() { impl_->stop(); }

void Session::start(std::optional<PlanSegment> first) { impl_->start(std::move(first)); }

void Session::set_modality(Modality m) {
    impl_->require_active();
    impl_->run_control(SetModality{m});
}

void Session::set_modality(std::string_view name) {
    const auto m = parse_modality(name);
    if (!m) {
        throw CommandError("unknown modality '" + std::string(name) + "'");
    }
    set_modality(*m);
}

void Session::set_movie(std::string_view title) {
    if (title.empty()) {
        throw CommandError("movie title must not be empty");
    }
    impl_->require_active();
    impl_->run_control(SetMovie{std::string(title)});
}

void Session::apply_segment(const PlanSegment& segment) {
    if (segment.movie.empty()) {
        throw CommandError("movie title must not be empty");
    }
    impl_->require_active();
    impl_->run_control(SetSegment{segment});
}

void Session::stop() { impl_->stop(); }

SessionPhase Session::phase() const {
    std::lock_guard lock(impl_->state_mutex);
    return impl_->phase;
}

Modality Session::modality() const {
    std::lock_guard lock(impl_->state_mutex);
    return impl_->rule.modality();
}

std::optional<std::string> Session::movie() const {
    std::lock_guard lock(impl_->state_mutex);
    return impl_->movie;
}

std::optional<double> Session::latest_bpm(Participant p) const {
    std::lock_guard lock(impl_->state_mutex);
    return impl_->latest[idx(p)];
}

SessionStats Session::stats() const {
    SessionStats s;
    {
        std::lock_guard lock(impl_->state_mutex);
        s = impl_->stats;
    }
    if (impl_->recorder) {
        s.records_written = impl_->recorder->written();
        s.records_lost = impl_->recorder->lost();
    }
    return s;
}

const SessionConfig& Session::config() const { return impl_->config; }

nlohmann::json Session::snapshot() const {
    std::lock_guard lock(impl_->state_mutex);
    json latest = json::object();
    for (auto p : {Participant::A, Participant::B}) {
        latest[std::string(to_string(p))] = impl_->latest[idx(p)] ? json(*impl_->latest[idx(p)]) : json(nullptr);
    }
    return {{"type", "hello"},
            {"phase", to_string(impl_->phase)},
            {"modality", to_string(impl_->rule.modality())},
            {"movie", impl_->movie ? json(*impl_->movie) : json(nullptr)},
            {"latest", latest}};
}

int Session::add_listener(EventListener listener) {
    std::lock_guard lock(impl_->listener_mutex);
    const int id = impl_->next_listener++;
    impl_->listeners.emplace(id, std::move(listener));
    return id;
}

void Session::remove_listener(int id) {
    std::lock_guard lock(impl_->listener_mutex);
    impl_->listeners.erase(id);
}

void Session::export_log(const std::filesystem::path& dest) const {
    if (!impl_->recorder || !impl_->log_file) {
        throw SessionStateError("session has no log file to export");
    }
    impl_->recorder->with_drained([&] {
        std::filesystem::copy_file(*impl_->log_file, dest, std::filesystem::copy_options::overwrite_existing);
    });
}

} // namespace piheart
