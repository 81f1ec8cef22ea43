#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include <stop_token>

#include "json.hpp"
#include "piheart/clock.hpp"
#include "piheart/net.hpp"
#include "piheart/orchestrator/modality.hpp"
#include "piheart/orchestrator/plan.hpp"
#include "piheart/orchestrator/session_log.hpp"

namespace piheart {

/// A device broker could not be reached; the session did not start.
class SessionStartError : public std::runtime_error {
public:
    SessionStartError(Participant who, const std::string& what)
        : std::runtime_error(what), participant_(who) {}
    Participant participant() const noexcept { return participant_; }

private:
    Participant participant_;
};

/// Operation not valid in the current phase (e.g. set_movie before start).
class SessionStateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Rejected command argument (unknown modality, empty title).
class CommandError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class SessionPhase { Idle, Active, Degraded, Stopped };
std::string_view to_string(SessionPhase p);

struct SessionConfig {
    net::Endpoint device_a;
    net::Endpoint device_b;
    std::string id_a = "dev1";
    std::string id_b = "dev2";
    std::filesystem::path log_path;
    /// Replaces the file sink (tests inject failing sinks here).
    std::function<std::unique_ptr<LogSink>()> sink_factory;
    std::uint16_t keep_alive_s = 10;
    std::chrono::milliseconds connect_timeout{3000};
};

struct SessionStats {
    std::uint64_t hr_records[2] = {0, 0};
    std::uint64_t bvp_records[2] = {0, 0};
    std::uint64_t beat_events[2] = {0, 0};
    std::uint64_t beat_rates_sent[2] = {0, 0};
    std::uint64_t records_written = 0;
    std::uint64_t records_lost = 0;
};

/// Receives bridge events as JSON text. Called from session threads; must not block.
using EventListener = std::function<void(const std::string&)>;

/// The controller for one pair: connects to both device brokers, routes
/// heart rates by modality and records everything to a JSONL log.
///
/// All mutations run on one routing thread, so a modality switch takes
/// effect between two incoming messages and every log line carries the
/// modality and movie that were active when its message was handled.
class Session {
public:
    explicit Session(SessionConfig config);
    ~Session();
    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    /// Connects to both brokers, creates the log and applies `first`.
    /// Throws SessionStartError (naming the device), LogExistsError or SessionStateError.
    void start(std::optional<PlanSegment> first = std::nullopt);

    void set_modality(Modality m);
    /// Parses the name; throws CommandError for unknown modalities.
    void set_modality(std::string_view name);
    /// Throws CommandError for an empty title.
    void set_movie(std::string_view title);

    /// Switches movie and modality together; no message is handled in between.
    void apply_segment(const PlanSegment& segment);

    /// Idles both actuators, disconnects and closes the log. Idempotent.
    void stop();

    SessionPhase phase() const;
    Modality modality() const;
    std::optional<std::string> movie() const;
    std::optional<double> latest_bpm(Participant p) const;
    SessionStats stats() const;
    const SessionConfig& config() const;

    /// Current phase, modality, movie and latest heart rates as a "hello" event.
    nlohmann::json snapshot() const;

    int add_listener(EventListener listener);
    void remove_listener(int id);

    /// Copies the log as of now (all records handled so far) to `dest`.
    void export_log(const std::filesystem::path& dest) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Runs `plan` on `clock`: segment 0 is applied at start (starting the
/// session if it is idle), segment k at `origin_ms` plus the durations
/// before it. Returns at the end of the last segment or when `stop` is
/// requested; the session is left running.
void run_plan(Session& session, const SessionPlan& plan, const SimClock& clock, std::int64_t origin_ms = 0,
              std::stop_token stop = {});

} // namespace piheart
