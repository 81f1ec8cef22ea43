// A full accelerated session: two brokers, two device nodes and the
// orchestrator on one shared clock. Used by the e2e test and the acceptance run.
#pragma once

#include <unistd.h>

#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "piheart/device_node.hpp"
#include "piheart/mqtt/broker.hpp"
#include "piheart/mqtt/client.hpp"
#include "piheart/orchestrator/plan.hpp"
#include "piheart/orchestrator/session.hpp"
#include "piheart/orchestrator/session_log.hpp"

namespace piheart::testing {

/// Outcome of one named check.
struct Check {
    bool ok = false;
    std::string detail;
};

struct E2eOptions {
    double accel = 100.0;
    /// Segment k starts at origin + k * duration; offset keeps boundaries between hops.
    std::int64_t origin_ms = 3750;
    std::filesystem::path log_path;
};

/// Device A's rate ramps up, B's ramps down; the ranges never overlap, so a
/// routed rate identifies its source.
inline constexpr double kRampA[2] = {60.0, 110.0};
inline constexpr double kRampB[2] = {170.0, 130.0};
inline constexpr std::int64_t kFirstHopMs = 29990;
inline constexpr std::int64_t kHopMs = 7500;

inline Participant source_of_bpm(double bpm) { return bpm < 120.0 ? Participant::A : Participant::B; }

struct RateObservation {
    std::int64_t signal_ms = 0;
    double bpm = 0.0;
};

struct E2eRun {
    SessionPlan plan;
    E2eOptions options;
    std::vector<std::int64_t> segment_starts; // signal ms, plus the end as last entry
    /// beat_rate messages with a bpm seen on each device's broker.
    std::array<std::vector<RateObservation>, 2> rates;
    std::vector<nlohmann::json> log;
    double wall_seconds = 0.0;
    std::optional<std::string> error;

    int segment_of(std::int64_t signal_ms) const {
        for (std::size_t k = 0; k + 1 < segment_starts.size(); ++k) {
            if (signal_ms >= segment_starts[k] && signal_ms < segment_starts[k + 1]) {
                return static_cast<int>(k);
            }
        }
        return -1;
    }
};

inline DeviceConfig e2e_node_config(const std::string& id, const net::Endpoint& broker, const SimClock& clock,
                                    const double ramp[2]) {
    DeviceConfig c;
    c.device_id = id;
    c.broker = broker;
    BvpConfig bvp;
    bvp.hr_profile = HrProfile({{200.0, ramp[0], ramp[1]}});
    bvp.noise_sigma = 0.02;
    bvp.seed = id == "dev1" ? 1 : 2;
    c.bvp_source = bvp;
    c.clock = clock;
    return c;
}

/// Runs `plan` to its end and collects everything the checks need.
inline E2eRun run_e2e(const SessionPlan& plan, const E2eOptions& options) {
    E2eRun run;
    run.plan = plan;
    run.options = options;
    std::int64_t t = options.origin_ms;
    run.segment_starts.push_back(0);
    for (std::size_t k = 0; k < plan.segments.size(); ++k) {
        t += static_cast<std::int64_t>(plan.segments[k].duration_s * 1000.0);
        run.segment_starts.push_back(t);
    }
    const auto wall_start = std::chrono::steady_clock::now();
    try {
        mqtt::Broker broker_a({.listen = {"127.0.0.1", 0}});
        mqtt::Broker broker_b({.listen = {"127.0.0.1", 0}});
        const auto clock = SimClock::start_now(options.accel);

        std::mutex m;
        std::array<mqtt::Client, 2> spies;
        const std::array<net::Endpoint, 2> endpoints{broker_a.endpoint(), broker_b.endpoint()};
        const std::array<std::string, 2> ids{"dev1", "dev2"};
        for (int i = 0; i < 2; ++i) {
            spies[i].connect({.broker = endpoints[i], .client_id = "e2e-spy"});
            spies[i].subscribe(topics::beat_rate(ids[i]), [&, i](std::string_view, std::string_view payload) {
                const auto now = clock.now_ms();
                const auto body = nlohmann::json::parse(payload, nullptr, false);
                if (body.is_object() && body.contains("bpm")) {
                    std::lock_guard lock(m);
                    run.rates[i].push_back({now, body["bpm"].get<double>()});
                }
            });
        }

        DeviceNode node_a(e2e_node_config(ids[0], endpoints[0], clock, kRampA));
        DeviceNode node_b(e2e_node_config(ids[1], endpoints[1], clock, kRampB));

        SessionConfig sc;
        sc.device_a = endpoints[0];
        sc.device_b = endpoints[1];
        sc.id_a = ids[0];
        sc.id_b = ids[1];
        sc.log_path = options.log_path;
        Session session(sc);
        run_plan(session, plan, clock, options.origin_ms);
        session.stop();
        node_a.stop();
        node_b.stop();
        for (auto& s : spies) {
            s.disconnect();
        }
    } catch (const std::exception& e) {
        run.error = e.what();
    }
    run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();

    std::ifstream in(options.log_path);
    std::string line;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (!j.is_discarded()) {
            run.log.push_back(std::move(j));
        }
    }
    return run;
}

/// Hops whose sample window ends inside segment k.
inline int expected_hops(const E2eRun& run, std::size_t k) {
    int n = 0;
    for (std::int64_t t = kFirstHopMs; t < run.segment_starts.back(); t += kHopMs) {
        n += run.segment_of(t) == static_cast<int>(k);
    }
    return n;
}

/// All 12 (modality, publisher, recipient) outcomes against RoutingRule.
inline Check check_routing_matrix(const E2eRun& run) {
    // delivered[segment][publisher][recipient]
    std::map<Modality, std::array<std::array<bool, 2>, 2>> seen;
    for (const auto& seg : run.plan.segments) {
        seen[seg.modality] = {};
    }
    for (int r = 0; r < 2; ++r) {
        for (const auto& obs : run.rates[r]) {
            const int k = run.segment_of(obs.signal_ms);
            if (k < 0) {
                continue;
            }
            const auto p = source_of_bpm(obs.bpm);
            seen[run.plan.segments[k].modality][static_cast<int>(p)][r] = true;
        }
    }
    std::ostringstream out;
    int matched = 0;
    bool ok = true;
    for (const auto& [m, grid] : seen) {
        for (auto p : {Participant::A, Participant::B}) {
            for (auto r : {Participant::A, Participant::B}) {
                const auto targets = RoutingRule(m).targets(p);
                const bool want = std::find(targets.begin(), targets.end(), r) != targets.end();
                const bool got = grid[static_cast<int>(p)][static_cast<int>(r)];
                if (want == got) {
                    ++matched;
                } else {
                    ok = false;
                    out << to_string(m) << " " << to_string(p) << "->" << to_string(r) << " expected "
                        << (want ? "delivery" : "none") << "; ";
                }
            }
        }
    }
    if (seen.size() != 3) {
        ok = false;
        out << "plan covers " << seen.size() << " modalities; ";
    }
    out << matched << "/12 outcomes match";
    return {ok && matched == 12, out.str()};
}

/// Under WithNeighborHeart every hop's rate shows up as a partner beat within one hop.
inline Check check_latency(const E2eRun& run) {
    std::vector<const nlohmann::json*> beats[2];
    std::vector<const nlohmann::json*> hops[2];
    for (const auto& r : run.log) {
        const auto& dev = r.value("device", nlohmann::json());
        if (!dev.is_string()) {
            continue;
        }
        const int who = dev == "A" ? 0 : 1;
        if (r["kind"] == "beat_event") {
            beats[who].push_back(&r);
        } else if (r["kind"] == "hr" && r["modality"] == "WithNeighborHeart") {
            hops[who].push_back(&r);
        }
    }
    int checked = 0;
    std::int64_t worst = 0;
    std::ostringstream fails;
    bool ok = true;
    for (int src = 0; src < 2; ++src) {
        const int partner = 1 - src;
        for (const auto* h : hops[src]) {
            const auto t = (*h)["t_ms"].get<std::int64_t>();
            const auto bpm = (*h)["bpm"].get<double>();
            std::optional<std::int64_t> first;
            for (const auto* b : beats[partner]) {
                const auto bt = (*b)["t_ms"].get<std::int64_t>();
                if (bt > t && bt <= t + kHopMs && (*b)["bpm"].get<double>() == bpm) {
                    first = bt;
                    break;
                }
            }
            ++checked;
            if (!first) {
                ok = false;
                fails << (src == 0 ? "A" : "B") << "@" << t << " (" << bpm << " bpm) not seen; ";
            } else {
                worst = std::max(worst, *first - t);
            }
        }
    }
    if (checked == 0) {
        return {false, "no WithNeighborHeart hops in the log"};
    }
    std::ostringstream out;
    out << fails.str() << checked << " hops, worst " << worst << " ms signal time";
    return {ok, out.str()};
}

/// After a switch to WithoutHeart no beat executes later than `settle_ms`
/// signal time (a beat already due may still fire while the stop travels).
inline Check check_idle_without_heart(const E2eRun& run, std::int64_t settle_ms = 2000) {
    int late = 0;
    int segments = 0;
    std::ostringstream out;
    for (std::size_t k = 0; k < run.plan.segments.size(); ++k) {
        if (run.plan.segments[k].modality != Modality::WithoutHeart) {
            continue;
        }
        ++segments;
        const auto from = run.segment_starts[k] + settle_ms;
        const auto to = run.segment_starts[k + 1];
        for (const auto& r : run.log) {
            if (r["kind"] != "beat_event") {
                continue;
            }
            const auto t = r["t_ms"].get<std::int64_t>();
            if (t >= from && t < to) {
                ++late;
                out << r["device"].get<std::string>() << "@" << t << " ";
            }
        }
    }
    out << late << " beats during " << segments << " WithoutHeart segment(s) after settling";
    return {late == 0 && segments > 0, out.str()};
}

/// hr counts per segment equal hop counts; timestamps monotone; tags follow the plan.
inline Check check_session_log(const E2eRun& run) {
    std::ostringstream out;
    bool ok = true;
    const auto v = validate_log(run.options.log_path);
    if (!v.ok) {
        ok = false;
        out << "invalid log at line " << v.bad_line << ": " << v.error << "; ";
    }
    std::map<std::string, std::size_t> segment_of_movie;
    for (std::size_t k = 0; k < run.plan.segments.size(); ++k) {
        segment_of_movie[run.plan.segments[k].movie] = k;
    }
    std::vector<std::array<int, 2>> counts(run.plan.segments.size(), {0, 0});
    std::int64_t last_ts = 0;
    for (const auto& r : run.log) {
        const auto ts = r["ts"].get<std::int64_t>();
        if (ts < last_ts) {
            ok = false;
            out << "ts went back at " << ts << "; ";
        }
        last_ts = ts;
        if (!r["movie"].is_string()) {
            if (r["kind"] != "movie_change" && r["kind"] != "modality_change") {
                ok = false;
                out << r["kind"].get<std::string>() << " record without movie; ";
            }
            continue;
        }
        const auto it = segment_of_movie.find(r["movie"].get<std::string>());
        if (it == segment_of_movie.end()) {
            ok = false;
            out << "unknown movie tag; ";
            continue;
        }
        const auto& seg = run.plan.segments[it->second];
        // Change records carry the state at the moment of the change.
        const bool change = r["kind"] == "movie_change" || r["kind"] == "modality_change";
        if (!change && r["modality"] != std::string(to_string(seg.modality))) {
            ok = false;
            out << r["kind"].get<std::string>() << " tagged " << r["modality"].get<std::string>() << " during "
                << seg.movie << "; ";
        }
        if (r["kind"] == "hr") {
            counts[it->second][r["device"] == "A" ? 0 : 1]++;
        }
    }
    out << "hr per segment (A/B vs hops):";
    for (std::size_t k = 0; k < counts.size(); ++k) {
        const int want = expected_hops(run, k);
        out << " " << counts[k][0] << "/" << counts[k][1] << " vs " << want;
        ok = ok && counts[k][0] == want && counts[k][1] == want;
    }
    out << "; wall " << run.wall_seconds << " s";
    ok = ok && run.wall_seconds < 15.0;
    return {ok, out.str()};
}

inline std::filesystem::path e2e_log_path(const std::string& stem) {
    return std::filesystem::temp_directory_path() / (stem + "_" + std::to_string(::getpid()) + ".jsonl");
}

} // namespace piheart::testing
