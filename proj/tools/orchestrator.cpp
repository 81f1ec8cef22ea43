#include <poll.h>
#include <unistd.h>

#include <condition_variable>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "piheart/orchestrator/bridge.hpp"
#include "piheart/orchestrator/plan.hpp"
#include "piheart/orchestrator/session.hpp"
#include "signals.hpp"

namespace {

using namespace piheart;

/// Shared shutdown state for the main thread, runner, stdin reader and signals.
struct Control {
    std::mutex m;
    std::condition_variable cv;
    bool quit = false;
    std::exception_ptr failure;

    void finish(std::exception_ptr e = nullptr) {
        std::lock_guard lock(m);
        if (e && !failure) {
            failure = e;
        }
        quit = true;
        cv.notify_all();
    }

    bool quitting() {
        std::lock_guard lock(m);
        return quit;
    }
};

/// Operator commands on stdin, one per line: "modality <name>", "movie <title>", "stop", "status".
void handle_line(Session& session, const std::string& line, Control& control) {
    std::istringstream in(line);
    std::string verb;
    in >> verb;
    std::string arg;
    std::getline(in >> std::ws, arg);
    try {
        if (verb == "modality") {
            session.set_modality(std::string_view(arg));
        } else if (verb == "movie") {
            session.set_movie(arg);
        } else if (verb == "stop") {
            control.finish();
            return;
        } else if (verb == "status") {
            std::cerr << session.snapshot().dump() << "\n";
            return;
        } else if (!verb.empty()) {
            std::cerr << "unknown command '" << verb << "' (modality, movie, status, stop)\n";
            return;
        } else {
            return;
        }
        std::cerr << "ok\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
    }
}

void read_stdin(Session& session, Control& control) {
    std::string pending;
    char buf[512];
    while (!control.quitting()) {
        pollfd p{STDIN_FILENO, POLLIN, 0};
        if (poll(&p, 1, 100) <= 0) {
            continue;
        }
        const auto n = read(STDIN_FILENO, buf, sizeof buf);
        if (n <= 0) {
            return; // stdin closed; keep running on plan, console or signal
        }
        pending.append(buf, static_cast<std::size_t>(n));
        for (auto nl = pending.find('\n'); nl != std::string::npos; nl = pending.find('\n')) {
            handle_line(session, pending.substr(0, nl), control);
            pending.erase(0, nl + 1);
        }
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Runs a two-device session: routes heart rates by modality, records a JSONL log"};
    std::string plan_path;
    std::string dev_a = "127.0.0.1:1884";
    std::string dev_b = "127.0.0.1:1885";
    std::string id_a = "dev1";
    std::string id_b = "dev2";
    std::string ws;
    std::string log_path;
    double accel = 1.0;
    bool wait_for_start = false;
    app.add_option("--plan", plan_path, "Session plan JSON; without it modality and movie come from commands");
    app.add_option("--devA", dev_a, "Broker of device A")->capture_default_str();
    app.add_option("--devB", dev_b, "Broker of device B")->capture_default_str();
    app.add_option("--idA", id_a, "Device id of A")->capture_default_str();
    app.add_option("--idB", id_b, "Device id of B")->capture_default_str();
    app.add_option("--ws", ws, "host:port for the console WebSocket bridge");
    app.add_option("--log", log_path, "Session log (must not exist)")->required();
    app.add_option("--accel", accel, "Clock acceleration for plan segment timing")->capture_default_str();
    app.add_flag("--wait-for-start", wait_for_start, "Start only when a console sends start (needs --ws)");
    CLI11_PARSE(app, argc, argv);
    if (wait_for_start && ws.empty()) {
        std::cerr << "orchestrator: --wait-for-start needs --ws\n";
        return 2;
    }

    Control control;
    tools::SignalWatcher signals([&] { control.finish(); });
    try {
        std::optional<SessionPlan> plan;
        if (!plan_path.empty()) {
            plan = load_plan(plan_path);
        }
        SessionConfig config;
        config.device_a = net::parse_endpoint(dev_a);
        config.device_b = net::parse_endpoint(dev_b);
        config.id_a = id_a;
        config.id_b = id_b;
        config.log_path = log_path;
        Session session(config);
        const auto clock = SimClock::start_now(accel);

        std::jthread runner;
        std::mutex runner_mutex;
        auto begin = [&] {
            std::lock_guard lock(runner_mutex);
            if (runner.joinable()) {
                throw SessionStateError("session already started");
            }
            if (!plan) {
                session.start();
                return;
            }
            // Start synchronously so start errors reach the caller, then time the segments.
            session.start(plan->segments.front());
            const auto origin = clock.now_ms();
            runner = std::jthread([&, origin](std::stop_token stop) {
                try {
                    run_plan(session, *plan, clock, origin, stop);
                    if (!stop.stop_requested()) {
                        std::cerr << "orchestrator: plan finished\n";
                        control.finish();
                    }
                } catch (...) {
                    control.finish(std::current_exception());
                }
            });
        };

        const int listener = session.add_listener([&](const std::string& text) {
            const auto event = nlohmann::json::parse(text, nullptr, false);
            if (event.is_object() && event.value("type", "") == "session" && event.value("phase", "") == "STOPPED") {
                control.finish();
            }
        });

        std::optional<Bridge> bridge;
        if (!ws.empty()) {
            bridge.emplace(session, net::parse_endpoint(ws));
            bridge->on_start(begin);
            std::cerr << "orchestrator: console bridge on port " << bridge->port() << "\n";
        }
        if (!wait_for_start) {
            begin();
            std::cerr << "orchestrator: session active, logging to " << log_path << "\n";
        }

        std::thread input([&] { read_stdin(session, control); });
        {
            std::unique_lock lock(control.m);
            control.cv.wait(lock, [&] { return control.quit; });
        }
        if (runner.joinable()) {
            runner.request_stop();
            runner.join();
        }
        session.remove_listener(listener);
        session.stop();
        if (bridge) {
            bridge->stop();
        }
        input.join();

        const auto s = session.stats();
        std::cerr << "orchestrator: hr A/B " << s.hr_records[0] << "/" << s.hr_records[1] << ", records written "
                  << s.records_written << ", lost " << s.records_lost << "\n";
        if (control.failure) {
            std::rethrow_exception(control.failure);
        }
    } catch (const SessionStartError& e) {
        std::cerr << "orchestrator: cannot start: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "orchestrator: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
