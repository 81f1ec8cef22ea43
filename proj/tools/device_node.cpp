#include <iostream>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "piheart/device_node.hpp"
#include "piheart/mqtt/broker.hpp"
#include "signals.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Simulated heart display: streams BVP, estimates heart rate and plays beats over MQTT"};
    std::string id;
    std::string broker = "127.0.0.1:1883";
    std::string bvp = "synth:hr=72";
    std::string mode_name = "magnitude";
    double accel = 1.0;
    std::uint16_t keep_alive = 10;
    bool serve_broker = false;
    bool led = false;
    app.add_option("--id", id, "Device id used in topic names")->required();
    app.add_option("--broker", broker, "MQTT broker host:port")->capture_default_str();
    app.add_option("--bvp", bvp, "synth:hr=72[,noise=..,seed=..,artifacts=..] or replay:<csv>")->capture_default_str();
    app.add_option("--mode", mode_name, "Estimator bin selection: magnitude or real-part")
        ->check(CLI::IsMember({"magnitude", "real-part"}))
        ->capture_default_str();
    app.add_option("--accel", accel, "Clock acceleration factor")->capture_default_str();
    app.add_option("--keep-alive", keep_alive, "MQTT keep-alive seconds")->capture_default_str();
    app.add_flag("--serve-broker", serve_broker, "Run a broker on --broker inside this process");
    app.add_flag("--led", led, "Mirror beats on the LED as well as the vibration motor");
    CLI11_PARSE(app, argc, argv);

    std::unique_ptr<piheart::DeviceNode> node;
    std::mutex m;
    piheart::tools::SignalWatcher signals([&] {
        std::lock_guard lock(m);
        if (node) {
            node->stop();
        }
    });
    try {
        piheart::DeviceConfig config;
        config.device_id = id;
        config.broker = piheart::net::parse_endpoint(broker);
        config.bvp_source = piheart::parse_bvp_source(bvp);
        config.mode = piheart::parse_estimator_mode(mode_name);
        config.keep_alive_s = keep_alive;
        config.scheduler.led_enabled = led;
        config.clock = piheart::SimClock::start_now(accel);

        std::optional<piheart::mqtt::Broker> local;
        if (serve_broker) {
            local.emplace(piheart::mqtt::BrokerConfig{.listen = config.broker});
            config.broker = local->endpoint();
        }
        {
            std::lock_guard lock(m);
            node = std::make_unique<piheart::DeviceNode>(config);
        }
        std::cerr << "device-node " << id << ": connected to " << config.broker.to_string() << "\n";
        node->wait();

        const auto s = node->status();
        nlohmann::ordered_json summary{{"device", id},
                                       {"uptime_ms", s.uptime_ms},
                                       {"samples", s.samples},
                                       {"hr_published", s.hr_published},
                                       {"bvp_batches", s.bvp_batches},
                                       {"stream_drops", s.stream_drops},
                                       {"beats_executed", s.beats_executed},
                                       {"beats_dropped", s.beats_dropped}};
        if (s.session_error) {
            summary["session_error"] = *s.session_error;
        }
        std::cout << summary.dump() << std::endl;
        std::lock_guard lock(m);
        node.reset();
        return s.session_error ? 1 : 0;
    } catch (const std::exception& e) {
        std::cerr << "device-node: " << e.what() << "\n";
        return 1;
    }
}
