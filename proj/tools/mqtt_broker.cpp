#include <condition_variable>
#include <iostream>
#include <mutex>

#include "CLI11.hpp"
#include "piheart/mqtt/broker.hpp"
#include "signals.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Minimal MQTT 3.1.1 broker (QoS 0, retained messages, wildcards)"};
    std::string listen = "127.0.0.1:1883";
    std::size_t max_clients = 64;
    app.add_option("--listen", listen, "host:port to bind")->capture_default_str();
    app.add_option("--max-clients", max_clients, "Connection limit")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    std::mutex m;
    std::condition_variable cv;
    bool quit = false;
    piheart::tools::SignalWatcher signals([&] {
        std::lock_guard lock(m);
        quit = true;
        cv.notify_all();
    });
    try {
        piheart::mqtt::BrokerConfig config;
        config.listen = piheart::net::parse_endpoint(listen);
        config.max_clients = max_clients;
        piheart::mqtt::Broker broker(config);
        std::cerr << "mqtt-broker: listening on " << broker.endpoint().to_string() << "\n";
        std::unique_lock lock(m);
        cv.wait(lock, [&] { return quit; });
        const auto s = broker.stats();
        std::cerr << "mqtt-broker: " << s.publishes_received << " publishes in, " << s.messages_delivered
                  << " delivered\n";
    } catch (const std::exception& e) {
        std::cerr << "mqtt-broker: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
