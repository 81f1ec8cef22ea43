#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>

#include "piheart/mqtt/packet.hpp"
#include "piheart/net.hpp"

namespace piheart::mqtt {

class BrokerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BrokerConfig {
    net::Endpoint listen{"127.0.0.1", 1883};
    std::size_t max_clients = 64;
    std::size_t max_payload = kDefaultMaxPayload;
    /// How long a fresh TCP connection may take to send CONNECT.
    std::chrono::milliseconds connect_timeout{10000};
};

struct BrokerStats {
    std::size_t connected_clients = 0;
    std::uint64_t publishes_received = 0;
    std::uint64_t messages_delivered = 0;
    std::uint64_t protocol_errors = 0;
    std::size_t retained_topics = 0;
};

/// Minimal MQTT 3.1.1 broker: QoS 0, clean sessions, retained messages,
/// `+`/`#` filters, keep-alive enforcement at 1.5x the client's interval.
///
/// Each connection gets a reader thread (decode + route) and a writer
/// thread draining its outbound queue, so a slow subscriber never stalls
/// the publisher. Routing state sits behind a shared mutex.
class Broker {
public:
    /// Binds and starts serving. Throws BrokerError if the address is unusable.
    explicit Broker(BrokerConfig config);
    ~Broker();
    Broker(const Broker&) = delete;
    Broker& operator=(const Broker&) = delete;

    std::uint16_t port() const noexcept;
    net::Endpoint endpoint() const;
    BrokerStats stats() const;

    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace piheart::mqtt
