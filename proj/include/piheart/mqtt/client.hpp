#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "piheart/net.hpp"

namespace piheart::mqtt {

/// TCP refusal, handshake timeout or a rejected CONNECT.
class ConnectError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operation attempted in the wrong state (e.g. publish before CONNACK).
class ClientStateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// The established session broke (peer reset, protocol error, timeout).
class SessionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ClientOptions {
    net::Endpoint broker;
    std::string client_id;
    std::uint16_t keep_alive_s = 30;
    std::chrono::milliseconds connect_timeout{5000};
    std::chrono::milliseconds subscribe_timeout{5000};
};

using MessageCallback = std::function<void(std::string_view topic, std::string_view payload)>;

/// Blocking MQTT 3.1.1 client (QoS 0).
///
/// A receive thread dispatches incoming PUBLISH packets to subscription
/// callbacks in arrival order and sends PINGREQ when the link has been
/// quiet for half the keep-alive. Callbacks must not block or call
/// subscribe(). There is no automatic reconnect.
class Client {
public:
    Client();
    ~Client();
    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    /// TCP connect plus CONNECT/CONNACK. Throws ConnectError.
    void connect(const ClientOptions& options);

    /// Throws ClientStateError before the handshake, SessionError once the link broke.
    void publish(std::string_view topic, std::string_view payload, bool retain = false);

    /// Registers `callback` and waits for the SUBACK.
    void subscribe(std::string_view filter, MessageCallback callback);

    /// Sends DISCONNECT and closes; safe to call repeatedly.
    void disconnect();

    bool connected() const;
    std::optional<std::string> session_error() const;

    /// Called once, from the receive thread, when the session breaks.
    void on_session_lost(std::function<void(const std::string& reason)> handler);

    std::uint64_t pings_sent() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace piheart::mqtt
