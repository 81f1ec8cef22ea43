#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>

#include "piheart/net.hpp"
#include "piheart/orchestrator/session.hpp"

namespace piheart {

class BridgeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// WebSocket endpoint for operator consoles.
///
/// Every client gets a "hello" snapshot on connect, then the session's
/// events as JSON text frames. Commands (`set_modality`, `set_movie`,
/// `start`, `stop`) go through the same Session calls as the CLI; each is
/// answered with an "ack" or an "error" frame to the sender only.
class Bridge {
public:
    /// Binds and starts serving; throws BridgeError if the address is unusable.
    Bridge(Session& session, const net::Endpoint& listen);
    ~Bridge();
    Bridge(const Bridge&) = delete;
    Bridge& operator=(const Bridge&) = delete;

    std::uint16_t port() const noexcept;
    std::size_t client_count() const;

    /// Replaces the default `start` command (Session::start with no segment).
    /// The handler runs on the bridge thread and must return promptly.
    void on_start(std::function<void()> handler);

    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace piheart
