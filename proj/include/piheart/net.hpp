#pragma once

#include <chrono>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace piheart::net {

class NetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    std::string to_string() const { return host + ":" + std::to_string(port); }
};

/// Parses "host:port" (IPv4 literal or "localhost"). Throws NetError.
Endpoint parse_endpoint(std::string_view text);

/// Owning file descriptor.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket();
    Socket(Socket&& other) noexcept;
    Socket& operator=(Socket&& other) noexcept;
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;

    int fd() const noexcept { return fd_; }
    bool valid() const noexcept { return fd_ >= 0; }

    /// Wakes any thread blocked on this socket without releasing the fd.
    void shutdown() noexcept;
    void close() noexcept;

private:
    int fd_ = -1;
};

/// Bound, listening TCP socket; port 0 picks an ephemeral port.
Socket listen_tcp(const Endpoint& endpoint, int backlog = 64);
std::uint16_t local_port(const Socket& socket);

/// Blocking connect with timeout. Throws NetError on refusal or timeout.
Socket connect_tcp(const Endpoint& endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(5));

/// Disables Nagle batching; small MQTT packets go out immediately.
void set_no_delay(const Socket& socket);

/// Writes everything or returns false (peer gone). Never raises SIGPIPE.
bool send_all(const Socket& socket, std::span<const std::uint8_t> data);

enum class WaitResult { Ready, Timeout, Error };

/// poll() for readability on `socket`, also returning early when `wake_fd` is readable.
WaitResult wait_readable(const Socket& socket, std::chrono::milliseconds timeout, int wake_fd = -1);

/// Self-pipe used to interrupt poll loops.
class WakePipe {
public:
    WakePipe();
    ~WakePipe();
    WakePipe(const WakePipe&) = delete;
    WakePipe& operator=(const WakePipe&) = delete;

    int read_fd() const noexcept { return fds_[0]; }
    void notify() noexcept;

private:
    int fds_[2] = {-1, -1};
};

} // namespace piheart::net
