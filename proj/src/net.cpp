#include "piheart/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

namespace piheart::net {

namespace {

sockaddr_in to_sockaddr(const Endpoint& ep) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port);
    const std::string host = ep.host == "localhost" ? "127.0.0.1" : ep.host;
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        throw NetError("bad IPv4 address '" + ep.host + "'");
    }
    return addr;
}

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

} // namespace

Endpoint parse_endpoint(std::string_view text) {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon == 0) {
        throw NetError("expected host:port, got '" + std::string(text) + "'");
    }
    Endpoint ep;
    ep.host = std::string(text.substr(0, colon));
    const auto port_text = text.substr(colon + 1);
    unsigned port = 0;
    auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port > 65535) {
        throw NetError("bad port in '" + std::string(text) + "'");
    }
    ep.port = static_cast<std::uint16_t>(port);
    to_sockaddr(ep);
    return ep;
}

Socket::~Socket() { close(); }

Socket::Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }

Socket& Socket::operator=(Socket&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        other.fd_ = -1;
    }
    return *this;
}

void Socket::shutdown() noexcept {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
    }
}

void Socket::close() noexcept {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

Socket listen_tcp(const Endpoint& endpoint, int backlog) {
    const auto addr = to_sockaddr(endpoint);
    Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!s.valid()) {
        throw NetError(errno_text("socket"));
    }
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
        throw NetError(errno_text(("bind " + endpoint.to_string()).c_str()));
    }
    if (::listen(s.fd(), backlog) != 0) {
        throw NetError(errno_text("listen"));
    }
    return s;
}

std::uint16_t local_port(const Socket& socket) {
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    if (::getsockname(socket.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
        throw NetError(errno_text("getsockname"));
    }
    return ntohs(addr.sin_port);
}

Socket connect_tcp(const Endpoint& endpoint, std::chrono::milliseconds timeout) {
    const auto addr = to_sockaddr(endpoint);
    Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
    if (!s.valid()) {
        throw NetError(errno_text("socket"));
    }
    if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
        if (errno != EINPROGRESS) {
            throw NetError(errno_text(("connect " + endpoint.to_string()).c_str()));
        }
        pollfd pfd{s.fd(), POLLOUT, 0};
        const int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
        if (rc == 0) {
            throw NetError("connect " + endpoint.to_string() + ": timed out");
        }
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
        if (rc < 0 || err != 0) {
            errno = err ? err : errno;
            throw NetError(errno_text(("connect " + endpoint.to_string()).c_str()));
        }
    }
    const int flags = ::fcntl(s.fd(), F_GETFL);
    ::fcntl(s.fd(), F_SETFL, flags & ~O_NONBLOCK);
    set_no_delay(s);
    return s;
}

void set_no_delay(const Socket& socket) {
    int one = 1;
    ::setsockopt(socket.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

bool send_all(const Socket& socket, std::span<const std::uint8_t> data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        const auto n = ::send(socket.fd(), data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            return false;
        }
        sent += static_cast<std::size_t>(n);
    }
    return true;
}

WaitResult wait_readable(const Socket& socket, std::chrono::milliseconds timeout, int wake_fd) {
    pollfd fds[2] = {{socket.fd(), POLLIN, 0}, {wake_fd, POLLIN, 0}};
    const nfds_t n = wake_fd >= 0 ? 2 : 1;
    while (true) {
        const int rc = ::poll(fds, n, static_cast<int>(timeout.count()));
        if (rc < 0 && errno == EINTR) {
            continue;
        }
        if (rc < 0) {
            return WaitResult::Error;
        }
        if (rc == 0) {
            return WaitResult::Timeout;
        }
        if (n == 2 && (fds[1].revents & POLLIN)) {
            return WaitResult::Error;
        }
        return WaitResult::Ready;
    }
}

WakePipe::WakePipe() {
    if (::pipe2(fds_, O_CLOEXEC | O_NONBLOCK) != 0) {
        throw NetError(errno_text("pipe"));
    }
}

WakePipe::~WakePipe() {
    for (int fd : fds_) {
        if (fd >= 0) {
            ::close(fd);
        }
    }
}

void WakePipe::notify() noexcept {
    const char byte = 1;
    [[maybe_unused]] auto n = ::write(fds_[1], &byte, 1);
}

} // namespace piheart::net
