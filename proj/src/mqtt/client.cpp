#include "piheart/mqtt/client.hpp"

#include <sys/socket.h>

#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

#include "piheart/mqtt/packet.hpp"
#include "piheart/mqtt/topic.hpp"

namespace piheart::mqtt {

namespace {

using Clock = std::chrono::steady_clock;

enum class State { Idle, Connected, Lost, Closed };

} // namespace

struct Client::Impl {
    mutable std::mutex mutex;
    std::condition_variable cv;
    State state = State::Idle;
    std::optional<std::string> error;
    ClientOptions options;

    net::Socket socket;
    std::mutex send_mutex;
    Clock::time_point last_send = Clock::now();
    std::thread receiver;
    std::atomic<bool> closing{false};
    std::atomic<std::uint64_t> pings{0};

    struct Subscription {
        std::string filter;
        MessageCallback callback;
    };
    std::vector<Subscription> subscriptions;
    std::map<std::uint16_t, std::optional<Suback>> pending_subacks;
    std::uint16_t next_packet_id = 1;
    std::function<void(const std::string&)> lost_handler;

    ~Impl() { shutdown(true); }

    bool send(const Packet& p) {
        const auto bytes = encode_packet(p);
        std::lock_guard lock(send_mutex);
        last_send = Clock::now();
        return net::send_all(socket, bytes);
    }

    void connect(const ClientOptions& opts) {
        {
            std::lock_guard lock(mutex);
            if (state == State::Connected) {
                throw ClientStateError("client already connected");
            }
        }
        if (receiver.joinable()) {
            receiver.join();
        }
        options = opts;
        try {
            socket = net::connect_tcp(opts.broker, opts.connect_timeout);
        } catch (const net::NetError& e) {
            throw ConnectError(e.what());
        }
        Connect c;
        c.client_id = opts.client_id;
        c.keep_alive_s = opts.keep_alive_s;
        if (!send(c)) {
            throw ConnectError("connection reset during CONNECT");
        }

        // Handshake is read synchronously; the receive thread starts afterwards.
        std::vector<std::uint8_t> buffer;
        const auto deadline = Clock::now() + opts.connect_timeout;
        std::uint8_t chunk[256];
        while (true) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
            if (left.count() <= 0 || net::wait_readable(socket, left) != net::WaitResult::Ready) {
                socket.close();
                throw ConnectError("no CONNACK from " + opts.broker.to_string());
            }
            const auto n = ::recv(socket.fd(), chunk, sizeof chunk, 0);
            if (n <= 0) {
                socket.close();
                throw ConnectError("connection closed during handshake with " + opts.broker.to_string());
            }
            buffer.insert(buffer.end(), chunk, chunk + n);
            auto r = decode_packet(buffer);
            if (r.need_more()) {
                continue;
            }
            const auto* ack = r.ok() ? std::get_if<Connack>(&*r.packet) : nullptr;
            if (!ack) {
                socket.close();
                throw ConnectError("expected CONNACK from " + opts.broker.to_string());
            }
            if (ack->return_code != ConnectReturnCode::Accepted) {
                socket.close();
                throw ConnectError("broker refused connection, code " +
                                   std::to_string(static_cast<int>(ack->return_code)));
            }
            buffer.erase(buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(r.consumed));
            break;
        }
        {
            std::lock_guard lock(mutex);
            state = State::Connected;
            error.reset();
        }
        closing = false;
        receiver = std::thread([this, rest = std::move(buffer)]() mutable { receive_loop(std::move(rest)); });
    }

    void ensure_connected() const {
        std::lock_guard lock(mutex);
        if (state == State::Lost) {
            throw SessionError("session lost: " + error.value_or("unknown"));
        }
        if (state != State::Connected) {
            throw ClientStateError("client is not connected (no CONNACK yet)");
        }
    }

    void receive_loop(std::vector<std::uint8_t> buffer) {
        std::uint8_t chunk[64 * 1024];
        std::string reason;
        const auto keep_alive = std::chrono::milliseconds(options.keep_alive_s * 1000);
        while (!closing) {
            if (options.keep_alive_s > 0) {
                std::unique_lock lock(send_mutex, std::try_to_lock);
                if (lock.owns_lock() && Clock::now() - last_send >= keep_alive / 2) {
                    lock.unlock();
                    ++pings;
                    if (!send(Pingreq{})) {
                        reason = "PINGREQ failed";
                        break;
                    }
                }
            }
            bool had_data = false;
            std::size_t offset = 0;
            while (true) {
                auto r = decode_packet(std::span(buffer).subspan(offset));
                if (r.need_more()) {
                    break;
                }
                if (r.protocol_error()) {
                    reason = "protocol error: " + r.error;
                    break;
                }
                offset += r.consumed;
                dispatch(*r.packet);
            }
            buffer.erase(buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(offset));
            if (!reason.empty()) {
                break;
            }
            const auto ready = net::wait_readable(socket, std::chrono::milliseconds(100));
            if (ready == net::WaitResult::Timeout) {
                continue;
            }
            if (ready == net::WaitResult::Ready) {
                const auto n = ::recv(socket.fd(), chunk, sizeof chunk, 0);
                if (n > 0) {
                    buffer.insert(buffer.end(), chunk, chunk + n);
                    had_data = true;
                } else if (n < 0 && errno == EINTR) {
                    continue;
                }
            }
            if (!had_data) {
                reason = closing ? "" : "connection closed by broker";
                break;
            }
        }
        if (closing) {
            return;
        }
        std::function<void(const std::string&)> handler;
        {
            std::lock_guard lock(mutex);
            state = State::Lost;
            error = reason;
            handler = lost_handler;
        }
        cv.notify_all();
        if (handler) {
            handler(reason);
        }
    }

    void dispatch(const Packet& packet) {
        if (const auto* p = std::get_if<Publish>(&packet)) {
            std::vector<MessageCallback> targets;
            {
                std::lock_guard lock(mutex);
                for (const auto& s : subscriptions) {
                    if (topic_matches(s.filter, p->topic)) {
                        targets.push_back(s.callback);
                    }
                }
            }
            for (const auto& cb : targets) {
                cb(p->topic, p->payload);
            }
        } else if (const auto* ack = std::get_if<Suback>(&packet)) {
            {
                std::lock_guard lock(mutex);
                auto it = pending_subacks.find(ack->packet_id);
                if (it != pending_subacks.end()) {
                    it->second = *ack;
                }
            }
            cv.notify_all();
        }
    }

    void subscribe(std::string_view filter, MessageCallback callback) {
        if (!valid_topic_filter(filter)) {
            throw std::invalid_argument("invalid topic filter '" + std::string(filter) + "'");
        }
        ensure_connected();
        std::uint16_t id = 0;
        {
            std::lock_guard lock(mutex);
            // Registered before SUBACK so retained messages sent right after it are not missed.
            subscriptions.push_back({std::string(filter), std::move(callback)});
            id = next_packet_id++;
            if (next_packet_id == 0) {
                next_packet_id = 1;
            }
            pending_subacks[id];
        }
        if (!send(Subscribe{id, {{std::string(filter), 0}}})) {
            throw SessionError("send failed during SUBSCRIBE");
        }
        std::unique_lock lock(mutex);
        const bool done = cv.wait_for(lock, options.subscribe_timeout, [&] {
            return pending_subacks[id].has_value() || state != State::Connected;
        });
        auto ack = pending_subacks[id];
        pending_subacks.erase(id);
        if (!done || !ack) {
            throw SessionError("no SUBACK for '" + std::string(filter) + "'");
        }
        if (ack->return_codes.empty() || ack->return_codes.front() == kSubackFailure) {
            throw SessionError("broker rejected subscription '" + std::string(filter) + "'");
        }
    }

    void shutdown(bool graceful) {
        bool was_connected = false;
        {
            std::lock_guard lock(mutex);
            was_connected = state == State::Connected;
            if (state != State::Idle) {
                state = State::Closed;
            }
        }
        closing = true;
        if (was_connected && graceful && socket.valid()) {
            send(Disconnect{});
        }
        socket.shutdown();
        if (receiver.joinable() && receiver.get_id() != std::this_thread::get_id()) {
            receiver.join();
        }
        cv.notify_all();
    }
};

Client::Client() : impl_(std::make_unique<Impl>()) {}

Client::~Client() = default;

void Client::connect(const ClientOptions& options) { impl_->connect(options); }

void Client::publish(std::string_view topic, std::string_view payload, bool retain) {
    impl_->ensure_connected();
    Publish p{std::string(topic), std::string(payload), retain};
    if (!impl_->send(p)) {
        throw SessionError("send failed publishing to '" + std::string(topic) + "'");
    }
}

void Client::subscribe(std::string_view filter, MessageCallback callback) {
    impl_->subscribe(filter, std::move(callback));
}

void Client::disconnect() { impl_->shutdown(true); }

bool Client::connected() const {
    std::lock_guard lock(impl_->mutex);
    return impl_->state == State::Connected;
}

std::optional<std::string> Client::session_error() const {
    std::lock_guard lock(impl_->mutex);
    return impl_->state == State::Lost ? impl_->error : std::nullopt;
}

void Client::on_session_lost(std::function<void(const std::string&)> handler) {
    std::lock_guard lock(impl_->mutex);
    impl_->lost_handler = std::move(handler);
}

std::uint64_t Client::pings_sent() const { return impl_->pings; }

} // namespace piheart::mqtt
