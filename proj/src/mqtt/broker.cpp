#include "piheart/mqtt/broker.hpp"

#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <deque>
#include <list>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <thread>
#include <unordered_map>

#include "piheart/mqtt/topic.hpp"

namespace piheart::mqtt {

namespace {

using Clock = std::chrono::steady_clock;
using SharedBytes = std::shared_ptr<const Bytes>;

struct Connection {
    net::Socket socket;
    std::string client_id;
    std::vector<std::string> filters; // guarded by Impl::routes_mutex
    std::optional<Will> will;
    std::uint16_t keep_alive_s = 0;

    std::mutex out_mutex;
    std::condition_variable out_cv;
    std::deque<SharedBytes> outbound;
    bool closing = false;

    std::thread reader;
    std::thread writer;
    std::atomic<bool> finished{false};

    void enqueue(SharedBytes bytes) {
        {
            std::lock_guard lock(out_mutex);
            if (closing) {
                return;
            }
            outbound.push_back(std::move(bytes));
        }
        out_cv.notify_one();
    }
};

SharedBytes encoded(const Packet& p, std::size_t max_payload) {
    return std::make_shared<const Bytes>(encode_packet(p, max_payload));
}

} // namespace

struct Broker::Impl {
    BrokerConfig config;
    net::Socket listener;
    std::uint16_t port = 0;
    net::WakePipe wake;
    std::thread acceptor;
    std::atomic<bool> stopping{false};

    mutable std::shared_mutex routes_mutex;
    std::unordered_map<std::string, std::shared_ptr<Connection>> sessions;
    std::map<std::string, Publish> retained;

    mutable std::mutex conns_mutex;
    std::list<std::shared_ptr<Connection>> connections;
    std::uint64_t auto_id = 0;

    std::atomic<std::uint64_t> publishes_received{0};
    std::atomic<std::uint64_t> messages_delivered{0};
    std::atomic<std::uint64_t> protocol_errors{0};

    explicit Impl(BrokerConfig cfg) : config(std::move(cfg)) {
        try {
            listener = net::listen_tcp(config.listen);
            port = net::local_port(listener);
        } catch (const net::NetError& e) {
            throw BrokerError(std::string("broker startup failed: ") + e.what());
        }
        acceptor = std::thread([this] { accept_loop(); });
    }

    void accept_loop() {
        while (!stopping) {
            reap();
            const auto ready = net::wait_readable(listener, std::chrono::milliseconds(200), wake.read_fd());
            if (stopping) {
                break;
            }
            if (ready != net::WaitResult::Ready) {
                continue;
            }
            net::Socket client(::accept4(listener.fd(), nullptr, nullptr, SOCK_CLOEXEC));
            if (!client.valid()) {
                continue;
            }
            net::set_no_delay(client);
            std::lock_guard lock(conns_mutex);
            std::size_t live = 0;
            for (const auto& c : connections) {
                live += c->finished ? 0 : 1;
            }
            if (live >= config.max_clients) {
                continue; // dropped socket closes the connection
            }
            auto conn = std::make_shared<Connection>();
            conn->socket = std::move(client);
            conn->writer = std::thread([this, conn] { write_loop(*conn); });
            conn->reader = std::thread([this, conn] { read_loop(conn); });
            connections.push_back(std::move(conn));
        }
    }

    void reap() {
        std::list<std::shared_ptr<Connection>> done;
        {
            std::lock_guard lock(conns_mutex);
            for (auto it = connections.begin(); it != connections.end();) {
                if ((*it)->finished) {
                    done.splice(done.end(), connections, it++);
                } else {
                    ++it;
                }
            }
        }
        for (auto& c : done) {
            if (c->reader.joinable()) {
                c->reader.join();
            }
        }
    }

    void write_loop(Connection& conn) {
        std::vector<std::uint8_t> batch;
        while (true) {
            std::deque<SharedBytes> pending;
            {
                std::unique_lock lock(conn.out_mutex);
                conn.out_cv.wait(lock, [&] { return conn.closing || !conn.outbound.empty(); });
                if (conn.outbound.empty()) {
                    return;
                }
                pending.swap(conn.outbound);
            }
            batch.clear();
            for (const auto& b : pending) {
                batch.insert(batch.end(), b->begin(), b->end());
            }
            if (!net::send_all(conn.socket, batch)) {
                std::lock_guard lock(conn.out_mutex);
                conn.closing = true;
                conn.outbound.clear();
                conn.socket.shutdown();
                return;
            }
        }
    }

    void read_loop(const std::shared_ptr<Connection>& conn) {
        std::vector<std::uint8_t> buffer;
        std::size_t offset = 0;
        bool connected = false;
        bool graceful = false;
        auto last_packet = Clock::now();
        const auto accepted_at = last_packet;
        std::uint8_t chunk[64 * 1024];

        while (!stopping) {
            const auto now = Clock::now();
            if (!connected && now - accepted_at > config.connect_timeout) {
                break;
            }
            if (connected && conn->keep_alive_s > 0 &&
                now - last_packet > std::chrono::milliseconds(conn->keep_alive_s * 1500)) {
                break;
            }
            const auto ready = net::wait_readable(conn->socket, std::chrono::milliseconds(100));
            if (ready == net::WaitResult::Timeout) {
                continue;
            }
            if (ready == net::WaitResult::Error) {
                break;
            }
            const auto n = ::recv(conn->socket.fd(), chunk, sizeof chunk, 0);
            if (n < 0 && errno == EINTR) {
                continue;
            }
            if (n <= 0) {
                break;
            }
            buffer.insert(buffer.end(), chunk, chunk + n);

            bool keep_going = true;
            while (keep_going) {
                auto result = decode_packet(std::span(buffer).subspan(offset));
                if (result.need_more()) {
                    break;
                }
                if (result.protocol_error()) {
                    ++protocol_errors;
                    keep_going = false;
                    break;
                }
                offset += result.consumed;
                last_packet = Clock::now();
                keep_going = handle(conn, *result.packet, connected, graceful);
            }
            if (!keep_going) {
                break;
            }
            if (offset > 0) {
                buffer.erase(buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(offset));
                offset = 0;
            }
        }
        close(conn, connected, graceful);
    }

    // Returns false when the connection must close.
    bool handle(const std::shared_ptr<Connection>& conn, const Packet& packet, bool& connected, bool& graceful) {
        if (!connected && !std::holds_alternative<Connect>(packet)) {
            ++protocol_errors;
            return false;
        }
        if (const auto* c = std::get_if<Connect>(&packet)) {
            if (connected) {
                ++protocol_errors;
                return false;
            }
            return on_connect(conn, *c, connected);
        }
        if (const auto* p = std::get_if<Publish>(&packet)) {
            route(*p);
            return true;
        }
        if (const auto* s = std::get_if<Subscribe>(&packet)) {
            on_subscribe(conn, *s);
            return true;
        }
        if (std::holds_alternative<Pingreq>(packet)) {
            conn->enqueue(encoded(Pingresp{}, config.max_payload));
            return true;
        }
        if (std::holds_alternative<Disconnect>(packet)) {
            graceful = true;
            return false;
        }
        ++protocol_errors;
        return false;
    }

    bool on_connect(const std::shared_ptr<Connection>& conn, const Connect& c, bool& connected) {
        std::string id = c.client_id;
        if (id.empty()) {
            if (!c.clean_session) {
                conn->enqueue(encoded(Connack{false, ConnectReturnCode::IdentifierRejected}, config.max_payload));
                return false;
            }
            std::lock_guard lock(conns_mutex);
            id = "auto-" + std::to_string(++auto_id);
        }
        std::shared_ptr<Connection> previous;
        {
            std::unique_lock lock(routes_mutex);
            auto& slot = sessions[id];
            previous = std::exchange(slot, conn);
            conn->client_id = id;
            conn->keep_alive_s = c.keep_alive_s;
            conn->will = c.will;
            conn->enqueue(encoded(Connack{false, ConnectReturnCode::Accepted}, config.max_payload));
        }
        if (previous) {
            // Same client id: the newer connection takes over.
            previous->socket.shutdown();
        }
        connected = true;
        return true;
    }

    void on_subscribe(const std::shared_ptr<Connection>& conn, const Subscribe& s) {
        Suback ack{s.packet_id, {}};
        std::unique_lock lock(routes_mutex);
        std::vector<SharedBytes> replay;
        for (const auto& t : s.topics) {
            ack.return_codes.push_back(0);
            if (std::find(conn->filters.begin(), conn->filters.end(), t.filter) == conn->filters.end()) {
                conn->filters.push_back(t.filter);
            }
            for (const auto& [topic, msg] : retained) {
                if (topic_matches(t.filter, topic)) {
                    replay.push_back(encoded(msg, config.max_payload));
                }
            }
        }
        conn->enqueue(encoded(ack, config.max_payload));
        for (auto& r : replay) {
            conn->enqueue(std::move(r));
            ++messages_delivered;
        }
    }

    void route(const Publish& p) {
        ++publishes_received;
        Publish live = p;
        live.retain = false;
        const auto bytes = encoded(live, config.max_payload);

        auto deliver = [&] {
            for (const auto& [id, target] : sessions) {
                for (const auto& f : target->filters) {
                    if (topic_matches(f, p.topic)) {
                        target->enqueue(bytes);
                        ++messages_delivered;
                        break;
                    }
                }
            }
        };
        if (p.retain) {
            std::unique_lock lock(routes_mutex);
            if (p.payload.empty()) {
                retained.erase(p.topic);
            } else {
                retained[p.topic] = p;
            }
            deliver();
        } else {
            std::shared_lock lock(routes_mutex);
            deliver();
        }
    }

    void close(const std::shared_ptr<Connection>& conn, bool connected, bool graceful) {
        std::optional<Will> will;
        if (connected) {
            std::unique_lock lock(routes_mutex);
            auto it = sessions.find(conn->client_id);
            if (it != sessions.end() && it->second == conn) {
                sessions.erase(it);
            }
            conn->filters.clear();
            if (!graceful) {
                will = conn->will;
            }
        }
        if (will && !stopping) {
            route(Publish{will->topic, will->payload, will->retain});
        }
        {
            std::lock_guard lock(conn->out_mutex);
            conn->closing = true;
        }
        conn->out_cv.notify_one();
        conn->writer.join();
        conn->socket.shutdown();
        conn->finished = true;
    }

    void stop() {
        if (stopping.exchange(true)) {
            return;
        }
        wake.notify();
        if (acceptor.joinable()) {
            acceptor.join();
        }
        std::list<std::shared_ptr<Connection>> all;
        {
            std::lock_guard lock(conns_mutex);
            all.swap(connections);
        }
        for (auto& c : all) {
            c->socket.shutdown();
        }
        for (auto& c : all) {
            if (c->reader.joinable()) {
                c->reader.join();
            }
        }
        listener.close();
    }
};

Broker::Broker(BrokerConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Broker::~Broker() { stop(); }

std::uint16_t Broker::port() const noexcept { return impl_->port; }

net::Endpoint Broker::endpoint() const { return {impl_->config.listen.host, impl_->port}; }

BrokerStats Broker::stats() const {
    BrokerStats s;
    {
        std::shared_lock lock(impl_->routes_mutex);
        s.connected_clients = impl_->sessions.size();
        s.retained_topics = impl_->retained.size();
    }
    s.publishes_received = impl_->publishes_received;
    s.messages_delivered = impl_->messages_delivered;
    s.protocol_errors = impl_->protocol_errors;
    return s;
}

void Broker::stop() { impl_->stop(); }

} // namespace piheart::mqtt
