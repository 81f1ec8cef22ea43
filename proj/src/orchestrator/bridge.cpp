#include "piheart/orchestrator/bridge.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <deque>
#include <mutex>
#include <set>
#include <thread>

namespace piheart {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using json = nlohmann::json;

namespace {

/// Frames queued for one slow console before it is dropped.
constexpr std::size_t kMaxOutbox = 10000;

} // namespace

struct Bridge::Impl {
    class Connection;

    Session& session;
    asio::io_context ioc;
    tcp::acceptor acceptor{ioc};
    std::thread io_thread;
    std::set<std::shared_ptr<Connection>> connections; // io thread only
    std::atomic<std::size_t> count{0};
    std::uint16_t port = 0;
    int listener_id = 0;
    std::mutex start_mutex;
    std::function<void()> start_handler;
    bool stopped = false;

    explicit Impl(Session& s) : session(s) {}

    class Connection : public std::enable_shared_from_this<Connection> {
    public:
        Connection(Impl& bridge, tcp::socket socket) : bridge_(bridge), ws_(std::move(socket)) {}

        void start() {
            ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
            ws_.async_accept([self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
        }

        void send(std::shared_ptr<const std::string> text) {
            if (closed_) {
                return;
            }
            if (outbox_.size() >= kMaxOutbox) {
                close();
                return;
            }
            outbox_.push_back(std::move(text));
            if (outbox_.size() == 1) {
                write_next();
            }
        }

        void close() {
            if (closed_) {
                return;
            }
            closed_ = true;
            beast::error_code ec;
            beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
            beast::get_lowest_layer(ws_).close();
            bridge_.drop(shared_from_this());
        }

    private:
        void on_accept(beast::error_code ec) {
            if (ec) {
                bridge_.drop(shared_from_this());
                return;
            }
            ws_.text(true);
            send(std::make_shared<const std::string>(bridge_.session.snapshot().dump()));
            read_next();
        }

        void read_next() {
            ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
                if (ec) {
                    self->close();
                    return;
                }
                auto text = beast::buffers_to_string(self->buffer_.data());
                self->buffer_.consume(self->buffer_.size());
                // Posted so the reply follows the events the command caused.
                auto reply = std::make_shared<const std::string>(self->bridge_.handle_command(text).dump());
                asio::post(self->bridge_.ioc, [self, reply] { self->send(reply); });
                self->read_next();
            });
        }

        void write_next() {
            ws_.async_write(asio::buffer(*outbox_.front()),
                            [self = shared_from_this()](beast::error_code ec, std::size_t) {
                                if (ec) {
                                    self->close();
                                    return;
                                }
                                self->outbox_.pop_front();
                                if (!self->outbox_.empty()) {
                                    self->write_next();
                                }
                            });
        }

        Impl& bridge_;
        websocket::stream<beast::tcp_stream> ws_;
        beast::flat_buffer buffer_;
        std::deque<std::shared_ptr<const std::string>> outbox_;
        bool closed_ = false;
    };

    void drop(const std::shared_ptr<Connection>& c) {
        if (connections.erase(c)) {
            count = connections.size();
        }
    }

    void accept_next() {
        acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
            if (ec) {
                return; // acceptor closed
            }
            auto c = std::make_shared<Connection>(*this, std::move(socket));
            connections.insert(c);
            count = connections.size();
            c->start();
            accept_next();
        });
    }

    void broadcast(const std::string& text) {
        auto shared = std::make_shared<const std::string>(text);
        asio::post(ioc, [this, shared] {
            // Copy: a failing send may drop the connection from the set.
            const auto targets = connections;
            for (const auto& c : targets) {
                c->send(shared);
            }
        });
    }

    static json error_frame(const std::string& message, const json& request) {
        json e{{"type", "error"}, {"error", message}};
        if (request.is_object() && request.contains("type")) {
            e["command"] = request["type"];
        }
        if (request.is_object() && request.contains("id")) {
            e["id"] = request["id"];
        }
        return e;
    }

    json handle_command(const std::string& text) {
        const json request = json::parse(text, nullptr, false);
        if (request.is_discarded() || !request.is_object()) {
            return error_frame("command is not a JSON object", json());
        }
        if (!request.contains("type") || !request["type"].is_string()) {
            return error_frame("command needs a string \"type\"", request);
        }
        const auto type = request["type"].get<std::string>();
        json ack{{"type", "ack"}, {"command", type}};
        if (request.contains("id")) {
            ack["id"] = request["id"];
        }
        try {
            if (type == "set_modality" || type == "set_movie") {
                if (!request.contains("value") || !request["value"].is_string()) {
                    return error_frame("\"" + type + "\" needs a string \"value\"", request);
                }
                const auto value = request["value"].get<std::string>();
                if (type == "set_modality") {
                    session.set_modality(std::string_view(value));
                } else {
                    session.set_movie(value);
                }
                ack["value"] = value;
            } else if (type == "start") {
                std::function<void()> handler;
                {
                    std::lock_guard lock(start_mutex);
                    handler = start_handler;
                }
                if (handler) {
                    handler();
                } else {
                    session.start();
                }
            } else if (type == "stop") {
                session.stop();
            } else {
                return error_frame("unknown command \"" + type + "\"", request);
            }
        } catch (const std::exception& e) {
            return error_frame(e.what(), request);
        }
        return ack;
    }

    void start(const net::Endpoint& listen) {
        beast::error_code ec;
        const auto address = asio::ip::make_address(listen.host == "localhost" ? "127.0.0.1" : listen.host, ec);
        if (ec) {
            throw BridgeError("bad bridge address " + listen.host);
        }
        const tcp::endpoint ep(address, listen.port);
        acceptor.open(ep.protocol(), ec);
        if (!ec) {
            acceptor.set_option(asio::socket_base::reuse_address(true), ec);
        }
        if (!ec) {
            acceptor.bind(ep, ec);
        }
        if (!ec) {
            acceptor.listen(asio::socket_base::max_listen_connections, ec);
        }
        if (ec) {
            throw BridgeError("cannot listen on " + listen.to_string() + ": " + ec.message());
        }
        port = acceptor.local_endpoint().port();
        listener_id = session.add_listener([this](const std::string& text) { broadcast(text); });
        accept_next();
        io_thread = std::thread([this] { ioc.run(); });
    }

    void shutdown() {
        if (stopped) {
            return;
        }
        stopped = true;
        session.remove_listener(listener_id);
        asio::post(ioc, [this] {
            beast::error_code ec;
            acceptor.close(ec);
            const auto all = connections;
            for (const auto& c : all) {
                c->close();
            }
        });
        // Let the closes run, then end the loop.
        asio::post(ioc, [this] { ioc.stop(); });
        if (io_thread.joinable()) {
            io_thread.join();
        }
        connections.clear();
        count = 0;
    }
};

Bridge::Bridge(Session& session, const net::Endpoint& listen) : impl_(std::make_unique<Impl>(session)) {
    impl_->start(listen);
}

Bridge::~Bridge() { impl_->shutdown(); }

std::uint16_t Bridge::port() const noexcept { return impl_->port; }

std::size_t Bridge::client_count() const { return impl_->count.load(); }

void Bridge::on_start(std::function<void()> handler) {
    std::lock_guard lock(impl_->start_mutex);
    impl_->start_handler = std::move(handler);
}

void Bridge::stop() { impl_->shutdown(); }

} // namespace piheart
