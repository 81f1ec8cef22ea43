#include "piheart/mqtt/packet.hpp"

#include <string>

#include "piheart/mqtt/topic.hpp"

namespace piheart::mqtt {

namespace {

constexpr std::string_view kProtocolName = "MQTT";
constexpr std::uint8_t kProtocolLevel = 4;

// ---------------------------------------------------------------------------
// Writer

class Writer {
public:
    void u8(std::uint8_t v) { body_.push_back(v); }
    void u16(std::uint16_t v) {
        body_.push_back(static_cast<std::uint8_t>(v >> 8));
        body_.push_back(static_cast<std::uint8_t>(v & 0xFF));
    }
    void binary(std::string_view s) {
        if (s.size() > 0xFFFF) {
            throw EncodeError("string field longer than 65535 bytes");
        }
        u16(static_cast<std::uint16_t>(s.size()));
        raw(s);
    }
    void utf8(std::string_view s) {
        if (!valid_mqtt_utf8(s)) {
            throw EncodeError("string field is not valid MQTT UTF-8");
        }
        binary(s);
    }
    void raw(std::string_view s) { body_.insert(body_.end(), s.begin(), s.end()); }

    Bytes finish(PacketType type, std::uint8_t flags) const {
        Bytes out;
        out.reserve(body_.size() + 5);
        out.push_back(static_cast<std::uint8_t>((static_cast<std::uint8_t>(type) << 4) | (flags & 0x0F)));
        encode_remaining_length(out, body_.size());
        out.insert(out.end(), body_.begin(), body_.end());
        return out;
    }

private:
    Bytes body_;
};

// ---------------------------------------------------------------------------
// Reader: bounds-checked cursor over one packet body.

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    bool u8(std::uint8_t& v) {
        if (pos_ + 1 > data_.size()) {
            return false;
        }
        v = data_[pos_++];
        return true;
    }
    bool u16(std::uint16_t& v) {
        if (pos_ + 2 > data_.size()) {
            return false;
        }
        v = static_cast<std::uint16_t>((data_[pos_] << 8) | data_[pos_ + 1]);
        pos_ += 2;
        return true;
    }
    bool binary(std::string& s) {
        std::uint16_t len = 0;
        if (!u16(len) || pos_ + len > data_.size()) {
            return false;
        }
        s.assign(reinterpret_cast<const char*>(data_.data() + pos_), len);
        pos_ += len;
        return true;
    }
    bool utf8(std::string& s) { return binary(s) && valid_mqtt_utf8(s); }
    std::string rest() {
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), data_.size() - pos_);
        pos_ = data_.size();
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

DecodeResult fail(std::string message) {
    DecodeResult r;
    r.status = DecodeResult::Status::ProtocolError;
    r.error = std::move(message);
    return r;
}

std::optional<Packet> parse_connect(Reader& r, std::string& error) {
    std::string name;
    std::uint8_t level = 0;
    std::uint8_t flags = 0;
    Connect c;
    if (!r.utf8(name) || !r.u8(level) || !r.u8(flags) || !r.u16(c.keep_alive_s)) {
        error = "truncated CONNECT header";
        return std::nullopt;
    }
    if (name != kProtocolName || level != kProtocolLevel) {
        error = "unsupported protocol (need MQTT level 4)";
        return std::nullopt;
    }
    const bool has_user = flags & 0x80;
    const bool has_pass = flags & 0x40;
    const bool will_retain = flags & 0x20;
    const std::uint8_t will_qos = (flags >> 3) & 0x03;
    const bool has_will = flags & 0x04;
    c.clean_session = flags & 0x02;
    if ((flags & 0x01) || will_qos == 3 || (!has_will && (will_qos != 0 || will_retain)) || (has_pass && !has_user)) {
        error = "invalid CONNECT flags";
        return std::nullopt;
    }
    if (!r.utf8(c.client_id)) {
        error = "bad client identifier";
        return std::nullopt;
    }
    if (has_will) {
        Will w;
        w.qos = will_qos;
        w.retain = will_retain;
        if (!r.utf8(w.topic) || !valid_topic_name(w.topic) || !r.binary(w.payload)) {
            error = "bad will";
            return std::nullopt;
        }
        c.will = std::move(w);
    }
    if (has_user) {
        std::string user;
        if (!r.utf8(user)) {
            error = "bad username";
            return std::nullopt;
        }
        c.username = std::move(user);
    }
    if (has_pass) {
        std::string pass;
        if (!r.binary(pass)) {
            error = "bad password";
            return std::nullopt;
        }
        c.password = std::move(pass);
    }
    return c;
}

std::optional<Packet> parse_body(PacketType type, std::uint8_t flags, Reader& r, std::string& error) {
    const auto require_flags = [&](std::uint8_t expected) {
        if (flags != expected) {
            error = "invalid fixed-header flags for " + std::string(to_string(type));
            return false;
        }
        return true;
    };

    switch (type) {
    case PacketType::Connect:
        if (!require_flags(0)) {
            return std::nullopt;
        }
        return parse_connect(r, error);
    case PacketType::Connack: {
        std::uint8_t ack = 0;
        std::uint8_t code = 0;
        if (!require_flags(0)) {
            return std::nullopt;
        }
        if (!r.u8(ack) || !r.u8(code) || (ack & 0xFE) || code > 5) {
            error = "malformed CONNACK";
            return std::nullopt;
        }
        return Connack{static_cast<bool>(ack & 1), static_cast<ConnectReturnCode>(code)};
    }
    case PacketType::Publish: {
        const std::uint8_t qos = (flags >> 1) & 0x03;
        if (qos != 0 || (flags & 0x08)) {
            error = "only QoS 0 PUBLISH is supported";
            return std::nullopt;
        }
        Publish p;
        p.retain = flags & 0x01;
        if (!r.utf8(p.topic) || !valid_topic_name(p.topic)) {
            error = "invalid PUBLISH topic";
            return std::nullopt;
        }
        p.payload = r.rest();
        return p;
    }
    case PacketType::Subscribe: {
        if (!require_flags(0x02)) {
            return std::nullopt;
        }
        Subscribe s;
        if (!r.u16(s.packet_id) || s.packet_id == 0) {
            error = "SUBSCRIBE needs a non-zero packet id";
            return std::nullopt;
        }
        while (!r.done()) {
            SubscribeTopic t;
            if (!r.utf8(t.filter) || !valid_topic_filter(t.filter) || !r.u8(t.qos) || t.qos > 2) {
                error = "malformed SUBSCRIBE topic";
                return std::nullopt;
            }
            s.topics.push_back(std::move(t));
        }
        if (s.topics.empty()) {
            error = "SUBSCRIBE without topics";
            return std::nullopt;
        }
        return s;
    }
    case PacketType::Suback: {
        if (!require_flags(0)) {
            return std::nullopt;
        }
        Suback s;
        if (!r.u16(s.packet_id)) {
            error = "truncated SUBACK";
            return std::nullopt;
        }
        while (!r.done()) {
            std::uint8_t code = 0;
            r.u8(code);
            if (code > 2 && code != kSubackFailure) {
                error = "invalid SUBACK return code";
                return std::nullopt;
            }
            s.return_codes.push_back(code);
        }
        return s;
    }
    case PacketType::Pingreq:
        return require_flags(0) ? std::optional<Packet>(Pingreq{}) : std::nullopt;
    case PacketType::Pingresp:
        return require_flags(0) ? std::optional<Packet>(Pingresp{}) : std::nullopt;
    case PacketType::Disconnect:
        return require_flags(0) ? std::optional<Packet>(Disconnect{}) : std::nullopt;
    }
    error = "unsupported packet type";
    return std::nullopt;
}

bool known_type(std::uint8_t t) {
    switch (t) {
    case 1:
    case 2:
    case 3:
    case 8:
    case 9:
    case 12:
    case 13:
    case 14:
        return true;
    default:
        return false;
    }
}

} // namespace

std::string_view to_string(PacketType type) {
    switch (type) {
    case PacketType::Connect:
        return "CONNECT";
    case PacketType::Connack:
        return "CONNACK";
    case PacketType::Publish:
        return "PUBLISH";
    case PacketType::Subscribe:
        return "SUBSCRIBE";
    case PacketType::Suback:
        return "SUBACK";
    case PacketType::Pingreq:
        return "PINGREQ";
    case PacketType::Pingresp:
        return "PINGRESP";
    case PacketType::Disconnect:
        return "DISCONNECT";
    }
    return "UNKNOWN";
}

PacketType packet_type(const Packet& packet) {
    return std::visit(
        [](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, Connect>) {
                return PacketType::Connect;
            } else if constexpr (std::is_same_v<T, Connack>) {
                return PacketType::Connack;
            } else if constexpr (std::is_same_v<T, Publish>) {
                return PacketType::Publish;
            } else if constexpr (std::is_same_v<T, Subscribe>) {
                return PacketType::Subscribe;
            } else if constexpr (std::is_same_v<T, Suback>) {
                return PacketType::Suback;
            } else if constexpr (std::is_same_v<T, Pingreq>) {
                return PacketType::Pingreq;
            } else if constexpr (std::is_same_v<T, Pingresp>) {
                return PacketType::Pingresp;
            } else {
                return PacketType::Disconnect;
            }
        },
        packet);
}

bool valid_mqtt_utf8(std::string_view text) {
    const auto* s = reinterpret_cast<const unsigned char*>(text.data());
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        const unsigned char c = s[i];
        if (c == 0) {
            return false;
        }
        if (c < 0x80) {
            ++i;
            continue;
        }
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > n) {
            return false;
        }
        for (std::size_t k = 1; k < len; ++k) {
            if ((s[i + k] & 0xC0) != 0x80) {
                return false;
            }
            cp = (cp << 6) | (s[i + k] & 0x3F);
        }
        const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000);
        if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
            return false;
        }
        i += len;
    }
    return true;
}

void encode_remaining_length(Bytes& out, std::size_t value) {
    if (value > 268'435'455) {
        throw EncodeError("remaining length exceeds 268435455");
    }
    do {
        auto byte = static_cast<std::uint8_t>(value % 128);
        value /= 128;
        if (value > 0) {
            byte |= 0x80;
        }
        out.push_back(byte);
    } while (value > 0);
}

Bytes encode_packet(const Packet& packet, std::size_t max_payload) {
    Writer w;
    return std::visit(
        [&](const auto& p) -> Bytes {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, Connect>) {
                w.utf8(kProtocolName);
                w.u8(kProtocolLevel);
                std::uint8_t flags = p.clean_session ? 0x02 : 0x00;
                if (p.will) {
                    if (p.will->qos > 2 || !valid_topic_name(p.will->topic)) {
                        throw EncodeError("invalid will");
                    }
                    flags |= 0x04 | static_cast<std::uint8_t>(p.will->qos << 3) | (p.will->retain ? 0x20 : 0);
                }
                if (p.password && !p.username) {
                    throw EncodeError("password requires a username");
                }
                if (p.username) {
                    flags |= 0x80;
                }
                if (p.password) {
                    flags |= 0x40;
                }
                w.u8(flags);
                w.u16(p.keep_alive_s);
                w.utf8(p.client_id);
                if (p.will) {
                    w.utf8(p.will->topic);
                    w.binary(p.will->payload);
                }
                if (p.username) {
                    w.utf8(*p.username);
                }
                if (p.password) {
                    w.binary(*p.password);
                }
                return w.finish(PacketType::Connect, 0);
            } else if constexpr (std::is_same_v<T, Connack>) {
                w.u8(p.session_present ? 1 : 0);
                w.u8(static_cast<std::uint8_t>(p.return_code));
                return w.finish(PacketType::Connack, 0);
            } else if constexpr (std::is_same_v<T, Publish>) {
                if (!valid_topic_name(p.topic)) {
                    throw EncodeError("invalid PUBLISH topic '" + p.topic + "'");
                }
                if (p.payload.size() > max_payload) {
                    throw EncodeError("payload of " + std::to_string(p.payload.size()) + " bytes exceeds limit");
                }
                w.utf8(p.topic);
                w.raw(p.payload);
                return w.finish(PacketType::Publish, p.retain ? 0x01 : 0x00);
            } else if constexpr (std::is_same_v<T, Subscribe>) {
                if (p.packet_id == 0 || p.topics.empty()) {
                    throw EncodeError("SUBSCRIBE needs a packet id and at least one filter");
                }
                w.u16(p.packet_id);
                for (const auto& t : p.topics) {
                    if (!valid_topic_filter(t.filter) || t.qos > 2) {
                        throw EncodeError("invalid topic filter '" + t.filter + "'");
                    }
                    w.utf8(t.filter);
                    w.u8(t.qos);
                }
                return w.finish(PacketType::Subscribe, 0x02);
            } else if constexpr (std::is_same_v<T, Suback>) {
                w.u16(p.packet_id);
                for (auto code : p.return_codes) {
                    if (code > 2 && code != kSubackFailure) {
                        throw EncodeError("invalid SUBACK return code");
                    }
                    w.u8(code);
                }
                return w.finish(PacketType::Suback, 0);
            } else if constexpr (std::is_same_v<T, Pingreq>) {
                return w.finish(PacketType::Pingreq, 0);
            } else if constexpr (std::is_same_v<T, Pingresp>) {
                return w.finish(PacketType::Pingresp, 0);
            } else {
                return w.finish(PacketType::Disconnect, 0);
            }
        },
        packet);
}

DecodeResult decode_packet(std::span<const std::uint8_t> data, std::size_t max_remaining_length) {
    if (data.empty()) {
        return {};
    }
    const std::uint8_t type = data[0] >> 4;
    const std::uint8_t flags = data[0] & 0x0F;

    std::size_t remaining = 0;
    std::size_t multiplier = 1;
    std::size_t pos = 1;
    while (true) {
        if (pos > 4) {
            return fail("remaining length longer than 4 bytes");
        }
        if (pos >= data.size()) {
            if (!known_type(type)) {
                break;
            }
            return {};
        }
        const std::uint8_t byte = data[pos++];
        remaining += static_cast<std::size_t>(byte & 0x7F) * multiplier;
        multiplier *= 128;
        if (!(byte & 0x80)) {
            // A trailing zero byte means the value had a shorter encoding.
            if (byte == 0 && pos > 2) {
                return fail("non-minimal remaining length");
            }
            break;
        }
    }
    if (!known_type(type)) {
        return fail("unknown or unsupported packet type " + std::to_string(type));
    }
    if (remaining > max_remaining_length) {
        return fail("packet of " + std::to_string(remaining) + " bytes exceeds limit");
    }
    if (data.size() - pos < remaining) {
        return {};
    }

    Reader reader(data.subspan(pos, remaining));
    std::string error;
    auto packet = parse_body(static_cast<PacketType>(type), flags, reader, error);
    if (!packet) {
        return fail(error.empty() ? "malformed packet" : error);
    }
    if (!reader.done()) {
        return fail("trailing bytes in " + std::string(to_string(static_cast<PacketType>(type))));
    }
    DecodeResult r;
    r.status = DecodeResult::Status::Ok;
    r.packet = std::move(packet);
    r.consumed = pos + remaining;
    return r;
}

} // namespace piheart::mqtt
