#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace piheart::mqtt {

using Bytes = std::vector<std::uint8_t>;

enum class PacketType : std::uint8_t {
    Connect = 1,
    Connack = 2,
    Publish = 3,
    Subscribe = 8,
    Suback = 9,
    Pingreq = 12,
    Pingresp = 13,
    Disconnect = 14,
};

std::string_view to_string(PacketType type);

struct Will {
    std::string topic;
    std::string payload;
    std::uint8_t qos = 0;
    bool retain = false;

    bool operator==(const Will&) const = default;
};

struct Connect {
    std::string client_id;
    std::uint16_t keep_alive_s = 0;
    bool clean_session = true;
    std::optional<Will> will;
    std::optional<std::string> username;
    std::optional<std::string> password;

    bool operator==(const Connect&) const = default;
};

enum class ConnectReturnCode : std::uint8_t {
    Accepted = 0,
    UnacceptableProtocol = 1,
    IdentifierRejected = 2,
    ServerUnavailable = 3,
    BadCredentials = 4,
    NotAuthorized = 5,
};

struct Connack {
    bool session_present = false;
    ConnectReturnCode return_code = ConnectReturnCode::Accepted;

    bool operator==(const Connack&) const = default;
};

/// QoS 0 only, so there is no packet identifier and DUP is always clear.
struct Publish {
    std::string topic;
    std::string payload;
    bool retain = false;

    bool operator==(const Publish&) const = default;
};

struct SubscribeTopic {
    std::string filter;
    std::uint8_t qos = 0;

    bool operator==(const SubscribeTopic&) const = default;
};

struct Subscribe {
    std::uint16_t packet_id = 1;
    std::vector<SubscribeTopic> topics;

    bool operator==(const Subscribe&) const = default;
};

inline constexpr std::uint8_t kSubackFailure = 0x80;

struct Suback {
    std::uint16_t packet_id = 1;
    std::vector<std::uint8_t> return_codes;

    bool operator==(const Suback&) const = default;
};

struct Pingreq {
    bool operator==(const Pingreq&) const = default;
};
struct Pingresp {
    bool operator==(const Pingresp&) const = default;
};
struct Disconnect {
    bool operator==(const Disconnect&) const = default;
};

using Packet = std::variant<Connect, Connack, Publish, Subscribe, Suback, Pingreq, Pingresp, Disconnect>;

PacketType packet_type(const Packet& packet);

inline constexpr std::size_t kDefaultMaxPayload = 256 * 1024;

class EncodeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Serialises a packet. Throws EncodeError for invalid topics/filters,
/// over-long strings, or payloads above `max_payload`.
Bytes encode_packet(const Packet& packet, std::size_t max_payload = kDefaultMaxPayload);

/// Appends the variable-length "remaining length" encoding of `value`.
void encode_remaining_length(Bytes& out, std::size_t value);

struct DecodeResult {
    enum class Status { Ok, NeedMoreData, ProtocolError };

    Status status = Status::NeedMoreData;
    std::optional<Packet> packet;
    std::size_t consumed = 0;
    std::string error;

    bool ok() const noexcept { return status == Status::Ok; }
    bool need_more() const noexcept { return status == Status::NeedMoreData; }
    bool protocol_error() const noexcept { return status == Status::ProtocolError; }
};

/// Largest remaining length accepted by default: max payload plus a
/// maximal topic and its framing.
inline constexpr std::size_t kDefaultMaxRemainingLength = kDefaultMaxPayload + 2 + 65535 + 16;

/// Decodes one packet from the front of `data`. Total over arbitrary input:
/// it never throws and never reads out of bounds.
DecodeResult decode_packet(std::span<const std::uint8_t> data,
                           std::size_t max_remaining_length = kDefaultMaxRemainingLength);

/// True when `text` is well-formed UTF-8 without U+0000.
bool valid_mqtt_utf8(std::string_view text);

} // namespace piheart::mqtt
