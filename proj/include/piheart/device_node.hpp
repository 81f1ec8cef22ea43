#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <variant>

#include "piheart/beat_scheduler.hpp"
#include "piheart/bvp.hpp"
#include "piheart/clock.hpp"
#include "piheart/hr_estimator.hpp"
#include "piheart/net.hpp"

namespace piheart {

/// Topic names used between nodes and the orchestrator.
namespace topics {
std::string hr(std::string_view device_id);
std::string bvp(std::string_view device_id);
std::string beat_rate(std::string_view device_id);
std::string beat_event(std::string_view device_id);
std::string status(std::string_view device_id);
} // namespace topics

/// Either a synthetic generator config or a recorded CSV to replay.
using BvpSource = std::variant<BvpConfig, std::filesystem::path>;

/// Parses the CLI form: `synth:hr=72[,noise=0.02,seed=1,artifacts=2]` or `replay:<path>`.
BvpSource parse_bvp_source(std::string_view text);

struct DeviceConfig {
    std::string device_id;
    net::Endpoint broker;
    BvpSource bvp_source = BvpConfig{};
    EstimatorMode mode = EstimatorMode::Magnitude;
    EstimatorConfig estimator;
    BeatSchedulerConfig scheduler;
    SimClock clock;
    std::uint16_t keep_alive_s = 10;
    /// Samples per `bvp` batch message.
    std::size_t bvp_batch = 100;

    void validate() const;
};

struct NodeStatus {
    std::int64_t uptime_ms = 0;
    std::optional<HrEstimate> last_estimate;
    std::uint64_t samples = 0;
    std::uint64_t hr_published = 0;
    std::uint64_t bvp_batches = 0;
    std::uint64_t stream_drops = 0;
    std::uint64_t beats_executed = 0;
    std::uint64_t beats_dropped = 0;
    std::optional<double> beat_bpm;
    bool source_exhausted = false;
    std::optional<std::string> session_error;
};

/// A simulated heart display: sampler, estimator and actuator threads
/// around one MQTT connection to the node's broker.
///
/// Construction connects and starts all three tasks; it throws
/// ConfigError, mqtt::ConnectError or InputError (unreadable replay file).
/// Losing the broker stops the node and records the session error.
class DeviceNode {
public:
    explicit DeviceNode(DeviceConfig config);
    ~DeviceNode();
    DeviceNode(const DeviceNode&) = delete;
    DeviceNode& operator=(const DeviceNode&) = delete;

    NodeStatus status() const;
    const DeviceConfig& config() const;

    /// Stops sampler, then estimator, then actuator, and disconnects.
    void stop();

    /// Blocks until the node stopped on its own (session loss) or stop() ran.
    void wait();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace piheart
