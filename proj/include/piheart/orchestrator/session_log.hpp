#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace piheart {

/// The log file already exists; sessions never overwrite a recording.
class LogExistsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Destination for JSONL lines. write_line throws on failure.
class LogSink {
public:
    virtual ~LogSink() = default;
    virtual void write_line(std::string_view line) = 0;
    virtual void flush() {}
};

/// Append-only file created exclusively; throws LogExistsError if present.
class FileLogSink : public LogSink {
public:
    explicit FileLogSink(const std::filesystem::path& path);
    ~FileLogSink() override;
    void write_line(std::string_view line) override;
    void flush() override;
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
    int fd_ = -1;
};

/// Dedicated writer thread in front of a LogSink.
///
/// The first write failure flips the recorder to degraded and calls
/// `on_degraded` once; later lines are counted as lost. Callers are never blocked
/// by the sink.
class Recorder {
public:
    Recorder(std::unique_ptr<LogSink> sink, std::function<void(const std::string&)> on_degraded = {});
    ~Recorder();
    Recorder(const Recorder&) = delete;
    Recorder& operator=(const Recorder&) = delete;

    void append(std::string line);

    /// Blocks until every line appended so far reached the sink, then runs
    /// `fn` while the writer is held off.
    void with_drained(const std::function<void()>& fn);

    bool degraded() const;
    std::uint64_t written() const;
    std::uint64_t lost() const;

    /// Drains the queue and stops the writer.
    void close();

private:
    void run();

    std::unique_ptr<LogSink> sink_;
    std::function<void(const std::string&)> on_degraded_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable drained_cv_;
    std::deque<std::string> queue_;
    bool closing_ = false;
    bool busy_ = false;
    bool degraded_ = false;
    std::uint64_t written_ = 0;
    std::uint64_t lost_ = 0;
    std::mutex sink_mutex_;
    std::thread writer_;
};

struct LogValidation {
    bool ok = true;
    std::size_t records = 0;
    /// 1-based line of the first problem.
    std::size_t bad_line = 0;
    std::string error;
};

/// Checks JSON per line, known kinds, required fields and nondecreasing `ts`.
LogValidation validate_log(const std::filesystem::path& path);

struct BpmPoint {
    std::int64_t ts = 0;
    std::int64_t t_ms = 0;
    double bpm = 0.0;
    bool operator==(const BpmPoint&) const = default;
};

/// Per-participant ("A"/"B") heart-rate series rebuilt from the hr records.
/// Throws InputError on unreadable lines.
std::map<std::string, std::vector<BpmPoint>> replay_log(const std::filesystem::path& path);

} // namespace piheart
