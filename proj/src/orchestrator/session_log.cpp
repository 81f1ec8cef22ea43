#include "piheart/orchestrator/session_log.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <set>
#include <system_error>

#include "json.hpp"
#include "piheart/errors.hpp"

namespace piheart {

FileLogSink::FileLogSink(const std::filesystem::path& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) {
        if (errno == EEXIST) {
            throw LogExistsError("log " + path.string() + " already exists; refusing to overwrite");
        }
        throw std::system_error(errno, std::generic_category(), "cannot create log " + path.string());
    }
}

FileLogSink::~FileLogSink() {
    if (fd_ >= 0) {
        ::close(fd_);
    }
}

void FileLogSink::write_line(std::string_view line) {
    std::string buf(line);
    buf.push_back('\n');
    std::size_t off = 0;
    while (off < buf.size()) {
        const auto n = ::write(fd_, buf.data() + off, buf.size() - off);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw std::system_error(errno, std::generic_category(), "writing " + path_.string());
        }
        off += static_cast<std::size_t>(n);
    }
}

void FileLogSink::flush() {
    if (::fdatasync(fd_) != 0 && errno != EINVAL) {
        throw std::system_error(errno, std::generic_category(), "syncing " + path_.string());
    }
}

Recorder::Recorder(std::unique_ptr<LogSink> sink, std::function<void(const std::string&)> on_degraded)
    : sink_(std::move(sink)), on_degraded_(std::move(on_degraded)) {
    writer_ = std::thread([this] { run(); });
}

Recorder::~Recorder() { close(); }

void Recorder::append(std::string line) {
    {
        std::lock_guard lock(mutex_);
        if (closing_) {
            ++lost_;
            return;
        }
        queue_.push_back(std::move(line));
    }
    cv_.notify_one();
}

void Recorder::run() {
    std::unique_lock lock(mutex_);
    for (;;) {
        cv_.wait(lock, [&] { return closing_ || !queue_.empty(); });
        if (queue_.empty()) {
            break;
        }
        auto batch = std::move(queue_);
        queue_.clear();
        busy_ = true;
        const bool was_degraded = degraded_;
        lock.unlock();

        std::uint64_t ok = 0;
        std::uint64_t failed = 0;
        std::string failure;
        {
            std::lock_guard sink_lock(sink_mutex_);
            for (auto& line : batch) {
                if (!was_degraded && failure.empty()) {
                    try {
                        sink_->write_line(line);
                        ++ok;
                        continue;
                    } catch (const std::exception& e) {
                        failure = e.what();
                    }
                }
                ++failed;
            }
        }

        lock.lock();
        busy_ = false;
        written_ += ok;
        lost_ += failed;
        const bool newly_degraded = !failure.empty() && !degraded_;
        if (!failure.empty()) {
            degraded_ = true;
        }
        drained_cv_.notify_all();
        if (newly_degraded && on_degraded_) {
            lock.unlock();
            on_degraded_(failure);
            lock.lock();
        }
    }
    try {
        std::lock_guard sink_lock(sink_mutex_);
        sink_->flush();
    } catch (const std::exception&) {
        // Nothing left to report to: the session is already shutting down.
    }
}

void Recorder::with_drained(const std::function<void()>& fn) {
    std::unique_lock lock(mutex_);
    drained_cv_.wait(lock, [&] { return queue_.empty() && !busy_; });
    std::lock_guard sink_lock(sink_mutex_);
    sink_->flush();
    fn();
}

bool Recorder::degraded() const {
    std::lock_guard lock(mutex_);
    return degraded_;
}

std::uint64_t Recorder::written() const {
    std::lock_guard lock(mutex_);
    return written_;
}

std::uint64_t Recorder::lost() const {
    std::lock_guard lock(mutex_);
    return lost_;
}

void Recorder::close() {
    {
        std::lock_guard lock(mutex_);
        closing_ = true;
    }
    cv_.notify_all();
    if (writer_.joinable()) {
        writer_.join();
    }
}

namespace {

const std::set<std::string> kKinds{"hr", "bvp_batch", "modality_change", "movie_change", "beat_event"};

std::string check_record(const nlohmann::json& j) {
    if (!j.is_object()) {
        return "record is not a JSON object";
    }
    if (!j.contains("ts") || !j["ts"].is_number_integer()) {
        return "missing integer ts";
    }
    if (!j.contains("kind") || !j["kind"].is_string() || !kKinds.contains(j["kind"].get<std::string>())) {
        return "missing or unknown kind";
    }
    if (!j.contains("modality") || !j.contains("movie")) {
        return "missing modality/movie tags";
    }
    const auto kind = j["kind"].get<std::string>();
    if (kind == "hr" || kind == "bvp_batch" || kind == "beat_event") {
        if (!j.contains("device") || !j["device"].is_string()) {
            return "missing device";
        }
    }
    if ((kind == "hr" || kind == "beat_event") && !(j.contains("bpm") && j["bpm"].is_number())) {
        return "missing bpm";
    }
    if (kind == "bvp_batch" && !(j.contains("samples") && j["samples"].is_array())) {
        return "missing samples";
    }
    return {};
}

} // namespace

LogValidation validate_log(const std::filesystem::path& path) {
    LogValidation v;
    std::ifstream in(path);
    if (!in) {
        v.ok = false;
        v.error = "cannot open " + path.string();
        return v;
    }
    std::string line;
    std::size_t line_no = 0;
    std::optional<std::int64_t> last_ts;
    while (std::getline(in, line)) {
        ++line_no;
        auto fail = [&](std::string why) {
            v.ok = false;
            v.bad_line = line_no;
            v.error = std::move(why);
        };
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            fail("not valid JSON");
            return v;
        }
        if (auto why = check_record(j); !why.empty()) {
            fail(why);
            return v;
        }
        const auto ts = j["ts"].get<std::int64_t>();
        if (last_ts && ts < *last_ts) {
            fail("ts " + std::to_string(ts) + " goes back from " + std::to_string(*last_ts));
            return v;
        }
        last_ts = ts;
        ++v.records;
    }
    return v;
}

std::map<std::string, std::vector<BpmPoint>> replay_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open " + path.string());
    }
    std::map<std::string, std::vector<BpmPoint>> series;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw InputError("unreadable log record", line_no);
        }
        if (j.value("kind", "") != "hr") {
            continue;
        }
        try {
            series[j.at("device").get<std::string>()].push_back(
                {j.at("ts").get<std::int64_t>(), j.value("t_ms", std::int64_t{0}), j.at("bpm").get<double>()});
        } catch (const nlohmann::json::exception&) {
            throw InputError("hr record without device/ts/bpm", line_no);
        }
    }
    return series;
}

} // namespace piheart
