#include "piheart/mqtt/topic.hpp"

#include <algorithm>

#include "piheart/mqtt/packet.hpp"

namespace piheart::mqtt {

namespace {

// Splits on '/' keeping empty levels; calls fn(level, is_last).
template <typename Fn>
void for_each_level(std::string_view s, Fn&& fn) {
    std::size_t start = 0;
    while (true) {
        const auto slash = s.find('/', start);
        if (slash == std::string_view::npos) {
            fn(s.substr(start), true);
            return;
        }
        fn(s.substr(start, slash - start), false);
        start = slash + 1;
    }
}

} // namespace

bool valid_topic_name(std::string_view topic) {
    if (topic.empty() || topic.size() > 65535 || !valid_mqtt_utf8(topic)) {
        return false;
    }
    return topic.find_first_of("+#") == std::string_view::npos;
}

bool valid_topic_filter(std::string_view filter) {
    if (filter.empty() || filter.size() > 65535 || !valid_mqtt_utf8(filter)) {
        return false;
    }
    bool ok = true;
    for_each_level(filter, [&](std::string_view level, bool last) {
        if (level.find('#') != std::string_view::npos && (level != "#" || !last)) {
            ok = false;
        }
        if (level.find('+') != std::string_view::npos && level != "+") {
            ok = false;
        }
    });
    return ok;
}

bool topic_matches(std::string_view filter, std::string_view topic) {
    if (!topic.empty() && topic.front() == '$' && !filter.empty() && (filter.front() == '+' || filter.front() == '#')) {
        return false;
    }
    std::size_t f = 0;
    std::size_t t = 0;
    while (true) {
        const auto f_end = std::min(filter.find('/', f), filter.size());
        const auto level = filter.substr(f, f_end - f);
        if (level == "#") {
            // Matches this level and everything below it.
            return true;
        }
        const auto t_end = std::min(topic.find('/', t), topic.size());
        if (level != "+" && level != topic.substr(t, t_end - t)) {
            return false;
        }
        const bool filter_done = f_end == filter.size();
        const bool topic_done = t_end == topic.size();
        if (filter_done || topic_done) {
            if (filter_done && topic_done) {
                return true;
            }
            if (topic_done && !filter_done) {
                // e.g. filter "a/#" vs topic "a": next filter level must be "#".
                return filter.substr(f_end + 1) == "#";
            }
            return false;
        }
        f = f_end + 1;
        t = t_end + 1;
    }
}

} // namespace piheart::mqtt
