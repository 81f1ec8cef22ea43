#pragma once

#include <string_view>

namespace piheart::mqtt {

/// Topic names are what PUBLISH carries: non-empty, no wildcards.
bool valid_topic_name(std::string_view topic);

/// Filters may use `+` as a whole level and `#` as the whole last level.
bool valid_topic_filter(std::string_view filter);

/// MQTT 3.1.1 matching. Filters starting with a wildcard do not match
/// topics that start with `$`.
bool topic_matches(std::string_view filter, std::string_view topic);

} // namespace piheart::mqtt
