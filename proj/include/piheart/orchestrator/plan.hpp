#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "piheart/orchestrator/modality.hpp"

namespace piheart {

/// Movies in the order every pair watches them.
inline constexpr std::array<std::string_view, 3> kMovieOrder{"big bunny", "overwatch", "for the birds"};

struct PlanSegment {
    std::string movie;
    Modality modality = Modality::WithoutHeart;
    double duration_s = 60.0;

    bool operator==(const PlanSegment&) const = default;
};

struct SessionPlan {
    std::string pair_id;
    std::vector<PlanSegment> segments;

    /// Throws ConfigError: empty segments, empty title or non-positive duration.
    void validate() const;
    bool operator==(const SessionPlan&) const = default;
};

/// The six orderings of the three modalities, in lexicographic order.
std::array<std::array<Modality, 3>, 6> modality_permutations();

/// Plans for `n_pairs` pairs: permutations assigned round-robin starting at
/// `seed % 6`, fixed movie order, `segment_s` per segment. Throws ConfigError for n_pairs < 1.
std::vector<SessionPlan> generate_condition_orders(int n_pairs, std::uint64_t seed = 0, double segment_s = 60.0);

nlohmann::ordered_json plan_to_json(const SessionPlan& plan);
/// Throws ConfigError naming the offending field.
SessionPlan plan_from_json(const nlohmann::json& j);
SessionPlan load_plan(const std::filesystem::path& path);

} // namespace piheart
