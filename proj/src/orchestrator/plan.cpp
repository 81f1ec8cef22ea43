#include "piheart/orchestrator/plan.hpp"

#include <algorithm>
#include <fstream>

#include "piheart/errors.hpp"

namespace piheart {

void SessionPlan::validate() const {
    if (segments.empty()) {
        throw ConfigError("plan has no segments");
    }
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (segments[i].movie.empty()) {
            throw ConfigError("segment " + std::to_string(i) + " has an empty movie title");
        }
        if (!(segments[i].duration_s > 0.0)) {
            throw ConfigError("segment " + std::to_string(i) + " needs a positive duration");
        }
    }
}

std::array<std::array<Modality, 3>, 6> modality_permutations() {
    std::array<Modality, 3> p{Modality::WithoutHeart, Modality::WithOwnHeart, Modality::WithNeighborHeart};
    std::array<std::array<Modality, 3>, 6> out{};
    std::size_t i = 0;
    do {
        out[i++] = p;
    } while (std::next_permutation(p.begin(), p.end()));
    return out;
}

std::vector<SessionPlan> generate_condition_orders(int n_pairs, std::uint64_t seed, double segment_s) {
    if (n_pairs < 1) {
        throw ConfigError("need at least one pair");
    }
    const auto perms = modality_permutations();
    std::vector<SessionPlan> plans;
    plans.reserve(static_cast<std::size_t>(n_pairs));
    for (int i = 0; i < n_pairs; ++i) {
        const auto& order = perms[(static_cast<std::size_t>(i) + seed % 6) % 6];
        SessionPlan plan;
        plan.pair_id = "pair" + std::to_string(i + 1);
        for (std::size_t k = 0; k < 3; ++k) {
            plan.segments.push_back({std::string(kMovieOrder[k]), order[k], segment_s});
        }
        plans.push_back(std::move(plan));
    }
    return plans;
}

nlohmann::ordered_json plan_to_json(const SessionPlan& plan) {
    nlohmann::ordered_json j;
    j["pair_id"] = plan.pair_id;
    j["segments"] = nlohmann::ordered_json::array();
    for (const auto& s : plan.segments) {
        j["segments"].push_back({{"movie", s.movie}, {"modality", to_string(s.modality)}, {"duration_s", s.duration_s}});
    }
    return j;
}

SessionPlan plan_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("segments") || !j["segments"].is_array()) {
        throw ConfigError("plan needs a \"segments\" array");
    }
    SessionPlan plan;
    if (j.contains("pair_id")) {
        if (!j["pair_id"].is_string()) {
            throw ConfigError("\"pair_id\" must be a string");
        }
        plan.pair_id = j["pair_id"].get<std::string>();
    }
    std::size_t i = 0;
    for (const auto& s : j["segments"]) {
        const auto where = "segment " + std::to_string(i++);
        if (!s.is_object() || !s.contains("movie") || !s["movie"].is_string()) {
            throw ConfigError(where + ": \"movie\" must be a string");
        }
        if (!s.contains("modality") || !s["modality"].is_string()) {
            throw ConfigError(where + ": \"modality\" must be a string");
        }
        const auto m = parse_modality(s["modality"].get<std::string>());
        if (!m) {
            throw ConfigError(where + ": unknown modality '" + s["modality"].get<std::string>() + "'");
        }
        PlanSegment seg{s["movie"].get<std::string>(), *m, 60.0};
        if (s.contains("duration_s")) {
            if (!s["duration_s"].is_number()) {
                throw ConfigError(where + ": \"duration_s\" must be a number");
            }
            seg.duration_s = s["duration_s"].get<double>();
        }
        plan.segments.push_back(std::move(seg));
    }
    plan.validate();
    return plan;
}

SessionPlan load_plan(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open plan " + path.string(), 0);
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("plan " + path.string() + " is not valid JSON: " + e.what());
    }
    return plan_from_json(j);
}

} // namespace piheart
