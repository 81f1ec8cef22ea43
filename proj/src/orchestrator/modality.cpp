#include "piheart/orchestrator/modality.hpp"

namespace piheart {

std::string_view to_string(Modality m) {
    switch (m) {
    case Modality::WithoutHeart:
        return "WithoutHeart";
    case Modality::WithOwnHeart:
        return "WithOwnHeart";
    case Modality::WithNeighborHeart:
        return "WithNeighborHeart";
    }
    return "?";
}

std::string_view to_string(Participant p) { return p == Participant::A ? "A" : "B"; }

std::optional<Modality> parse_modality(std::string_view text) {
    for (auto m : {Modality::WithoutHeart, Modality::WithOwnHeart, Modality::WithNeighborHeart}) {
        if (text == to_string(m)) {
            return m;
        }
    }
    return std::nullopt;
}

namespace {
Participant other(Participant p) { return p == Participant::A ? Participant::B : Participant::A; }
} // namespace

std::vector<Participant> RoutingRule::targets(Participant source) const {
    switch (modality_) {
    case Modality::WithoutHeart:
        return {};
    case Modality::WithOwnHeart:
        return {source};
    case Modality::WithNeighborHeart:
        return {other(source)};
    }
    return {};
}

std::optional<Participant> RoutingRule::source_for(Participant target) const {
    switch (modality_) {
    case Modality::WithoutHeart:
        return std::nullopt;
    case Modality::WithOwnHeart:
        return target;
    case Modality::WithNeighborHeart:
        return other(target);
    }
    return std::nullopt;
}

} // namespace piheart
