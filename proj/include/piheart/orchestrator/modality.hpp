#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace piheart {

enum class Modality { WithoutHeart, WithOwnHeart, WithNeighborHeart };

/// The two participants of a session.
enum class Participant { A, B };

std::string_view to_string(Modality m);
std::string_view to_string(Participant p);

/// Exact names only ("WithoutHeart", ...); anything else is nullopt.
std::optional<Modality> parse_modality(std::string_view text);

/// Which participants receive the heart rate published by `source`.
class RoutingRule {
public:
    explicit RoutingRule(Modality m = Modality::WithoutHeart) : modality_(m) {}

    Modality modality() const noexcept { return modality_; }
    std::vector<Participant> targets(Participant source) const;
    /// The single source feeding `target`, if any.
    std::optional<Participant> source_for(Participant target) const;

private:
    Modality modality_;
};

} // namespace piheart
