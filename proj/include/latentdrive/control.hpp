#pragma once

#include <array>
#include <string>
#include <string_view>

namespace ld {

/// Steering is a curvature command (1/m); acceleration is zero in fixed-speed mode.
struct Control {
    double steering = 0.0;
    double acceleration = 0.0;

    bool operator==(const Control&) const = default;
};

enum class Maneuver { lane_stable = 0, avoidance = 1, recovery = 2 };

inline constexpr int kManeuverCount = 3;
inline constexpr std::array<Maneuver, kManeuverCount> kManeuvers{Maneuver::lane_stable, Maneuver::avoidance,
                                                                  Maneuver::recovery};

std::string to_string(Maneuver m);
Maneuver parse_maneuver(std::string_view name);

} // namespace ld
