#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace gridfarm {

/// Simulation time. A SimTime is the offset from the simulation origin.
using Seconds = std::chrono::duration<double>;
using Hours = std::chrono::duration<double, std::ratio<3600>>;
using SimTime = Seconds;

inline constexpr double kSecondsPerDay = 86400.0;

constexpr double to_hours(Seconds s) { return s.count() / 3600.0; }
constexpr Seconds from_hours(double h) { return Seconds(h * 3600.0); }

/// Accepts ISO-8601 durations ("PT10H", "P1DT2H30M", "PT90.5S") and the
/// shorthand used on the command line ("10h", "90m", "1h30m", "45s", "2d").
/// A bare number is read as hours. Throws std::invalid_argument.
Seconds parse_duration(std::string_view text);

/// ISO-8601 form, e.g. "PT10H", "PT1H30M", "PT0.25S". Whole days stay as hours.
std::string format_duration(Seconds d);

/// "HH:MM" or "HH:MM:SS" to seconds after midnight. "24:00" is allowed.
double parse_time_of_day(std::string_view text);
std::string format_time_of_day(double seconds_after_midnight);

}  // namespace gridfarm
