#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridfarm/core/money.hpp"
#include "gridfarm/core/time.hpp"

namespace gridfarm::economy {

/// One daily price band. Times are seconds after midnight; a band whose end
/// is earlier than its start wraps past midnight (20:00-08:00).
struct CostSegment {
    double start = 0.0;
    double end = kSecondsPerDay;
    Money rate;  // per cpu-hour
    friend bool operator==(const CostSegment&, const CostSegment&) = default;
};

class InvalidSchedule : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Owner-set, time-of-day dependent price with per-user multipliers.
/// Segments always partition the day; construction enforces it.
class CostSchedule {
public:
    CostSchedule() : CostSchedule({CostSegment{0.0, kSecondsPerDay, Money::from_cents(100)}}) {}
    explicit CostSchedule(std::vector<CostSegment> segments, std::map<std::string, double> user_multipliers = {});

    static CostSchedule flat(Money rate) { return CostSchedule({CostSegment{0.0, kSecondsPerDay, rate}}); }
    static CostSchedule day_night(Money day_rate, Money night_rate, double day_start = 8 * 3600.0,
                                  double day_end = 20 * 3600.0);

    const std::vector<CostSegment>& segments() const { return segments_; }
    const std::map<std::string, double>& user_multipliers() const { return multipliers_; }
    double multiplier(const std::string& user_id) const;

    /// Base rate of the band containing `time_of_day` (right-open bands).
    Money base_rate(double time_of_day) const;
    /// Sorted segment start times; the instants at which the price can change.
    std::vector<double> boundaries() const;

    friend bool operator==(const CostSchedule&, const CostSchedule&) = default;

private:
    std::vector<CostSegment> segments_;
    std::map<std::string, double> multipliers_;
};

/// Price per cpu-hour for `user_id` at `time_of_day`.
Money cost_at(const CostSchedule& schedule, const std::string& user_id, double time_of_day);

/// Maps simulation time to time of day given the clock origin.
double time_of_day(SimTime t, double origin_time_of_day);

/// Next instant strictly after `t` at which any of the schedules changes band.
SimTime next_boundary(const std::vector<double>& boundaries, SimTime t, double origin_time_of_day);

/// Money for `cpu_hours` while the rate follows the schedule across
/// [start, start + wall): cpu time is spread evenly over the wall span.
Money integrated_cost(const CostSchedule& schedule, const std::string& user_id, double cpu_hours, SimTime start,
                      Seconds wall, double origin_time_of_day);

}  // namespace gridfarm::economy
