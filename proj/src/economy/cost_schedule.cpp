#include "gridfarm/economy/cost_schedule.hpp"

#include <algorithm>
#include <cmath>

namespace gridfarm::economy {

CostSchedule::CostSchedule(std::vector<CostSegment> segments, std::map<std::string, double> user_multipliers)
    : segments_(std::move(segments)), multipliers_(std::move(user_multipliers)) {
    if (segments_.empty()) throw InvalidSchedule("cost schedule has no segments");
    struct Piece {
        double lo, hi;
    };
    std::vector<Piece> pieces;
    for (const auto& s : segments_) {
        if (s.start < 0 || s.start >= kSecondsPerDay || s.end < 0 || s.end > kSecondsPerDay) {
            throw InvalidSchedule("cost segment outside the day");
        }
        if (s.rate <= Money{}) throw InvalidSchedule("cost segment rate must be positive");
        if (s.end > s.start) {
            pieces.push_back({s.start, s.end});
        } else if (s.end < s.start) {
            pieces.push_back({s.start, kSecondsPerDay});
            if (s.end > 0) pieces.push_back({0.0, s.end});
        } else {
            throw InvalidSchedule("cost segment has zero length");
        }
    }
    std::sort(pieces.begin(), pieces.end(), [](const Piece& a, const Piece& b) { return a.lo < b.lo; });
    double cursor = 0.0;
    for (const auto& p : pieces) {
        if (p.lo < cursor) throw InvalidSchedule("cost segments overlap at " + format_time_of_day(p.lo));
        if (p.lo > cursor) throw InvalidSchedule("cost segments leave a gap at " + format_time_of_day(cursor));
        cursor = p.hi;
    }
    if (cursor != kSecondsPerDay) throw InvalidSchedule("cost segments leave a gap at " + format_time_of_day(cursor));
    for (const auto& [user, factor] : multipliers_) {
        if (!(factor > 0)) throw InvalidSchedule("user multiplier for '" + user + "' must be positive");
    }
}

CostSchedule CostSchedule::day_night(Money day_rate, Money night_rate, double day_start, double day_end) {
    return CostSchedule({CostSegment{day_start, day_end, day_rate}, CostSegment{day_end, day_start, night_rate}});
}

double CostSchedule::multiplier(const std::string& user_id) const {
    auto it = multipliers_.find(user_id);
    return it == multipliers_.end() ? 1.0 : it->second;
}

Money CostSchedule::base_rate(double tod) const {
    for (const auto& s : segments_) {
        bool inside = s.end > s.start ? (tod >= s.start && tod < s.end) : (tod >= s.start || tod < s.end);
        if (inside) return s.rate;
    }
    return segments_.front().rate;  // unreachable for a valid partition
}

std::vector<double> CostSchedule::boundaries() const {
    std::vector<double> out;
    for (const auto& s : segments_) out.push_back(s.start);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Money cost_at(const CostSchedule& schedule, const std::string& user_id, double tod) {
    Money base = schedule.base_rate(tod);
    double factor = schedule.multiplier(user_id);
    return factor == 1.0 ? base : base.scaled(factor);
}

double time_of_day(SimTime t, double origin) {
    double v = std::fmod(origin + t.count(), kSecondsPerDay);
    return v < 0 ? v + kSecondsPerDay : v;
}

SimTime next_boundary(const std::vector<double>& boundaries, SimTime t, double origin) {
    if (boundaries.empty()) return SimTime(INFINITY);
    double abs = origin + t.count();
    double day = std::floor(abs / kSecondsPerDay) * kSecondsPerDay;
    for (int d = 0; d < 2; ++d) {
        for (double b : boundaries) {
            double candidate = day + d * kSecondsPerDay + b;
            if (candidate > abs + 1e-9) return SimTime(candidate - origin);
        }
    }
    return SimTime(INFINITY);
}

Money integrated_cost(const CostSchedule& schedule, const std::string& user_id, double cpu_hours, SimTime start,
                      Seconds wall, double origin) {
    if (wall.count() <= 0) return cost_of(cpu_hours, cost_at(schedule, user_id, time_of_day(start, origin)));
    auto bounds = schedule.boundaries();
    double cpu_per_second = cpu_hours / wall.count();
    double total_cents = 0.0;
    SimTime t = start;
    SimTime end = start + wall;
    while (t < end) {
        SimTime nb = std::min(next_boundary(bounds, t, origin), end);
        double rate = static_cast<double>(cost_at(schedule, user_id, time_of_day(t, origin)).cents());
        total_cents += (nb - t).count() * cpu_per_second * rate;
        t = nb;
    }
    return Money::from_cents(std::llround(total_cents));
}

}  // namespace gridfarm::economy
