#include "gridfarm/economy/tender.hpp"

#include <algorithm>

namespace gridfarm::economy {

int TenderResult::slots_covered() const {
    int n = 0;
    for (const auto& a : accepted) n += a.slots;
    return n;
}

Money TenderResult::rate_weighted_cost() const {
    Money m;
    for (const auto& a : accepted) m += a.bid.rate * a.slots;
    return m;
}

Bid make_bid(const std::string& resource_id, const CostSchedule& schedule, const std::string& user_id, SimTime now,
             double origin, double markup, int capacity, Seconds window) {
    Money rate = cost_at(schedule, user_id, time_of_day(now, origin)).scaled(markup);
    if (rate <= Money{}) rate = Money::from_cents(1);
    return Bid{resource_id, rate, std::max(1, capacity), now, now + window};
}

TenderResult run_tender(const TenderRequest& request, std::vector<Bid> bids) {
    if (bids.empty()) throw NoCapacityOffered();
    std::stable_sort(bids.begin(), bids.end(), [](const Bid& a, const Bid& b) {
        if (a.rate != b.rate) return a.rate < b.rate;
        return a.resource_id < b.resource_id;
    });
    TenderResult result;
    int needed = request.slots;
    for (const auto& b : bids) {
        if (needed <= 0) break;
        int take = std::min(needed, b.capacity);
        result.accepted.push_back({b, take});
        needed -= take;
    }
    result.partial = needed > 0;
    return result;
}

}  // namespace gridfarm::economy
