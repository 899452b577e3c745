#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "gridfarm/core/money.hpp"
#include "gridfarm/core/time.hpp"
#include "gridfarm/economy/cost_schedule.hpp"

namespace gridfarm::economy {

/// A resource owner's sealed offer.
struct Bid {
    std::string resource_id;
    Money rate;  // per cpu-hour
    int capacity = 1;
    SimTime valid_from{0.0};
    SimTime valid_until{0.0};
    friend bool operator==(const Bid&, const Bid&) = default;
};

struct TenderRequest {
    int slots = 1;
    Seconds window{3600.0};
};

struct AcceptedBid {
    Bid bid;
    int slots = 0;
    friend bool operator==(const AcceptedBid&, const AcceptedBid&) = default;
};

struct TenderResult {
    std::vector<AcceptedBid> accepted;
    bool partial = false;  // offered capacity fell short of the request
    int slots_covered() const;
    /// Sum of rate x slots over accepted bids.
    Money rate_weighted_cost() const;
};

class NoCapacityOffered : public std::runtime_error {
public:
    NoCapacityOffered() : std::runtime_error("no capacity offered") {}
};

/// Owner bidding strategy: the current schedule price times a markup.
Bid make_bid(const std::string& resource_id, const CostSchedule& schedule, const std::string& user_id, SimTime now,
             double origin_time_of_day, double markup, int capacity, Seconds window);

/// Single-round sealed-bid tender: cheapest offers first (ties by resource
/// id) until the requested slots are covered.
TenderResult run_tender(const TenderRequest& request, std::vector<Bid> bids);

}  // namespace gridfarm::economy
