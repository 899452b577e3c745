#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gridfarm/core/money.hpp"
#include "gridfarm/core/time.hpp"
#include "gridfarm/scheduler/select.hpp"

namespace gridfarm::economy {

struct QuotedResource {
    std::string resource_id;
    Money rate_used;            // per job, as priced by the selection
    double rate_estimate = 0.0; // jobs per hour
    friend bool operator==(const QuotedResource&, const QuotedResource&) = default;
};

/// Pre-run answer to "can it be done by the deadline, and for how much".
struct Quote {
    bool feasible = false;
    Money projected_cost;
    Seconds projected_finish{0.0};
    std::vector<QuotedResource> assumed_resources;
    std::string reason;  // empty when feasible
    friend bool operator==(const Quote&, const Quote&) = default;
};

/// Runs the scheduler's selection against the offered resources and reports
/// feasibility without committing anything.
Quote quote(std::uint64_t jobs, Seconds deadline, Money budget, std::span<const scheduler::Candidate> resources,
            const scheduler::SelectParams& params = {});

}  // namespace gridfarm::economy
