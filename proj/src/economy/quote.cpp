#include "gridfarm/economy/quote.hpp"

namespace gridfarm::economy {

Quote quote(std::uint64_t jobs, Seconds deadline, Money budget, std::span<const scheduler::Candidate> resources,
            const scheduler::SelectParams& params) {
    Quote q;
    if (resources.empty()) {
        q.reason = "no authorized resources available";
        return q;
    }
    auto d = scheduler::select_resources(jobs, deadline, resources, budget, params);
    q.projected_cost = d.projected_cost;
    q.projected_finish = d.projected_finish;
    for (const auto& s : d.selected) q.assumed_resources.push_back({s.id, s.per_job_cost, s.jobs_per_hour});
    q.feasible = d.feasible_deadline && d.feasible_budget;
    if (!d.feasible_deadline) {
        q.reason = "deadline cannot be met: available throughput is too low";
    } else if (!d.feasible_budget) {
        q.reason = "budget too small: cheapest deadline-feasible cost is " + d.projected_cost.to_string();
    }
    return q;
}

}  // namespace gridfarm::economy
