#include "gridfarm/scheduler/select.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gridfarm::scheduler {
namespace {

// Whole-job counts are floored; the slack absorbs round-off in busy/rate
// arithmetic so an exactly-fitting job is not lost.
constexpr double kCapacitySlack = 1e-7;

std::vector<const Candidate*> cost_order(std::span<const Candidate> candidates) {
    std::vector<const Candidate*> order;
    order.reserve(candidates.size());
    for (const auto& c : candidates) order.push_back(&c);
    std::stable_sort(order.begin(), order.end(), [](const Candidate* a, const Candidate* b) {
        if (a->per_job_cost != b->per_job_cost) return a->per_job_cost < b->per_job_cost;
        return a->id < b->id;
    });
    return order;
}

}  // namespace

std::vector<std::string> ScheduleDecision::selected_ids() const {
    std::vector<std::string> ids;
    for (const auto& s : selected) ids.push_back(s.id);
    return ids;
}

std::uint64_t capacity_within(const Candidate& c, Seconds t_rem) {
    double hours = to_hours(t_rem) - std::max(0.0, c.busy_hours);
    if (hours <= 0 || !(c.jobs_per_hour > 0)) return 0;
    double jobs = std::floor(hours * c.jobs_per_hour + kCapacitySlack);
    if (jobs >= 9e15) return std::numeric_limits<std::uint32_t>::max();
    return static_cast<std::uint64_t>(jobs);
}

std::optional<Money> fill_cost(std::span<const Candidate> members, std::uint64_t jobs, Seconds t_rem) {
    Money cost;
    std::uint64_t left = jobs;
    for (const Candidate* c : cost_order(members)) {
        if (left == 0) break;
        std::uint64_t take = std::min(left, capacity_within(*c, t_rem));
        cost += c->per_job_cost * static_cast<std::int64_t>(take);
        left -= take;
    }
    if (left > 0) return std::nullopt;
    return cost;
}

int quota_for(double jobs_per_hour, const SelectParams& params) {
    return std::max(1, static_cast<int>(std::lround(jobs_per_hour * params.cycle_hours * params.pipeline_factor)));
}

ScheduleDecision select_resources(std::uint64_t jobs_remaining, Seconds t_rem, std::span<const Candidate> candidates,
                                  Money budget_remaining, const SelectParams& params) {
    ScheduleDecision d;
    if (jobs_remaining == 0) return d;
    if (candidates.empty()) {
        d.feasible_deadline = false;
        d.feasible_budget = false;
        return d;
    }
    auto order = cost_order(candidates);

    // Minimal cheapest-first prefix whose capacity covers the work.
    std::size_t prefix = order.size();
    std::uint64_t covered = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        covered += capacity_within(*order[i], t_rem);
        if (covered >= jobs_remaining) {
            prefix = i + 1;
            break;
        }
    }
    d.feasible_deadline = covered >= jobs_remaining;
    std::vector<const Candidate*> members(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(prefix));

    auto fill = [&](const std::vector<const Candidate*>& set, std::vector<std::uint64_t>* allot) {
        Money cost;
        std::uint64_t left = jobs_remaining;
        for (const Candidate* c : set) {
            std::uint64_t take = std::min(left, capacity_within(*c, t_rem));
            if (allot) allot->push_back(take);
            cost += c->per_job_cost * static_cast<std::int64_t>(take);
            left -= take;
        }
        return std::pair{cost, left};
    };

    std::vector<std::uint64_t> allot;
    auto [cost, unplaced] = fill(members, &allot);
    d.feasible_budget = cost <= budget_remaining;

    // Trim the most expensive member while the rest still meets the deadline.
    while (!d.feasible_budget && d.feasible_deadline && members.size() > 1) {
        auto trial = members;
        trial.pop_back();
        std::vector<std::uint64_t> trial_allot;
        auto [trial_cost, trial_left] = fill(trial, &trial_allot);
        if (trial_left > 0) break;
        members = std::move(trial);
        allot = std::move(trial_allot);
        cost = trial_cost;
        d.feasible_budget = cost <= budget_remaining;
    }

    double finish_hours = 0.0;
    if (d.feasible_deadline) {
        for (std::size_t i = 0; i < members.size(); ++i) {
            const Candidate& c = *members[i];
            finish_hours = std::max(finish_hours, std::max(0.0, c.busy_hours) + static_cast<double>(allot[i]) / c.jobs_per_hour);
        }
    } else {
        // Every member runs flat out; the overflow spreads by throughput.
        double total_rate = 0.0, backlog = 0.0;
        for (const Candidate* c : members) {
            total_rate += c->jobs_per_hour;
            backlog += std::max(0.0, c->busy_hours) * c->jobs_per_hour;
        }
        finish_hours = total_rate > 0 ? (static_cast<double>(jobs_remaining) + backlog) / total_rate : INFINITY;
        // Cost of the overflow at the dearest member's price.
        cost += members.back()->per_job_cost * static_cast<std::int64_t>(unplaced);
        d.feasible_budget = cost <= budget_remaining;
    }
    d.projected_finish = from_hours(finish_hours);
    d.projected_cost = cost;

    for (std::size_t i = 0; i < members.size(); ++i) {
        const Candidate& c = *members[i];
        Selection s;
        s.id = c.id;
        s.quota = quota_for(c.jobs_per_hour, params);
        if (d.feasible_deadline) s.allotment = allot[i];
        s.jobs_per_hour = c.jobs_per_hour;
        s.per_job_cost = c.per_job_cost;
        d.selected.push_back(std::move(s));
    }
    return d;
}

std::vector<Assignment> assign(std::span<const std::uint64_t> waiting, std::span<const Selection> selected,
                               const std::map<std::string, int>& in_flight) {
    std::vector<Assignment> out;
    std::size_t next = 0;
    for (const auto& s : selected) {
        if (next >= waiting.size()) break;
        auto it = in_flight.find(s.id);
        int busy = it == in_flight.end() ? 0 : it->second;
        std::int64_t room = std::max(0, s.quota - busy);
        if (s.allotment) room = std::min<std::int64_t>(room, static_cast<std::int64_t>(*s.allotment));
        for (std::int64_t k = 0; k < room && next < waiting.size(); ++k) out.push_back({waiting[next++], s.id});
    }
    return out;
}

bool replan_trigger(ReplanEvent event, int completions_since_replan, bool eta_past_deadline, int every_k) {
    if (event != ReplanEvent::completion) return true;
    return eta_past_deadline || completions_since_replan >= every_k;
}

const char* to_string(ReplanEvent e) {
    switch (e) {
        case ReplanEvent::tick: return "scheduling cycle";
        case ReplanEvent::completion: return "job completions";
        case ReplanEvent::failure: return "job failure";
        case ReplanEvent::resource_up: return "resource up";
        case ReplanEvent::resource_down: return "resource down";
        case ReplanEvent::cost_boundary: return "cost boundary";
        case ReplanEvent::constraints_steered: return "constraints steered";
    }
    return "unknown";
}

}  // namespace gridfarm::scheduler
