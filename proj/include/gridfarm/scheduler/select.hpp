#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridfarm/core/money.hpp"
#include "gridfarm/core/time.hpp"

namespace gridfarm::scheduler {

/// One authorized, up resource offered to the selection.
struct Candidate {
    std::string id;
    double jobs_per_hour = 1.0;
    Money per_job_cost;
    /// Hours until the work already committed to this resource drains.
    double busy_hours = 0.0;
};

struct SelectParams {
    double cycle_hours = 2.0 / 60.0;
    double pipeline_factor = 2.0;
};

struct Selection {
    std::string id;
    int quota = 1;
    /// New jobs this resource should absorb before the deadline; nullopt when
    /// the deadline is out of reach and every selected resource runs flat out.
    std::optional<std::uint64_t> allotment;
    double jobs_per_hour = 1.0;
    Money per_job_cost;
    friend bool operator==(const Selection&, const Selection&) = default;
};

struct ScheduleDecision {
    std::vector<Selection> selected;
    Seconds projected_finish{0.0};
    Money projected_cost;
    bool feasible_deadline = true;
    bool feasible_budget = true;

    std::vector<std::string> selected_ids() const;
    friend bool operator==(const ScheduleDecision&, const ScheduleDecision&) = default;
};

/// Whole jobs `c` can finish within `t_rem` after its current backlog.
std::uint64_t capacity_within(const Candidate& c, Seconds t_rem);

/// Cost of placing `jobs` on `members` cheapest-first, each up to its
/// capacity. Returns nullopt if they cannot absorb all jobs.
std::optional<Money> fill_cost(std::span<const Candidate> members, std::uint64_t jobs, Seconds t_rem);

/// Deadline-constrained, cost-minimizing selection (cheapest per-job cost
/// first, minimal prefix whose capacity covers the remaining jobs).
/// `candidates` must already be restricted to authorized, up resources.
ScheduleDecision select_resources(std::uint64_t jobs_remaining, Seconds t_rem, std::span<const Candidate> candidates,
                                  Money budget_remaining, const SelectParams& params = {});

int quota_for(double jobs_per_hour, const SelectParams& params);

struct Assignment {
    std::uint64_t job = 0;
    std::string resource;
    friend bool operator==(const Assignment&, const Assignment&) = default;
};

/// Fills selected resources up to min(quota - in_flight, allotment),
/// cheapest first, jobs in the given order.
std::vector<Assignment> assign(std::span<const std::uint64_t> waiting, std::span<const Selection> selected,
                               const std::map<std::string, int>& in_flight);

enum class ReplanEvent { tick, completion, failure, resource_up, resource_down, cost_boundary, constraints_steered };

inline constexpr int kCompletionsPerReplan = 5;

/// Whether the selection must be recomputed now. `completions_since_replan`
/// counts the completion being reported.
bool replan_trigger(ReplanEvent event, int completions_since_replan = 0, bool eta_past_deadline = false,
                    int every_k_completions = kCompletionsPerReplan);

const char* to_string(ReplanEvent e);

}  // namespace gridfarm::scheduler
