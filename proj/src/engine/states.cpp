#include <array>
#include <string_view>

#include "gridfarm/engine/experiment.hpp"

namespace gridfarm::engine {
namespace {

constexpr std::array<const char*, 9> kPhases{"negotiating", "ready",   "running",         "paused",          "completed",
                                             "completed_with_failures", "aborted", "deadline_missed", "budget_exhausted"};
constexpr std::array<const char*, kJobStateCount> kStates{"waiting", "scheduled", "staging", "running",
                                                          "completing", "done", "failed", "aborted"};
constexpr std::array<const char*, 9> kEvents{"dispatch", "submit", "start", "stage_out", "complete",
                                             "fail", "abort", "retry", "requeue"};

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<const char*, N>& names, std::string_view s) {
    for (std::size_t i = 0; i < N; ++i) {
        if (s == names[i]) return static_cast<E>(i);
    }
    return std::nullopt;
}

}  // namespace

const char* to_string(Phase p) { return kPhases[static_cast<std::size_t>(p)]; }
const char* to_string(JobState s) { return kStates[static_cast<std::size_t>(s)]; }
const char* to_string(JobEvent e) { return kEvents[static_cast<std::size_t>(e)]; }
std::optional<Phase> phase_from_string(std::string_view s) { return lookup<Phase>(kPhases, s); }
std::optional<JobState> job_state_from_string(std::string_view s) { return lookup<JobState>(kStates, s); }
std::optional<JobEvent> job_event_from_string(std::string_view s) { return lookup<JobEvent>(kEvents, s); }

bool is_terminal(Phase p) {
    switch (p) {
        case Phase::completed:
        case Phase::completed_with_failures:
        case Phase::aborted:
        case Phase::deadline_missed:
        case Phase::budget_exhausted:
            return true;
        default:
            return false;
    }
}

bool is_in_flight(JobState s) {
    return s == JobState::scheduled || s == JobState::staging || s == JobState::running || s == JobState::completing;
}

std::optional<JobState> next_state(JobState from, JobEvent event) {
    using S = JobState;
    switch (event) {
        case JobEvent::dispatch:
            if (from == S::waiting) return S::scheduled;
            break;
        case JobEvent::submit:
            if (from == S::scheduled) return S::staging;
            break;
        case JobEvent::start:
            if (from == S::staging) return S::running;
            break;
        case JobEvent::stage_out:
            if (from == S::running) return S::completing;
            break;
        case JobEvent::complete:
            if (from == S::running || from == S::completing) return S::done;
            break;
        case JobEvent::fail:
            if (is_in_flight(from)) return S::failed;
            break;
        case JobEvent::abort:
            if (from == S::waiting || is_in_flight(from)) return S::aborted;
            break;
        case JobEvent::retry:
            if (from == S::failed) return S::waiting;
            break;
        case JobEvent::requeue:
            if (is_in_flight(from)) return S::waiting;
            break;
    }
    return std::nullopt;
}

json EngineConfig::to_json() const {
    return json{{"retry_cap", retry_cap},
                {"enforce_budget", enforce_budget},
                {"charge_failed", charge_failed},
                {"charge_integrated", charge_integrated},
                {"cycle_hours", select.cycle_hours},
                {"pipeline_factor", select.pipeline_factor},
                {"completions_per_replan", completions_per_replan},
                {"deadline_margin", deadline_margin},
                {"margin_error_gain", margin_error_gain},
                {"straggler_factor", straggler_factor},
                {"max_jobs", max_jobs},
                {"staging_dir", staging_dir}};
}

EngineConfig EngineConfig::from_json(const json& j) {
    EngineConfig c;
    c.retry_cap = j.value("retry_cap", c.retry_cap);
    c.enforce_budget = j.value("enforce_budget", c.enforce_budget);
    c.charge_failed = j.value("charge_failed", c.charge_failed);
    c.charge_integrated = j.value("charge_integrated", c.charge_integrated);
    c.select.cycle_hours = j.value("cycle_hours", c.select.cycle_hours);
    c.select.pipeline_factor = j.value("pipeline_factor", c.select.pipeline_factor);
    c.completions_per_replan = j.value("completions_per_replan", c.completions_per_replan);
    c.deadline_margin = j.value("deadline_margin", c.deadline_margin);
    c.margin_error_gain = j.value("margin_error_gain", c.margin_error_gain);
    c.straggler_factor = j.value("straggler_factor", c.straggler_factor);
    c.max_jobs = j.value("max_jobs", c.max_jobs);
    c.staging_dir = j.value("staging_dir", c.staging_dir);
    return c;
}

}  // namespace gridfarm::engine
