#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridfarm/core/money.hpp"
#include "gridfarm/core/time.hpp"
#include "gridfarm/engine/journal.hpp"
#include "gridfarm/plan/plan.hpp"
#include "gridfarm/scheduler/select.hpp"

namespace gridfarm::engine {

enum class Phase {
    negotiating,
    ready,
    running,
    paused,
    completed,
    completed_with_failures,
    aborted,
    deadline_missed,
    budget_exhausted,
};

enum class JobState { waiting, scheduled, staging, running, completing, done, failed, aborted };

enum class JobEvent { dispatch, submit, start, stage_out, complete, fail, abort, retry, requeue };

const char* to_string(Phase p);
const char* to_string(JobState s);
const char* to_string(JobEvent e);
std::optional<Phase> phase_from_string(std::string_view s);
std::optional<JobState> job_state_from_string(std::string_view s);
std::optional<JobEvent> job_event_from_string(std::string_view s);

bool is_terminal(Phase p);
bool is_in_flight(JobState s);
/// Target state of a legal transition, nullopt if illegal. The retry cap is
/// the engine's business, not the table's.
std::optional<JobState> next_state(JobState from, JobEvent event);

inline constexpr std::size_t kJobStateCount = 8;

/// Deadline is absolute simulation time; the API speaks in durations from
/// the experiment's creation.
struct Constraints {
    SimTime deadline{0.0};
    Money budget;
    std::string user_id = "user";
};

class InvalidConstraints : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Rejected because of the experiment's phase (or a job's state).
class IllegalState : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EngineConfig {
    int retry_cap = 3;  // failed attempts per job; straggler cancellations don't count
    bool enforce_budget = true;
    bool charge_failed = false;
    bool charge_integrated = false;  // follow the schedule across the run instead of the dispatch price
    scheduler::SelectParams select;
    int completions_per_replan = scheduler::kCompletionsPerReplan;
    /// Fraction of the remaining time held back when sizing the selection:
    /// margin_error_gain x the RMS relative error of past duration
    /// estimates, capped at deadline_margin. Zero until an estimate misses.
    double deadline_margin = 0.6;
    double margin_error_gain = 4.0;
    /// A running attempt older than this many times its expected duration,
    /// which would miss the deadline if it ran as long again, is cancelled
    /// and retried elsewhere. 0 disables.
    double straggler_factor = 1.5;
    std::uint64_t max_jobs = 1'000'000;
    std::string staging_dir = "staging";

    json to_json() const;
    static EngineConfig from_json(const json& j);
};

struct JobRecord {
    plan::JobSpec spec;
    JobState state = JobState::waiting;
    std::optional<std::string> resource;
    int attempt = 0;
    int failures = 0;  // failed attempts that count against the retry cap
    Money cost_incurred;
    bool finalized = false;
    Money pinned_rate;
    double expected_cpu_hours = 0.0;
    double expected_hours = 0.0;  // 1 / resource rate estimate at dispatch
    SimTime dispatched_at{0.0};
    std::map<JobState, double> timestamps;  // last entry into each state
};

struct Snapshot {
    std::string id;
    std::string plan_name;
    Phase phase = Phase::ready;
    std::string phase_reason;
    std::uint64_t total_jobs = 0;
    std::map<JobState, std::uint64_t> counts;
    std::map<std::string, int> in_flight;  // per resource
    Money budget;
    Money committed;
    Money reserved;
    SimTime created_at{0.0};
    SimTime deadline{0.0};
    SimTime now{0.0};
    std::optional<SimTime> eta;
    std::uint64_t last_seq = 0;
    std::string user_id;
    std::vector<scheduler::Selection> selected;
};

}  // namespace gridfarm::engine
