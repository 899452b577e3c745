#pragma once

#include <array>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gridfarm/dispatcher/dispatcher.hpp"
#include "gridfarm/economy/ledger.hpp"
#include "gridfarm/economy/quote.hpp"
#include "gridfarm/economy/tender.hpp"
#include "gridfarm/engine/experiment.hpp"
#include "gridfarm/engine/journal.hpp"
#include "gridfarm/scheduler/rate.hpp"
#include "gridfarm/scheduler/resource_view.hpp"

namespace gridfarm::engine {

struct ExperimentSpec {
    std::string id;
    plan::Plan plan;
    Constraints constraints;
    EngineConfig config;
    SimTime created_at{0.0};
    double origin_time_of_day = 8 * 3600.0;  // clock of the cost schedules
    bool negotiate = false;                  // start in negotiating instead of ready
};

void validate(const Constraints& c, SimTime now);

struct RecoveryReport {
    std::uint64_t last_seq = 0;
    bool torn_tail = false;
    std::optional<std::size_t> truncated_at_line;
    std::vector<std::uint64_t> requeued;
    std::string detail;
};

class RecoveryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Owns one experiment: job lifecycle, ledger and scheduling decisions.
/// Every mutation is a journal record applied through the same path used by
/// recovery. Calls are expected from one driving thread; snapshot(),
/// jobs() and the record feed may be read from any thread.
class Engine {
public:
    enum class Action { start, pause, resume, abort };

    /// Journals experiment_created. Throws InvalidConstraints,
    /// plan::CrossProductTooLarge, JournalError.
    Engine(ExperimentSpec spec, std::unique_ptr<JournalSink> sink);

    /// Rebuilds from committed records and journals a recovered record.
    /// Jobs caught in flight go back to waiting with attempt + 1.
    /// `sink` receives the new records only; the caller keeps the prefix.
    static std::unique_ptr<Engine> recover(const JournalContents& contents, std::unique_ptr<JournalSink> sink,
                                           SimTime now, RecoveryReport* report = nullptr);

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    /// Non-owning. Both must outlive the engine or be rebound.
    void bind(dispatcher::Dispatcher* dispatcher, const scheduler::ResourceDirectory* directory);

    const std::string& id() const { return id_; }
    const plan::Plan& plan() const { return plan_; }
    const EngineConfig& config() const { return config_; }
    Phase phase() const;
    Constraints constraints() const;
    SimTime created_at() const { return created_at_; }
    double origin_time_of_day() const { return origin_; }

    /// Throws IllegalState for actions the phase does not allow.
    void act(Action action, SimTime now, const std::string& client = "");
    /// Partial update; throws IllegalState (terminal phase) or
    /// InvalidConstraints. A re-plan follows on the next step().
    void steer(std::optional<SimTime> deadline, std::optional<Money> budget, SimTime now,
               const std::string& client = "");
    /// Pins tendered rates until each bid's valid_until.
    void accept_tender(const economy::TenderResult& result, SimTime now);

    /// What the scheduler would do now for the remaining work.
    economy::Quote quote(SimTime now) const;

    /// Scheduling pass: halts, re-plan if triggered, dispatch.
    void step(SimTime now, scheduler::ReplanEvent event);
    /// Applies one lifecycle signal from the dispatcher, then runs step().
    void on_signal(const dispatcher::JobSignal& signal, SimTime now);
    /// Feeds a raw wrapper update through the bound dispatcher.
    void on_status(const dispatcher::StatusUpdate& update, SimTime now);

    /// Job event from outside the scheduler (tests, tools). Illegal events
    /// are journaled as anomalies and throw IllegalState.
    void apply_transition(std::uint64_t job, JobEvent event, SimTime now, const json& detail = json::object());

    Snapshot snapshot() const;
    std::vector<JobRecord> jobs(std::optional<JobState> filter = std::nullopt, std::size_t offset = 0,
                                std::size_t limit = SIZE_MAX) const;
    JobRecord job(std::uint64_t ordinal) const;
    std::uint64_t job_count() const { return jobs_.size(); }
    std::vector<economy::LedgerEntry> ledger_entries() const;
    std::string ledger_csv() const;
    std::map<std::string, scheduler::RateEstimate> rate_estimates() const;

    /// Encoded records with seq > after_seq, in order.
    std::vector<std::string> records_after(std::uint64_t after_seq) const;
    /// Blocks until a record past after_seq exists or the timeout expires.
    bool wait_for_records(std::uint64_t after_seq, std::chrono::milliseconds timeout) const;
    std::uint64_t last_seq() const;

    using Listener = std::function<void(const JournalRecord&)>;
    void subscribe(Listener listener);

private:
    struct Restore {};
    Engine(Restore, const JournalRecord& created, std::unique_ptr<JournalSink> sink);

    struct ResourceState {
        int in_flight = 0;
        double free_at = 0.0;          // seconds; when the committed backlog drains
        double last_completion = -1.0;  // seconds
        scheduler::RateEstimate rate;
        bool has_rate = false;
        std::set<std::uint64_t> jobs;  // in flight here
    };

    void commit(const std::string& kind, json payload, SimTime now);
    void apply(const JournalRecord& record);
    void apply_created(const json& p);
    void apply_job(const JournalRecord& record);
    void apply_phase(const json& p, double t);
    void apply_replan(const json& p);
    void set_state(JobRecord& job, JobState to, double t);

    std::vector<scheduler::Candidate> candidates(SimTime now, const std::vector<scheduler::ResourceView>& views) const;
    Money rate_for(const scheduler::ResourceView& view, SimTime now) const;
    double rate_estimate(const scheduler::ResourceView& view) const;
    double reference_rate() const { return 1.0 / plan_.expected_job_hours; }
    /// Reference rate scaled by the mean slowdown seen so far; the prior for
    /// resources without history.
    double prior_rate() const {
        return slowdown_count_ ? reference_rate() * slowdown_count_ / slowdown_sum_ : reference_rate();
    }
    void halt(Phase phase, const std::string& reason, SimTime now);
    void dispatch_one(std::uint64_t job, const scheduler::ResourceView& view, SimTime now);
    void fail_attempt(std::uint64_t job, int attempt, const std::string& reason, double cpu_hours, SimTime now,
                      json extra = json::object());
    void cancel_stragglers(SimTime now, const std::vector<scheduler::Candidate>& cands);
    std::optional<SimTime> eta(SimTime now) const;
    void note_error(double actual_hours, double expected_hours) {
        if (expected_hours <= 0) return;
        double e = actual_hours / expected_hours - 1.0;
        error_sq_sum_ += e * e;
        ++error_count_;
    }
    /// Share of the remaining time held back (see EngineConfig).
    double margin() const;
    Seconds horizon(SimTime now) const;
    Snapshot snapshot_locked() const;

    // Fixed at creation.
    std::string id_;
    plan::Plan plan_;
    EngineConfig config_;
    SimTime created_at_{0.0};
    double origin_ = 8 * 3600.0;

    // Derived from the journal.
    Constraints constraints_;
    Phase phase_ = Phase::ready;
    std::string phase_reason_;
    std::vector<JobRecord> jobs_;
    std::set<std::uint64_t> waiting_;
    std::array<std::uint64_t, kJobStateCount> counts_{};
    std::map<std::string, ResourceState> resources_;
    economy::BudgetLedger ledger_;
    scheduler::ScheduleDecision decision_;
    std::map<std::string, std::pair<Money, double>> tendered_;  // rate, valid_until seconds
    int completions_since_replan_ = 0;
    double slowdown_sum_ = 0.0;
    int slowdown_count_ = 0;
    std::optional<std::string> replan_reason_;
    std::uint64_t last_seq_ = 0;
    double clock_ = 0.0;
    double error_sq_sum_ = 0.0;  // squared relative errors of duration estimates
    int error_count_ = 0;

    // Outside the journal.
    std::unique_ptr<JournalSink> sink_;
    dispatcher::Dispatcher* dispatcher_ = nullptr;
    const scheduler::ResourceDirectory* directory_ = nullptr;
    std::vector<std::string> lines_;
    std::vector<Listener> listeners_;
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    bool replaying_ = false;
};

const char* to_string(Engine::Action a);
std::optional<Engine::Action> action_from_string(std::string_view s);

json to_json(const Snapshot& s);
json to_json(const JobRecord& j);

}  // namespace gridfarm::engine
