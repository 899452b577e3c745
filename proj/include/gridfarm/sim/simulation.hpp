#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <queue>
#include <string>
#include <vector>

#include "gridfarm/dispatcher/dispatcher.hpp"
#include "gridfarm/engine/engine.hpp"
#include "gridfarm/fabric/fabric.hpp"

namespace gridfarm::sim {

enum class EventKind { job_start, job_finish, load_step, resource_down, resource_up, schedule_tick, cost_boundary };
const char* to_string(EventKind k);

struct SimEvent {
    SimTime time{0.0};
    std::uint64_t ordinal = 0;  // push order; breaks time ties
    EventKind kind = EventKind::schedule_tick;
    std::size_t resource = 0;
    std::uint64_t job = 0;
    int attempt = 0;
};

struct SimOptions {
    Seconds tick{120.0};
    /// Give up (stalled) once simulated time passes this.
    SimTime horizon{30 * kSecondsPerDay};
};

struct RunCondition {
    std::optional<SimTime> until;  // stop before the first event after this
};

struct RunResult {
    enum class Status { reached_time, terminal, stalled };
    Status status = Status::stalled;
    SimTime now{0.0};
    std::string diagnostic;
};

/// Discrete-event model of the grid and the executor backend the engine
/// dispatches to. Single-threaded; all randomness is keyed by the seed.
class Simulation : public dispatcher::ExecutorBackend {
public:
    Simulation(fabric::FabricConfig config, std::uint64_t seed, SimOptions options = {});

    fabric::Fabric& fabric() { return fabric_; }
    dispatcher::Dispatcher& dispatcher() { return dispatcher_; }
    SimTime now() const { return now_; }

    /// Binds the engine to this fabric and schedules the first tick, load
    /// step, cost boundary and outage changes at or after `now`.
    void attach(engine::Engine& engine, SimTime now);
    RunResult run_until(RunCondition condition = {});

    const std::vector<std::string>& trace() const { return trace_; }
    void set_trace_stream(std::ostream* out) { trace_out_ = out; }

    std::optional<std::string> submit(const dispatcher::DispatchOrder& order, const dispatcher::WrapperScript& script,
                                      SimTime now) override;
    void cancel(std::uint64_t job, int attempt) override;

    /// Attempts currently holding a slot on resource i.
    int running_on(std::size_t i) const { return running_[i]; }

private:
    using Key = std::pair<std::uint64_t, int>;
    struct Attempt {
        std::size_t resource = 0;
        bool started = false;
        SimTime start{0.0};
        SimTime finish{0.0};
        double cpu_hours = 0.0;
    };
    struct Later {
        bool operator()(const SimEvent& a, const SimEvent& b) const {
            return a.time != b.time ? a.time > b.time : a.ordinal > b.ordinal;
        }
    };

    void push(SimTime t, EventKind kind, std::size_t resource = 0, std::uint64_t job = 0, int attempt = 0);
    void process(const SimEvent& e);
    void schedule_starts(std::size_t i);
    void deliver(const dispatcher::StatusUpdate& u);
    void crash(std::size_t i);
    void emit(nlohmann::json line);

    fabric::Fabric fabric_;
    std::uint64_t seed_;
    SimOptions options_;
    dispatcher::Dispatcher dispatcher_;
    engine::Engine* engine_ = nullptr;
    double expected_job_hours_ = 1.0;
    double payload_mb_ = 0.0;
    std::vector<double> boundaries_;

    std::priority_queue<SimEvent, std::vector<SimEvent>, Later> queue_;
    std::uint64_t next_ordinal_ = 0;
    SimTime now_{0.0};
    std::map<Key, Attempt> attempts_;
    std::vector<std::deque<Key>> fifo_;
    std::vector<int> running_;   // holding a slot (started or about to start)
    bool terminal_traced_ = false;

    std::vector<std::string> trace_;
    std::ostream* trace_out_ = nullptr;
};

struct SessionSetup {
    fabric::FabricConfig fabric;
    std::uint64_t seed = 0;
    SimOptions options;
};

/// One experiment on its own simulated fabric.
class Session {
public:
    Session(SessionSetup setup, engine::ExperimentSpec spec, std::unique_ptr<engine::JournalSink> sink);
    /// Restarts from a committed journal prefix at the time of its last
    /// record (or `now`, if later).
    static std::unique_ptr<Session> recover(SessionSetup setup, const engine::JournalContents& contents,
                                            std::unique_ptr<engine::JournalSink> sink,
                                            std::optional<SimTime> now = std::nullopt,
                                            engine::RecoveryReport* report = nullptr);

    engine::Engine& engine() { return *engine_; }
    Simulation& sim() { return *sim_; }

    void start(const std::string& client = "");
    RunResult run(RunCondition condition = {}) { return sim_->run_until(condition); }

private:
    Session() = default;
    std::unique_ptr<Simulation> sim_;
    std::unique_ptr<engine::Engine> engine_;
};

}  // namespace gridfarm::sim
