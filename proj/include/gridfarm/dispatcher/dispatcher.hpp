#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include "gridfarm/core/time.hpp"
#include "gridfarm/dispatcher/wrapper.hpp"

namespace gridfarm::dispatcher {

/// Report from a job wrapper about one attempt.
struct StatusUpdate {
    enum class Phase { staging_in, started, progress, staged_out, completed, failed };
    std::uint64_t job = 0;
    int attempt = 0;
    Phase phase = Phase::progress;
    double cpu_hours = 0.0;
    SimTime t{0.0};
    std::string message;
};

const char* to_string(StatusUpdate::Phase p);

/// Runs wrapper scripts somewhere: the simulated grid or local processes.
class ExecutorBackend {
public:
    virtual ~ExecutorBackend() = default;
    /// Accepts the attempt, or returns the reason it cannot run.
    virtual std::optional<std::string> submit(const DispatchOrder& order, const WrapperScript& script, SimTime now) = 0;
    /// Forgets an attempt; no further updates are delivered for it.
    virtual void cancel(std::uint64_t job, int attempt) = 0;
};

/// What a status update means for the job's lifecycle.
struct JobSignal {
    enum class Kind { none, started, staged_out, completed, failed, anomaly };
    Kind kind = Kind::none;
    std::uint64_t job = 0;
    int attempt = 0;
    double cpu_hours = 0.0;
    std::string message;
};

/// Maps scheduler decisions onto an executor and wrapper reports back onto
/// job lifecycle signals. Tracks per-attempt phase order.
class Dispatcher {
public:
    explicit Dispatcher(ExecutorBackend& backend, std::optional<std::filesystem::path> home = std::nullopt)
        : backend_(backend), home_(std::move(home)) {}

    struct Outcome {
        bool accepted = false;
        std::string reason;
        WrapperScript script;
    };

    /// Builds the wrapper and submits it. Throws MalformedTask.
    Outcome dispatch(const DispatchOrder& order, SimTime now);
    JobSignal handle_status(const StatusUpdate& update);
    void cancel(std::uint64_t job, int attempt);
    /// Drops every tracked attempt without telling the backend.
    void reset() { phases_.clear(); }

    std::size_t in_flight() const { return phases_.size(); }

private:
    void materialize_substitutions(const DispatchOrder& order);

    ExecutorBackend& backend_;
    std::optional<std::filesystem::path> home_;
    std::map<std::pair<std::uint64_t, int>, int> phases_;  // last phase rank seen
};

/// Runs each wrapper synchronously in a scratch directory. Updates queue up
/// until poll(). Paths in stage_in / stage_out resolve against `home`.
class LocalProcessBackend : public ExecutorBackend {
public:
    LocalProcessBackend(std::filesystem::path home, std::filesystem::path scratch)
        : home_(std::move(home)), scratch_(std::move(scratch)) {}

    std::optional<std::string> submit(const DispatchOrder& order, const WrapperScript& script, SimTime now) override;
    void cancel(std::uint64_t job, int attempt) override;
    std::vector<StatusUpdate> poll();

private:
    std::filesystem::path home_;
    std::filesystem::path scratch_;
    std::vector<StatusUpdate> pending_;
};

}  // namespace gridfarm::dispatcher
