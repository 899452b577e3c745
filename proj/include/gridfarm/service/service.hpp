#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "gridfarm/economy/quote.hpp"
#include "gridfarm/engine/engine.hpp"
#include "gridfarm/fabric/fabric.hpp"
#include "gridfarm/sim/simulation.hpp"

namespace httplib {
class Server;
}

namespace gridfarm::service {

using json = nlohmann::json;

struct ServiceOptions {
    fabric::FabricConfig fabric;
    std::uint64_t seed = 1;
    /// Journals go to <dir>/<id>.journal; empty keeps them in memory.
    std::filesystem::path journal_dir;
    bool fsync = false;
    /// Simulated seconds per wall-clock second; 0 runs flat out.
    double speed = 0.0;
    sim::SimOptions sim;
    engine::EngineConfig config;
};

/// Status code plus JSON body; the HTTP layer sends it as is.
struct Reply {
    int status = 200;
    json body = json::object();
};

json to_json(const economy::Quote& q, SimTime origin);

class Experiment;

/// Experiments on a shared fabric description, each driven by its own
/// simulation thread. Handlers map one to one onto the HTTP endpoints.
class Service {
public:
    explicit Service(ServiceOptions options);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    Reply create(const json& body, const std::string& client);
    Reply act(const std::string& id, const json& body, const std::string& client);
    Reply steer(const std::string& id, const json& body, const std::string& client);
    Reply status(const std::string& id) const;
    Reply jobs(const std::string& id, const std::string& state, const std::string& page,
               const std::string& page_size) const;
    Reply resources(const std::string& id) const;
    Reply list() const;
    Reply fabric() const;

    /// Null for unknown ids.
    std::shared_ptr<Experiment> find(const std::string& id) const;

    /// Registers every route on `server`.
    void mount(httplib::Server& server);
    /// Lets open event streams finish and joins the simulation threads.
    void shutdown();
    bool stopping() const { return stopping_; }

private:
    ServiceOptions options_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Experiment>> experiments_;
    std::uint64_t next_id_ = 1;
    std::atomic<bool> stopping_{false};
};

/// One experiment plus the thread that advances its simulation.
class Experiment {
public:
    Experiment(std::unique_ptr<sim::Session> session, double speed, Seconds tick);
    ~Experiment();

    /// Runs `f(session)` with the simulation paused.
    template <class F>
    auto locked(F&& f) {
        std::lock_guard lk(mu_);
        return f(*session_);
    }
    const engine::Engine& engine() const { return *engine_; }
    /// Wakes the runner after a phase change.
    void poke();
    void stop();

private:
    void loop();

    std::unique_ptr<sim::Session> session_;
    const engine::Engine* engine_;
    double speed_;
    Seconds tick_;
    std::mutex mu_;
    std::condition_variable cv_;
    bool stop_ = false;
    std::thread thread_;
};

}  // namespace gridfarm::service
