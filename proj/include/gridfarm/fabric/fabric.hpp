#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridfarm/core/rng.hpp"
#include "gridfarm/core/time.hpp"
#include "gridfarm/economy/cost_schedule.hpp"
#include "gridfarm/scheduler/resource_view.hpp"

namespace gridfarm::fabric {

/// Background load: a bounded random walk stepped every `step` seconds.
struct LoadModel {
    double initial = 0.0;
    double sigma = 0.05;
    double max = 0.9;
    friend bool operator==(const LoadModel&, const LoadModel&) = default;
};

/// Whole-resource outages; mtbf_hours == 0 means the resource never goes down.
struct OutageModel {
    double mtbf_hours = 0.0;
    double mttr_hours = 1.0;
    friend bool operator==(const OutageModel&, const OutageModel&) = default;
};

struct SimResource {
    std::string id;
    double capability = 1.0;
    int slots = 1;
    scheduler::QueueType queue_type = scheduler::QueueType::interactive;
    int background_queue = 0;         // other users' jobs ahead on a batch queue
    double mean_service_hours = 1.0;  // service time of those jobs
    LoadModel load;
    double failure_rate = 0.0;        // per attempt, drawn at completion
    std::shared_ptr<const economy::CostSchedule> schedule;
    double markup = 1.0;              // owner's bid markup over the schedule
    double bandwidth_mb_s = 100.0;
    OutageModel outage;
    std::vector<std::string> authorized_users{"*"};

    bool authorizes(const std::string& user) const;
    friend bool operator==(const SimResource& a, const SimResource& b);
};

struct FabricConfig {
    double origin_time_of_day = 8 * 3600.0;
    Seconds load_step{300.0};
    std::vector<SimResource> resources;
};

class InvalidFabric : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// JSON fabric description. Throws InvalidFabric (duplicate ids, bad
/// schedules, out-of-range fields).
FabricConfig parse_fabric(const std::string& json_text);
FabricConfig load_fabric(const std::filesystem::path& path);
std::string fabric_to_json(const FabricConfig& config);

/// N resources, capabilities log-uniform in [0.5, 4.0], day/night prices,
/// mixed queue types. Each resource's attributes come from its own stream.
FabricConfig synthesize_fabric(int count, std::uint64_t seed);

/// Turns all stochastic behavior off: no load, failures, outages, batch
/// waits or staging delays; schedules flattened to their first rate.
FabricConfig frozen(FabricConfig config);

void validate(const FabricConfig& config);

struct JobDuration {
    double cpu_hours = 0.0;
    double wall_hours = 0.0;
};

/// cpu = e / capability; wall = cpu / (1 - load) + queue_ahead x mean
/// service + payload / bandwidth.
JobDuration job_duration(const SimResource& resource, double expected_job_hours, double load, int queue_ahead,
                         double payload_mb);

/// Deterministic per-resource load path.
class LoadWalk {
public:
    LoadWalk(std::uint64_t seed, const SimResource& resource, Seconds step);
    double at(SimTime t);

private:
    LoadModel model_;
    Seconds step_;
    RandomStream rs_;
    std::vector<double> path_;  // value at each step index
};

/// Deterministic per-resource up/down timeline.
class OutageTimeline {
public:
    OutageTimeline(std::uint64_t seed, const SimResource& resource);
    bool up_at(SimTime t);
    /// First status change strictly after t (infinity if none).
    SimTime next_change(SimTime t);

private:
    void extend_past(double t);
    std::uint64_t seed_;
    std::string id_;
    OutageModel model_;
    std::vector<std::pair<double, double>> outages_;  // [down, up)
    double horizon_ = 0.0;
    std::uint64_t drawn_ = 0;
};

/// Registered resources plus their live status: the directory the
/// scheduler discovers through.
class Fabric : public scheduler::ResourceDirectory {
public:
    Fabric(FabricConfig config, std::uint64_t seed);

    const FabricConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }
    std::size_t size() const { return config_.resources.size(); }
    const SimResource& resource(std::size_t i) const { return config_.resources[i]; }
    const SimResource* find(const std::string& id) const;
    std::size_t index_of(const std::string& id) const;

    void set_now(SimTime t) { now_ = t; }
    SimTime now() const { return now_; }
    void set_up(std::size_t i, bool up) { up_[i] = up; }
    bool is_up(std::size_t i) const { return up_[i]; }
    double load(std::size_t i) { return loads_[i].at(now_); }
    OutageTimeline& outages(std::size_t i) { return outages_[i]; }

    std::vector<scheduler::ResourceView> query(const std::string& user_id) const override;

private:
    FabricConfig config_;
    std::uint64_t seed_;
    SimTime now_{0.0};
    std::vector<bool> up_;
    mutable std::vector<LoadWalk> loads_;
    std::vector<OutageTimeline> outages_;
};

}  // namespace gridfarm::fabric
