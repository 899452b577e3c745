#include "gridfarm/fabric/fabric.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gridfarm/core/rng.hpp"

namespace gridfarm::fabric {
namespace {

using json = nlohmann::json;

Money money_from(const json& v, const std::string& where) {
    if (v.is_number()) return Money::from_units(v.get<double>());
    if (v.is_string()) return Money::parse(v.get<std::string>());
    throw InvalidFabric(where + ": rate must be a number or decimal string");
}

double time_from(const json& v) {
    if (v.is_number()) return v.get<double>() * 3600.0;
    return parse_time_of_day(v.get<std::string>());
}

economy::CostSchedule schedule_from(const json& j, const std::string& id) {
    std::map<std::string, double> multipliers;
    if (j.is_object() && j.contains("user_multipliers")) {
        for (const auto& [user, m] : j.at("user_multipliers").items()) multipliers[user] = m.get<double>();
    }
    try {
        if (j.is_number() || j.is_string()) {
            return economy::CostSchedule({economy::CostSegment{0.0, kSecondsPerDay, money_from(j, id)}});
        }
        std::vector<economy::CostSegment> segments;
        const json& segs = j.is_array() ? j : j.value("segments", json());
        if (segs.is_array()) {
            for (const auto& s : segs) {
                segments.push_back({time_from(s.at("start")), time_from(s.at("end")), money_from(s.at("rate"), id)});
            }
        } else if (j.contains("day")) {
            double ds = j.contains("day_start") ? time_from(j.at("day_start")) : 8 * 3600.0;
            double de = j.contains("day_end") ? time_from(j.at("day_end")) : 20 * 3600.0;
            segments.push_back({ds, de, money_from(j.at("day"), id)});
            segments.push_back({de, ds, money_from(j.at("night"), id)});
        } else {
            throw InvalidFabric("resource " + id + ": cost needs segments, day/night or a flat rate");
        }
        return economy::CostSchedule(std::move(segments), std::move(multipliers));
    } catch (const economy::InvalidSchedule& e) {
        throw InvalidFabric("resource " + id + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw InvalidFabric("resource " + id + ": " + e.what());
    }
}

json schedule_to(const economy::CostSchedule& s) {
    json segs = json::array();
    for (const auto& seg : s.segments()) {
        segs.push_back({{"start", format_time_of_day(seg.start)},
                        {"end", format_time_of_day(seg.end)},
                        {"rate", seg.rate.to_string()}});
    }
    json out = {{"segments", segs}};
    if (!s.user_multipliers().empty()) out["user_multipliers"] = s.user_multipliers();
    return out;
}

SimResource resource_from(const json& j) {
    SimResource r;
    r.id = j.at("id").get<std::string>();
    r.capability = j.value("capability", 1.0);
    r.slots = j.value("slots", 1);
    std::string q = j.value("queue", std::string("interactive"));
    if (q == "batch") r.queue_type = scheduler::QueueType::batch;
    else if (q == "interactive") r.queue_type = scheduler::QueueType::interactive;
    else throw InvalidFabric("resource " + r.id + ": unknown queue type '" + q + "'");
    r.background_queue = j.value("background_queue", 0);
    r.mean_service_hours = j.value("mean_service_hours", 1.0);
    if (j.contains("load")) {
        const auto& l = j.at("load");
        r.load.initial = l.value("initial", 0.0);
        r.load.sigma = l.value("sigma", 0.05);
        r.load.max = l.value("max", 0.9);
    }
    r.failure_rate = j.value("failure_rate", 0.0);
    r.schedule = std::make_shared<const economy::CostSchedule>(
        j.contains("cost") ? schedule_from(j.at("cost"), r.id) : economy::CostSchedule());
    r.markup = j.value("markup", 1.0);
    r.bandwidth_mb_s = j.value("bandwidth_mb_s", 100.0);
    if (j.contains("outage")) {
        r.outage.mtbf_hours = j.at("outage").value("mtbf_hours", 0.0);
        r.outage.mttr_hours = j.at("outage").value("mttr_hours", 1.0);
    }
    if (j.contains("authorized")) r.authorized_users = j.at("authorized").get<std::vector<std::string>>();
    return r;
}

// Reflect into [0, max] until inside.
double reflect(double x, double hi) {
    for (int i = 0; i < 8 && (x < 0.0 || x > hi); ++i) {
        if (x < 0.0) x = -x;
        if (x > hi) x = 2 * hi - x;
    }
    return std::clamp(x, 0.0, hi);
}

}  // namespace

bool SimResource::authorizes(const std::string& user) const {
    for (const auto& u : authorized_users) {
        if (u == "*" || u == user) return true;
    }
    return false;
}

bool operator==(const SimResource& a, const SimResource& b) {
    auto same_schedule = [](const auto& x, const auto& y) {
        if (!x || !y) return !x && !y;
        return *x == *y;
    };
    return a.id == b.id && a.capability == b.capability && a.slots == b.slots && a.queue_type == b.queue_type &&
           a.background_queue == b.background_queue && a.mean_service_hours == b.mean_service_hours &&
           a.load == b.load && a.failure_rate == b.failure_rate && same_schedule(a.schedule, b.schedule) &&
           a.markup == b.markup && a.bandwidth_mb_s == b.bandwidth_mb_s && a.outage == b.outage &&
           a.authorized_users == b.authorized_users;
}

void validate(const FabricConfig& config) {
    std::set<std::string> ids;
    for (const auto& r : config.resources) {
        if (r.id.empty()) throw InvalidFabric("resource with empty id");
        if (!ids.insert(r.id).second) throw InvalidFabric("duplicate resource id '" + r.id + "'");
        auto bad = [&](const std::string& what) { throw InvalidFabric("resource " + r.id + ": " + what); };
        if (!(r.capability > 0)) bad("capability must be positive");
        if (r.slots < 1) bad("slots must be at least 1");
        if (r.background_queue < 0) bad("background_queue must not be negative");
        if (r.mean_service_hours < 0) bad("mean_service_hours must not be negative");
        if (r.load.initial < 0 || r.load.max < 0 || r.load.max >= 1 || r.load.initial > r.load.max) {
            bad("load must stay within [0, max] with max < 1");
        }
        if (r.load.sigma < 0) bad("load sigma must not be negative");
        if (r.failure_rate < 0 || r.failure_rate >= 1) bad("failure_rate must be in [0, 1)");
        if (!r.schedule) bad("missing cost schedule");
        if (!(r.markup > 0)) bad("markup must be positive");
        if (!(r.bandwidth_mb_s > 0)) bad("bandwidth must be positive");
        if (r.outage.mtbf_hours < 0 || (r.outage.mtbf_hours > 0 && !(r.outage.mttr_hours > 0))) {
            bad("outage needs mtbf >= 0 and mttr > 0");
        }
    }
    if (!(config.load_step.count() > 0)) throw InvalidFabric("load_step must be positive");
}

FabricConfig parse_fabric(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw InvalidFabric(std::string("fabric is not valid JSON: ") + e.what());
    }
    FabricConfig config;
    try {
        if (j.contains("origin")) config.origin_time_of_day = time_from(j.at("origin"));
        if (j.contains("load_step")) config.load_step = parse_duration(j.at("load_step").get<std::string>());
        for (const auto& r : j.at("resources")) config.resources.push_back(resource_from(r));
    } catch (const json::exception& e) {
        throw InvalidFabric(std::string("fabric: ") + e.what());
    }
    validate(config);
    return config;
}

FabricConfig load_fabric(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidFabric("cannot read fabric file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_fabric(buf.str());
}

std::string fabric_to_json(const FabricConfig& config) {
    json out;
    out["origin"] = format_time_of_day(config.origin_time_of_day);
    out["load_step"] = format_duration(config.load_step);
    out["resources"] = json::array();
    for (const auto& r : config.resources) {
        out["resources"].push_back({
            {"id", r.id},
            {"capability", r.capability},
            {"slots", r.slots},
            {"queue", scheduler::to_string(r.queue_type)},
            {"background_queue", r.background_queue},
            {"mean_service_hours", r.mean_service_hours},
            {"load", {{"initial", r.load.initial}, {"sigma", r.load.sigma}, {"max", r.load.max}}},
            {"failure_rate", r.failure_rate},
            {"cost", schedule_to(*r.schedule)},
            {"markup", r.markup},
            {"bandwidth_mb_s", r.bandwidth_mb_s},
            {"outage", {{"mtbf_hours", r.outage.mtbf_hours}, {"mttr_hours", r.outage.mttr_hours}}},
            {"authorized", r.authorized_users},
        });
    }
    return out.dump(2) + "\n";
}

FabricConfig synthesize_fabric(int count, std::uint64_t seed) {
    FabricConfig config;
    int width = count > 100 ? (count > 1000 ? 4 : 3) : 2;
    for (int i = 0; i < count; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "R%0*d", width, i);
        RandomStream rs(derive_seed(seed, id, "attributes"));
        SimResource r;
        r.id = id;
        r.capability = std::exp(rs.uniform(std::log(0.5), std::log(4.0)));
        r.capability = std::round(r.capability * 1000.0) / 1000.0;
        r.slots = 1;
        bool batch = rs.bernoulli(0.3);
        r.queue_type = batch ? scheduler::QueueType::batch : scheduler::QueueType::interactive;
        r.background_queue = batch ? static_cast<int>(rs.uniform(0.0, 3.0)) : 0;
        r.mean_service_hours = std::round(rs.uniform(0.05, 0.25) * 100.0) / 100.0;
        r.load.initial = std::round(rs.uniform(0.0, 0.3) * 100.0) / 100.0;
        r.load.sigma = 0.05;
        r.load.max = 0.9;
        r.failure_rate = std::round(rs.uniform(0.0, 0.03) * 1000.0) / 1000.0;
        // Faster machines ask somewhat more per cpu-hour; the noise term keeps
        // per-job cost from being a function of speed alone.
        double day = rs.uniform(1.0, 10.0) * std::pow(r.capability, 1.2);
        double night = day * rs.uniform(0.3, 0.7);
        if (rs.bernoulli(0.3)) {
            r.schedule = std::make_shared<const economy::CostSchedule>(
                economy::CostSchedule::flat(Money::from_units(day)));
        } else {
            r.schedule = std::make_shared<const economy::CostSchedule>(
                economy::CostSchedule::day_night(Money::from_units(day), Money::from_units(night)));
        }
        r.markup = 1.0;
        r.bandwidth_mb_s = std::round(rs.uniform(10.0, 100.0));
        if (rs.bernoulli(0.5)) {
            r.outage.mtbf_hours = std::round(rs.uniform(24.0, 96.0));
            r.outage.mttr_hours = std::round(rs.uniform(0.5, 3.0) * 10.0) / 10.0;
        }
        config.resources.push_back(std::move(r));
    }
    validate(config);
    return config;
}

FabricConfig frozen(FabricConfig config) {
    for (auto& r : config.resources) {
        r.background_queue = 0;
        r.load = LoadModel{0.0, 0.0, r.load.max};
        r.failure_rate = 0.0;
        r.outage = OutageModel{};
        r.bandwidth_mb_s = std::numeric_limits<double>::max();
        const auto& segs = r.schedule->segments();
        r.schedule = std::make_shared<const economy::CostSchedule>(
            economy::CostSchedule({economy::CostSegment{0.0, kSecondsPerDay, segs.front().rate}},
                                  r.schedule->user_multipliers()));
    }
    return config;
}

JobDuration job_duration(const SimResource& resource, double expected_job_hours, double load, int queue_ahead,
                         double payload_mb) {
    JobDuration d;
    d.cpu_hours = expected_job_hours / resource.capability;
    double staging_hours = payload_mb > 0 ? payload_mb / resource.bandwidth_mb_s / 3600.0 : 0.0;
    d.wall_hours = d.cpu_hours / (1.0 - load) + queue_ahead * resource.mean_service_hours + staging_hours;
    return d;
}

LoadWalk::LoadWalk(std::uint64_t seed, const SimResource& resource, Seconds step)
    : model_(resource.load), step_(step), rs_(derive_seed(seed, resource.id, "load")), path_{resource.load.initial} {}

double LoadWalk::at(SimTime t) {
    if (model_.sigma == 0.0) return model_.initial;
    double k = std::floor(std::max(0.0, t.count()) / step_.count());
    auto n = static_cast<std::size_t>(k);
    if (n >= path_.size()) {
        while (path_.size() <= n) path_.push_back(reflect(path_.back() + model_.sigma * rs_.normal(), model_.max));
    }
    return path_[n];
}

OutageTimeline::OutageTimeline(std::uint64_t seed, const SimResource& resource)
    : seed_(seed), id_(resource.id), model_(resource.outage) {}

void OutageTimeline::extend_past(double t) {
    if (model_.mtbf_hours <= 0) return;
    while (horizon_ <= t) {
        // Interval k uses its own keyed draws, so the timeline is the same
        // however far it has been extended.
        double u1 = keyed_uniform(seed_, id_, "outage-up", drawn_);
        double u2 = keyed_uniform(seed_, id_, "outage-down", drawn_);
        ++drawn_;
        double up_for = -std::log(1.0 - u1) * model_.mtbf_hours * 3600.0;
        double down_for = std::max(60.0, -std::log(1.0 - u2) * model_.mttr_hours * 3600.0);
        double down = horizon_ + up_for;
        outages_.emplace_back(down, down + down_for);
        horizon_ = down + down_for;
    }
}

bool OutageTimeline::up_at(SimTime t) {
    extend_past(t.count());
    for (const auto& [d, u] : outages_) {
        if (t.count() >= d && t.count() < u) return false;
        if (d > t.count()) break;
    }
    return true;
}

SimTime OutageTimeline::next_change(SimTime t) {
    if (model_.mtbf_hours <= 0) return SimTime(std::numeric_limits<double>::infinity());
    extend_past(t.count());
    for (const auto& [d, u] : outages_) {
        if (d > t.count()) return SimTime(d);
        if (u > t.count()) return SimTime(u);
    }
    extend_past(horizon_);
    return next_change(t);
}

Fabric::Fabric(FabricConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
    validate(config_);
    up_.assign(config_.resources.size(), true);
    for (const auto& r : config_.resources) {
        loads_.emplace_back(seed_, r, config_.load_step);
        outages_.emplace_back(seed_, r);
    }
}

const SimResource* Fabric::find(const std::string& id) const {
    for (const auto& r : config_.resources) {
        if (r.id == id) return &r;
    }
    return nullptr;
}

std::size_t Fabric::index_of(const std::string& id) const {
    for (std::size_t i = 0; i < config_.resources.size(); ++i) {
        if (config_.resources[i].id == id) return i;
    }
    return config_.resources.size();
}

std::vector<scheduler::ResourceView> Fabric::query(const std::string& user_id) const {
    std::vector<scheduler::ResourceView> out;
    out.reserve(config_.resources.size());
    for (std::size_t i = 0; i < config_.resources.size(); ++i) {
        const auto& r = config_.resources[i];
        scheduler::ResourceView v;
        v.id = r.id;
        v.authorized = r.authorizes(user_id);
        v.capability = r.capability;
        v.slots = r.slots;
        v.queue_type = r.queue_type;
        v.queue_length = r.background_queue;
        v.load = loads_[i].at(now_);
        v.reliability = 1.0 - r.failure_rate;
        v.bandwidth_mb_s = r.bandwidth_mb_s;
        v.schedule = r.schedule;
        v.status = up_[i] ? scheduler::ResourceStatus::up : scheduler::ResourceStatus::down;
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace gridfarm::fabric
