#include "gridfarm/scheduler/resource_view.hpp"

#include "gridfarm/scheduler/rate.hpp"

namespace gridfarm::scheduler {

const char* to_string(QueueType q) {
    return q == QueueType::batch ? "batch" : "interactive";
}

const char* to_string(ResourceStatus s) {
    return s == ResourceStatus::up ? "up" : "down";
}

std::vector<ResourceView> discover(const ResourceDirectory& directory, const std::string& user_id) {
    std::vector<ResourceView> out;
    for (auto& view : directory.query(user_id)) {
        if (view.authorized) out.push_back(std::move(view));
    }
    return out;
}

void RateEstimate::observe(double observed, SimTime t, double alpha) {
    if (!(observed > 0)) return;
    jobs_per_hour = alpha * observed + (1.0 - alpha) * jobs_per_hour;
    ++samples;
    last_update = t;
}

double initial_rate(const ResourceView& view, double reference_jobs_per_hour) {
    return view.capability * reference_jobs_per_hour * view.slots;
}

RateEstimate estimate_rate(std::span<const double> history, const ResourceView& view, double reference,
                           double alpha) {
    RateEstimate est{view.id, initial_rate(view, reference), 0, SimTime(0.0)};
    for (double obs : history) est.observe(obs, est.last_update, alpha);
    return est;
}

}  // namespace gridfarm::scheduler
