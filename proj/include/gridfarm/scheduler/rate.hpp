#pragma once

#include <span>
#include <string>

#include "gridfarm/core/time.hpp"
#include "gridfarm/scheduler/resource_view.hpp"

namespace gridfarm::scheduler {

inline constexpr double kRateSmoothing = 0.3;

/// Observed job consumption rate of one resource, smoothed.
struct RateEstimate {
    std::string resource_id;
    double jobs_per_hour = 0.0;
    int samples = 0;
    SimTime last_update{0.0};

    /// Folds one observed per-job completion rate into the estimate.
    void observe(double observed_jobs_per_hour, SimTime t, double alpha = kRateSmoothing);
};

/// Rate before any completion: capability x reference rate x slots.
double initial_rate(const ResourceView& view, double reference_jobs_per_hour);

/// Estimate after replaying `history` (observed jobs/hour, oldest first).
RateEstimate estimate_rate(std::span<const double> history, const ResourceView& view,
                           double reference_jobs_per_hour, double alpha = kRateSmoothing);

}  // namespace gridfarm::scheduler
