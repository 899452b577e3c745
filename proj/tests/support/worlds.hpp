#pragma once

// Small fixtures shared by the engine, simulation and acceptance tests.

#include <memory>
#include <stdexcept>
#include <string>

#include "gridfarm/economy/cost_schedule.hpp"
#include "gridfarm/fabric/fabric.hpp"
#include "gridfarm/plan/plan.hpp"

namespace worlds {

/// `jobs` jobs of `hours` reference hours each, one integer parameter.
inline gridfarm::plan::Plan sweep_plan(int jobs, double hours = 1.0, const std::string& name = "sweep") {
    std::string text = "plan " + name + ";\nexpected_job_hours " + std::to_string(hours) +
                       ";\nparameter i integer range from 1 to " + std::to_string(jobs) +
                       " step 1;\ntask main\n    execute \"model ${i}\" produces \"out.${i}\";\n    output \"out.${i}\";\nendtask\n";
    auto r = gridfarm::plan::parse_plan(text);
    if (!r.ok()) throw std::logic_error("fixture plan does not parse");
    return *r.plan;
}

inline gridfarm::fabric::SimResource quiet_resource(const std::string& id, double capability, double rate_units) {
    gridfarm::fabric::SimResource r;
    r.id = id;
    r.capability = capability;
    r.schedule = std::make_shared<gridfarm::economy::CostSchedule>(
        gridfarm::economy::CostSchedule::flat(gridfarm::Money::from_units(rate_units)));
    return r;
}

/// Two fast, steady, reliable resources.
inline gridfarm::fabric::FabricConfig two_fast() {
    gridfarm::fabric::FabricConfig c;
    c.resources = {quiet_resource("fast-a", 4.0, 2.0), quiet_resource("fast-b", 3.0, 1.0)};
    return c;
}

}  // namespace worlds
