#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gridfarm/core/money.hpp"
#include "gridfarm/plan/plan.hpp"

namespace gridfarm::dispatcher {

/// One unit of work for a resource: a job attempt plus everything the
/// wrapper needs to run it.
struct DispatchOrder {
    std::uint64_t job = 0;
    int attempt = 0;
    std::string resource;
    plan::TaskScript task;  // fully resolved
    plan::Binding binding;
    Money pinned_rate;
    double projected_hours = 0.0;
    /// Where substituted input files are written before staging.
    std::string staging_dir = "staging";
};

struct WrapperCommand {
    enum class Verb { stage_in, execute, stage_out, report };
    Verb verb = Verb::report;
    std::string arg;   // source / command
    std::string arg2;  // destination
    friend bool operator==(const WrapperCommand&, const WrapperCommand&) = default;
};

/// Script interpreted by the job wrapper: stage-ins, one execute block,
/// stage-outs, report.
struct WrapperScript {
    std::vector<WrapperCommand> commands;
    friend bool operator==(const WrapperScript&, const WrapperScript&) = default;
};

class MalformedTask : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

WrapperScript build_wrapper(const DispatchOrder& order);

/// One command per line: `stage_in "src" "dst"`, `execute "cmd"`,
/// `stage_out "src" "dst"`, `report`.
std::string print_wrapper(const WrapperScript& script);
WrapperScript parse_wrapper(std::string_view text);

/// Checks the stage_in* execute+ stage_out* report shape.
bool well_formed(const WrapperScript& script);

const char* to_string(WrapperCommand::Verb v);

}  // namespace gridfarm::dispatcher
