#include "gridfarm/dispatcher/dispatcher.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace gridfarm::dispatcher {
namespace fs = std::filesystem;
using Phase = StatusUpdate::Phase;

const char* to_string(Phase p) {
    switch (p) {
        case Phase::staging_in: return "staging_in";
        case Phase::started: return "started";
        case Phase::progress: return "progress";
        case Phase::staged_out: return "staged_out";
        case Phase::completed: return "completed";
        case Phase::failed: return "failed";
    }
    return "?";
}

namespace {

int phase_rank(Phase p) {
    switch (p) {
        case Phase::staging_in: return 1;
        case Phase::started: return 2;
        case Phase::progress: return 2;
        case Phase::staged_out: return 3;
        case Phase::completed: return 4;
        case Phase::failed: return 4;
    }
    return 0;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

void Dispatcher::materialize_substitutions(const DispatchOrder& order) {
    for (const auto& step : order.task.steps) {
        const auto* sub = std::get_if<plan::Substitute>(&step);
        if (!sub) continue;
        fs::path out = *home_ / order.staging_dir / sub->output;
        fs::create_directories(out.parent_path());
        std::string text = plan::substitute_placeholders(read_file(*home_ / sub->template_name), order.binding);
        std::ofstream(out, std::ios::binary) << text;
    }
}

Dispatcher::Outcome Dispatcher::dispatch(const DispatchOrder& order, SimTime now) {
    Outcome out;
    out.script = build_wrapper(order);
    if (home_) {
        try {
            materialize_substitutions(order);
        } catch (const std::exception& e) {
            out.reason = std::string("substitution failed: ") + e.what();
            return out;
        }
    }
    if (auto refused = backend_.submit(order, out.script, now)) {
        out.reason = *refused;
        return out;
    }
    phases_[{order.job, order.attempt}] = 0;
    out.accepted = true;
    return out;
}

JobSignal Dispatcher::handle_status(const StatusUpdate& u) {
    JobSignal sig{JobSignal::Kind::none, u.job, u.attempt, u.cpu_hours, u.message};
    auto it = phases_.find({u.job, u.attempt});
    if (it == phases_.end()) {
        sig.kind = JobSignal::Kind::anomaly;
        sig.message = std::string("status '") + to_string(u.phase) + "' for unknown attempt";
        return sig;
    }
    int r = phase_rank(u.phase);
    bool repeatable = u.phase == Phase::progress;
    if (r < it->second || (r == it->second && !repeatable && u.phase != Phase::failed)) {
        sig.kind = JobSignal::Kind::anomaly;
        sig.message = std::string("out-of-order status '") + to_string(u.phase) + "'";
        return sig;
    }
    it->second = r;
    switch (u.phase) {
        case Phase::staging_in:
        case Phase::progress: break;
        case Phase::started: sig.kind = JobSignal::Kind::started; break;
        case Phase::staged_out: sig.kind = JobSignal::Kind::staged_out; break;
        case Phase::completed:
            sig.kind = JobSignal::Kind::completed;
            phases_.erase(it);
            break;
        case Phase::failed:
            sig.kind = JobSignal::Kind::failed;
            phases_.erase(it);
            break;
    }
    return sig;
}

void Dispatcher::cancel(std::uint64_t job, int attempt) {
    phases_.erase({job, attempt});
    backend_.cancel(job, attempt);
}

std::optional<std::string> LocalProcessBackend::submit(const DispatchOrder& order, const WrapperScript& script,
                                                       SimTime now) {
    fs::path dir = scratch_ / ("job" + std::to_string(order.job) + "_" + std::to_string(order.attempt));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) return "cannot create scratch directory: " + ec.message();
    auto started = std::chrono::steady_clock::now();
    auto update = [&](Phase p, std::string msg = {}) {
        double hours = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() / 3600.0;
        pending_.push_back({order.job, order.attempt, p, hours, now, std::move(msg)});
    };
    using Verb = WrapperCommand::Verb;
    bool announced = false;
    for (const auto& c : script.commands) {
        try {
            switch (c.verb) {
                case Verb::stage_in:
                    if (pending_.empty() || pending_.back().phase != Phase::staging_in) update(Phase::staging_in);
                    fs::copy_file(home_ / c.arg, dir / c.arg2, fs::copy_options::overwrite_existing);
                    break;
                case Verb::execute: {
                    if (!announced) {
                        update(Phase::started);
                        announced = true;
                    }
                    std::string cmd = "cd '" + dir.string() + "' && ( " + c.arg + " ) >> wrapper.log 2>&1";
                    int rc = std::system(cmd.c_str());
                    if (rc != 0) {
                        update(Phase::failed, "execution error: exit status " + std::to_string(rc));
                        return std::nullopt;
                    }
                    break;
                }
                case Verb::stage_out: {
                    fs::path dest = home_ / c.arg2;
                    if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
                    fs::copy_file(dir / c.arg, dest, fs::copy_options::overwrite_existing);
                    break;
                }
                case Verb::report:
                    update(Phase::staged_out);
                    update(Phase::completed);
                    break;
            }
        } catch (const fs::filesystem_error& e) {
            update(Phase::failed, std::string("staging error: ") + e.what());
            return std::nullopt;
        }
    }
    return std::nullopt;
}

void LocalProcessBackend::cancel(std::uint64_t job, int attempt) {
    std::erase_if(pending_, [&](const StatusUpdate& u) { return u.job == job && u.attempt == attempt; });
}

std::vector<StatusUpdate> LocalProcessBackend::poll() {
    return std::exchange(pending_, {});
}

}  // namespace gridfarm::dispatcher
