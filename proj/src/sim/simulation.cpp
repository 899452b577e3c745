#include "gridfarm/sim/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "gridfarm/core/rng.hpp"
#include "gridfarm/economy/cost_schedule.hpp"

namespace gridfarm::sim {

using json = nlohmann::json;
using dispatcher::StatusUpdate;

const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::job_start: return "job_start";
        case EventKind::job_finish: return "job_finish";
        case EventKind::load_step: return "load_step";
        case EventKind::resource_down: return "resource_down";
        case EventKind::resource_up: return "resource_up";
        case EventKind::schedule_tick: return "schedule_tick";
        case EventKind::cost_boundary: return "cost_boundary";
    }
    return "unknown";
}

Simulation::Simulation(fabric::FabricConfig config, std::uint64_t seed, SimOptions options)
    : fabric_(std::move(config), seed), seed_(seed), options_(options), dispatcher_(*this) {
    fifo_.resize(fabric_.size());
    running_.assign(fabric_.size(), 0);
    std::set<double> bounds;
    for (std::size_t i = 0; i < fabric_.size(); ++i) {
        for (double b : fabric_.resource(i).schedule->boundaries()) bounds.insert(b);
    }
    boundaries_.assign(bounds.begin(), bounds.end());
}

void Simulation::push(SimTime t, EventKind kind, std::size_t resource, std::uint64_t job, int attempt) {
    queue_.push(SimEvent{t, next_ordinal_++, kind, resource, job, attempt});
}

void Simulation::attach(engine::Engine& engine, SimTime now) {
    engine_ = &engine;
    expected_job_hours_ = engine.plan().expected_job_hours;
    payload_mb_ = engine.plan().payload_mb;
    engine.bind(&dispatcher_, &fabric_);
    now_ = now;
    fabric_.set_now(now);
    for (std::size_t i = 0; i < fabric_.size(); ++i) {
        auto& timeline = fabric_.outages(i);
        bool up = timeline.up_at(now);
        fabric_.set_up(i, up);
        SimTime change = timeline.next_change(now);
        if (std::isfinite(change.count())) push(change, up ? EventKind::resource_down : EventKind::resource_up, i);
    }
    push(now, EventKind::schedule_tick);
    double step = fabric_.config().load_step.count();
    push(SimTime((std::floor(now.count() / step) + 1) * step), EventKind::load_step);
    if (!boundaries_.empty()) {
        push(economy::next_boundary(boundaries_, now, fabric_.config().origin_time_of_day), EventKind::cost_boundary);
    }
}

void Simulation::emit(json line) {
    std::string text = line.dump();
    if (trace_out_) *trace_out_ << text << '\n';
    trace_.push_back(std::move(text));
}

RunResult Simulation::run_until(RunCondition condition) {
    RunResult result;
    auto terminal = [&] { return engine_ && engine::is_terminal(engine_->phase()); };
    auto finish_terminal = [&] {
        if (!terminal_traced_) {
            terminal_traced_ = true;
            auto snap = engine_->snapshot();
            emit({{"t", now_.count()},
                  {"kind", std::string("experiment_") + engine::to_string(snap.phase)},
                  {"reason", snap.phase_reason},
                  {"committed", snap.committed.to_string()}});
        }
        result.status = RunResult::Status::terminal;
        result.now = now_;
        return result;
    };
    for (;;) {
        if (terminal()) return finish_terminal();
        if (queue_.empty()) {
            result.status = RunResult::Status::stalled;
            result.diagnostic = "event queue exhausted";
            result.now = now_;
            return result;
        }
        SimEvent e = queue_.top();
        if (condition.until && e.time > *condition.until) {
            now_ = std::max(now_, *condition.until);
            result.status = RunResult::Status::reached_time;
            result.now = now_;
            return result;
        }
        if (e.time > options_.horizon) {
            result.status = RunResult::Status::stalled;
            result.diagnostic = "simulation horizon passed without a terminal phase";
            result.now = now_;
            return result;
        }
        queue_.pop();
        now_ = e.time;
        fabric_.set_now(now_);
        process(e);
    }
}

void Simulation::process(const SimEvent& e) {
    json line{{"t", e.time.count()}, {"ord", e.ordinal}, {"kind", to_string(e.kind)}};
    using scheduler::ReplanEvent;
    switch (e.kind) {
        case EventKind::schedule_tick:
            emit(line);
            if (engine_) engine_->step(now_, ReplanEvent::tick);
            push(now_ + options_.tick, EventKind::schedule_tick);
            return;
        case EventKind::load_step:
            emit(line);
            push(now_ + fabric_.config().load_step, EventKind::load_step);
            return;
        case EventKind::cost_boundary:
            emit(line);
            if (engine_) engine_->step(now_, ReplanEvent::cost_boundary);
            push(economy::next_boundary(boundaries_, now_, fabric_.config().origin_time_of_day),
                 EventKind::cost_boundary);
            return;
        case EventKind::resource_down: {
            line["resource"] = fabric_.resource(e.resource).id;
            emit(line);
            fabric_.set_up(e.resource, false);
            crash(e.resource);
            SimTime up = fabric_.outages(e.resource).next_change(now_);
            if (std::isfinite(up.count())) push(up, EventKind::resource_up, e.resource);
            if (engine_) engine_->step(now_, ReplanEvent::resource_down);
            return;
        }
        case EventKind::resource_up: {
            line["resource"] = fabric_.resource(e.resource).id;
            emit(line);
            fabric_.set_up(e.resource, true);
            SimTime down = fabric_.outages(e.resource).next_change(now_);
            if (std::isfinite(down.count())) push(down, EventKind::resource_down, e.resource);
            if (engine_) engine_->step(now_, ReplanEvent::resource_up);
            return;
        }
        case EventKind::job_start: {
            Key key{e.job, e.attempt};
            auto it = attempts_.find(key);
            if (it == attempts_.end() || it->second.started) return;  // cancelled while waiting
            auto& a = it->second;
            const auto& res = fabric_.resource(e.resource);
            double load = fabric_.load(e.resource);
            int ahead = res.queue_type == scheduler::QueueType::batch ? res.background_queue : 0;
            auto d = fabric::job_duration(res, expected_job_hours_, load, ahead, payload_mb_);
            a.started = true;
            a.start = now_;
            a.finish = now_ + from_hours(d.wall_hours);
            a.cpu_hours = d.cpu_hours;
            line["resource"] = res.id;
            line["job"] = e.job;
            line["attempt"] = e.attempt;
            line["load"] = load;
            line["wall_hours"] = d.wall_hours;
            emit(line);
            push(a.finish, EventKind::job_finish, e.resource, e.job, e.attempt);
            deliver({e.job, e.attempt, StatusUpdate::Phase::staging_in, 0.0, now_, ""});
            deliver({e.job, e.attempt, StatusUpdate::Phase::started, 0.0, now_, ""});
            return;
        }
        case EventKind::job_finish: {
            Key key{e.job, e.attempt};
            auto it = attempts_.find(key);
            if (it == attempts_.end() || !it->second.started || it->second.finish != now_) return;  // stale
            Attempt a = it->second;
            attempts_.erase(it);
            --running_[a.resource];
            const auto& res = fabric_.resource(a.resource);
            bool failed = keyed_uniform(seed_, res.id, "failure", e.job, static_cast<std::uint64_t>(e.attempt)) <
                          res.failure_rate;
            line["resource"] = res.id;
            line["job"] = e.job;
            line["attempt"] = e.attempt;
            line["outcome"] = failed ? "failed" : "completed";
            emit(line);
            if (failed) {
                deliver({e.job, e.attempt, StatusUpdate::Phase::failed, a.cpu_hours, now_, "execution error"});
            } else {
                deliver({e.job, e.attempt, StatusUpdate::Phase::staged_out, a.cpu_hours, now_, ""});
                deliver({e.job, e.attempt, StatusUpdate::Phase::completed, a.cpu_hours, now_, ""});
            }
            schedule_starts(a.resource);
            return;
        }
    }
}

void Simulation::deliver(const StatusUpdate& u) {
    if (engine_) engine_->on_status(u, now_);
}

void Simulation::schedule_starts(std::size_t i) {
    const int slots = fabric_.resource(i).slots;
    while (running_[i] < slots && !fifo_[i].empty()) {
        Key key = fifo_[i].front();
        fifo_[i].pop_front();
        ++running_[i];
        push(now_, EventKind::job_start, i, key.first, key.second);
    }
}

void Simulation::crash(std::size_t i) {
    std::vector<std::pair<Key, double>> lost;
    for (auto it = attempts_.begin(); it != attempts_.end();) {
        if (it->second.resource == i) {
            const auto& a = it->second;
            double cpu = 0.0;
            if (a.started && a.finish > a.start) {
                cpu = a.cpu_hours * (now_ - a.start).count() / (a.finish - a.start).count();
            }
            lost.emplace_back(it->first, cpu);
            it = attempts_.erase(it);
        } else {
            ++it;
        }
    }
    fifo_[i].clear();
    running_[i] = 0;
    for (const auto& [key, cpu] : lost) {
        deliver({key.first, key.second, StatusUpdate::Phase::failed, cpu, now_, "resource crashed"});
    }
}

std::optional<std::string> Simulation::submit(const dispatcher::DispatchOrder& order,
                                              const dispatcher::WrapperScript& script, SimTime) {
    if (!dispatcher::well_formed(script)) return "wrapper script is malformed";
    std::size_t i = fabric_.index_of(order.resource);
    if (i >= fabric_.size()) return "unknown resource " + order.resource;
    if (!fabric_.is_up(i)) return "resource " + order.resource + " is down";
    Key key{order.job, order.attempt};
    if (attempts_.count(key)) return "attempt already submitted";
    attempts_[key] = Attempt{i};
    fifo_[i].push_back(key);
    schedule_starts(i);
    return std::nullopt;
}

void Simulation::cancel(std::uint64_t job, int attempt) {
    Key key{job, attempt};
    auto it = attempts_.find(key);
    if (it == attempts_.end()) return;
    std::size_t i = it->second.resource;
    auto q = std::find(fifo_[i].begin(), fifo_[i].end(), key);
    if (q != fifo_[i].end()) {
        fifo_[i].erase(q);
    } else {
        --running_[i];  // started, or its start event is pending
    }
    attempts_.erase(it);
    schedule_starts(i);
}

Session::Session(SessionSetup setup, engine::ExperimentSpec spec, std::unique_ptr<engine::JournalSink> sink) {
    spec.origin_time_of_day = setup.fabric.origin_time_of_day;
    SimTime t0 = spec.created_at;
    sim_ = std::make_unique<Simulation>(std::move(setup.fabric), setup.seed, setup.options);
    engine_ = std::make_unique<engine::Engine>(std::move(spec), std::move(sink));
    sim_->attach(*engine_, t0);
}

std::unique_ptr<Session> Session::recover(SessionSetup setup, const engine::JournalContents& contents,
                                          std::unique_ptr<engine::JournalSink> sink, std::optional<SimTime> now,
                                          engine::RecoveryReport* report) {
    std::unique_ptr<Session> s(new Session());
    SimTime t = contents.records.empty() ? SimTime(0.0) : SimTime(contents.records.back().t_sim);
    if (now && *now > t) t = *now;
    s->sim_ = std::make_unique<Simulation>(std::move(setup.fabric), setup.seed, setup.options);
    s->engine_ = engine::Engine::recover(contents, std::move(sink), t, report);
    s->sim_->attach(*s->engine_, t);
    return s;
}

void Session::start(const std::string& client) {
    engine_->act(engine::Engine::Action::start, sim_->now(), client);
}

}  // namespace gridfarm::sim
