#include "gridfarm/engine/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "gridfarm/economy/cost_schedule.hpp"

namespace gridfarm::engine {
namespace {

using scheduler::ReplanEvent;

json selection_to_json(const scheduler::Selection& s) {
    return json{{"id", s.id},
                {"quota", s.quota},
                {"allotment", s.allotment ? json(*s.allotment) : json(nullptr)},
                {"jobs_per_hour", s.jobs_per_hour},
                {"per_job_cost", s.per_job_cost.cents()}};
}

scheduler::Selection selection_from_json(const json& j) {
    scheduler::Selection s;
    s.id = j.at("id").get<std::string>();
    s.quota = j.at("quota").get<int>();
    if (!j.at("allotment").is_null()) s.allotment = j.at("allotment").get<std::uint64_t>();
    s.jobs_per_hour = j.at("jobs_per_hour").get<double>();
    s.per_job_cost = Money::from_cents(j.at("per_job_cost").get<std::int64_t>());
    return s;
}

}  // namespace

const char* to_string(Engine::Action a) {
    switch (a) {
        case Engine::Action::start: return "start";
        case Engine::Action::pause: return "pause";
        case Engine::Action::resume: return "resume";
        case Engine::Action::abort: return "abort";
    }
    return "unknown";
}

std::optional<Engine::Action> action_from_string(std::string_view s) {
    if (s == "start") return Engine::Action::start;
    if (s == "pause") return Engine::Action::pause;
    if (s == "resume") return Engine::Action::resume;
    if (s == "abort") return Engine::Action::abort;
    return std::nullopt;
}

void validate(const Constraints& c, SimTime now) {
    if (c.budget <= Money{}) throw InvalidConstraints("budget must be positive");
    if (!std::isfinite(c.deadline.count())) throw InvalidConstraints("deadline must be finite");
    if (c.deadline <= now) throw InvalidConstraints("deadline must be positive and not already past");
    if (c.user_id.empty()) throw InvalidConstraints("user id must not be empty");
}

Engine::Engine(ExperimentSpec spec, std::unique_ptr<JournalSink> sink) : sink_(std::move(sink)) {
    validate(spec.constraints, spec.created_at);
    if (spec.id.empty()) throw InvalidConstraints("experiment id must not be empty");
    // Fail on the cap before anything is journaled.
    plan::job_count(spec.plan, spec.config.max_jobs);
    json payload{{"id", spec.id},
                 {"plan", plan::print_plan(spec.plan)},
                 {"deadline", spec.constraints.deadline.count()},
                 {"budget", spec.constraints.budget.cents()},
                 {"user", spec.constraints.user_id},
                 {"config", spec.config.to_json()},
                 {"created_at", spec.created_at.count()},
                 {"origin", spec.origin_time_of_day},
                 {"phase", to_string(spec.negotiate ? Phase::negotiating : Phase::ready)},
                 {"jobs", plan::job_count(spec.plan, spec.config.max_jobs)}};
    commit("experiment_created", std::move(payload), spec.created_at);
}

Engine::Engine(Restore, const JournalRecord& created, std::unique_ptr<JournalSink> sink) : sink_(std::move(sink)) {
    replaying_ = true;
    apply(created);
}

std::unique_ptr<Engine> Engine::recover(const JournalContents& contents, std::unique_ptr<JournalSink> sink,
                                        SimTime now, RecoveryReport* report) {
    if (contents.records.empty() || contents.records.front().kind != "experiment_created") {
        throw RecoveryError("no experiment-created record");
    }
    std::unique_ptr<Engine> e(new Engine(Restore{}, contents.records.front(), nullptr));
    e->lines_.push_back(contents.lines.empty() ? encode_record(contents.records[0]) : contents.lines[0]);
    for (std::size_t i = 1; i < contents.records.size(); ++i) {
        e->apply(contents.records[i]);
        e->lines_.push_back(contents.lines.size() > i ? contents.lines[i] : encode_record(contents.records[i]));
    }
    e->replaying_ = false;
    e->sink_ = std::move(sink);

    RecoveryReport rep;
    rep.last_seq = e->last_seq_;
    rep.torn_tail = contents.torn_tail;
    rep.truncated_at_line = contents.corrupt_line;
    rep.detail = contents.error;
    for (const auto& j : e->jobs_) {
        if (is_in_flight(j.state)) rep.requeued.push_back(j.spec.id.ordinal);
    }
    json payload{{"requeued", rep.requeued}, {"from_seq", rep.last_seq}, {"torn_tail", rep.torn_tail}};
    if (rep.truncated_at_line) payload["truncated_at_line"] = *rep.truncated_at_line;
    e->commit("recovered", std::move(payload), SimTime(std::max(now.count(), e->clock_)));
    if (report) *report = rep;
    return e;
}

void Engine::bind(dispatcher::Dispatcher* dispatcher, const scheduler::ResourceDirectory* directory) {
    dispatcher_ = dispatcher;
    directory_ = directory;
}

Phase Engine::phase() const {
    std::lock_guard lk(mu_);
    return phase_;
}

Constraints Engine::constraints() const {
    std::lock_guard lk(mu_);
    return constraints_;
}

// ---------------------------------------------------------------- journal

void Engine::commit(const std::string& kind, json payload, SimTime now) {
    JournalRecord r{last_seq_ + 1, std::max(now.count(), clock_), kind, std::move(payload)};
    std::string line = encode_record(r);
    if (sink_) sink_->append(line);
    {
        std::lock_guard lk(mu_);
        apply(r);
        lines_.push_back(std::move(line));
    }
    cv_.notify_all();
    for (const auto& l : listeners_) l(r);
}

void Engine::apply(const JournalRecord& r) {
    last_seq_ = r.seq;
    clock_ = std::max(clock_, r.t_sim);
    const json& p = r.payload;
    if (r.kind == "experiment_created") {
        apply_created(p);
    } else if (r.kind == "job") {
        apply_job(r);
    } else if (r.kind == "phase") {
        apply_phase(p, r.t_sim);
    } else if (r.kind == "replan") {
        apply_replan(p);
    } else if (r.kind == "steer") {
        if (p.contains("deadline")) constraints_.deadline = SimTime(p.at("deadline").get<double>());
        if (p.contains("budget")) {
            constraints_.budget = Money::from_cents(p.at("budget").get<std::int64_t>());
            ledger_.set_budget(constraints_.budget);
        }
        replan_reason_ = p.at("reason").get<std::string>();
    } else if (r.kind == "tender") {
        for (const auto& a : p.at("accepted")) {
            tendered_[a.at("resource").get<std::string>()] = {Money::from_cents(a.at("rate").get<std::int64_t>()),
                                                              a.at("valid_until").get<double>()};
        }
        replan_reason_ = "tender accepted";
    } else if (r.kind == "recovered") {
        for (const auto& id : p.at("requeued")) {
            auto& job = jobs_.at(id.get<std::uint64_t>());
            if (job.resource) --resources_[*job.resource].in_flight;
            ledger_.release(job.spec.id.ordinal);
            ++job.attempt;
            job.resource.reset();
            set_state(job, JobState::waiting, r.t_sim);
        }
        // The fabric's handles are gone; backlogs start from now.
        for (auto& [id, rs] : resources_) {
            rs.in_flight = 0;
            rs.jobs.clear();
            rs.free_at = r.t_sim;
        }
        decision_ = {};
        replan_reason_ = "recovered";
    }
    // "anomaly" records carry no state.
}

void Engine::apply_created(const json& p) {
    id_ = p.at("id").get<std::string>();
    auto parsed = plan::parse_plan(p.at("plan").get<std::string>());
    if (!parsed.ok()) throw RecoveryError("journaled plan does not parse");
    plan_ = *parsed.plan;
    config_ = EngineConfig::from_json(p.at("config"));
    created_at_ = SimTime(p.at("created_at").get<double>());
    origin_ = p.at("origin").get<double>();
    constraints_.deadline = SimTime(p.at("deadline").get<double>());
    constraints_.budget = Money::from_cents(p.at("budget").get<std::int64_t>());
    constraints_.user_id = p.at("user").get<std::string>();
    ledger_ = economy::BudgetLedger(constraints_.budget, config_.enforce_budget);
    phase_ = *phase_from_string(p.at("phase").get<std::string>());
    auto specs = plan::expand_jobs(plan_, id_, {config_.max_jobs});
    jobs_.clear();
    jobs_.reserve(specs.size());
    for (auto& s : specs) {
        JobRecord j;
        j.spec = std::move(s);
        j.timestamps[JobState::waiting] = created_at_.count();
        waiting_.insert(j.spec.id.ordinal);
        jobs_.push_back(std::move(j));
    }
    counts_.fill(0);
    counts_[static_cast<std::size_t>(JobState::waiting)] = jobs_.size();
    clock_ = created_at_.count();
}

void Engine::set_state(JobRecord& job, JobState to, double t) {
    --counts_[static_cast<std::size_t>(job.state)];
    ++counts_[static_cast<std::size_t>(to)];
    if (job.state == JobState::waiting) waiting_.erase(job.spec.id.ordinal);
    if (to == JobState::waiting) waiting_.insert(job.spec.id.ordinal);
    job.state = to;
    job.timestamps[to] = t;
}

void Engine::apply_job(const JournalRecord& r) {
    const json& p = r.payload;
    auto& job = jobs_.at(p.at("job").get<std::uint64_t>());
    auto event = *job_event_from_string(p.at("event").get<std::string>());
    auto to = next_state(job.state, event);
    if (!to) throw JournalError("journal replays an illegal transition at seq " + std::to_string(r.seq));
    std::uint64_t id = job.spec.id.ordinal;
    double t = r.t_sim;

    auto leave_resource = [&] {
        if (!job.resource) return;
        auto& rs = resources_[*job.resource];
        --rs.in_flight;
        rs.jobs.erase(id);
        double r_est = rs.rate.jobs_per_hour > 0 ? rs.rate.jobs_per_hour : 1.0;
        rs.free_at = t + rs.in_flight * 3600.0 / r_est;
    };
    auto take_charge = [&](const json& c) {
        double cpu = c.at("cpu_hours").get<double>();
        Money rate = Money::from_cents(c.at("rate").get<std::int64_t>());
        Money amount = Money::from_cents(c.at("amount").get<std::int64_t>());
        ledger_.charge_amount(id, *job.resource, cpu, rate, amount, r.seq, t, job.attempt);
        job.cost_incurred += amount;
    };

    switch (event) {
        case JobEvent::dispatch: {
            job.resource = p.at("resource").get<std::string>();
            job.pinned_rate = Money::from_cents(p.at("rate").get<std::int64_t>());
            job.expected_cpu_hours = p.at("cpu_hours").get<double>();
            job.dispatched_at = SimTime(t);
            job.finalized = false;
            ledger_.reserve(id, Money::from_cents(p.at("reservation").get<std::int64_t>()));
            auto& rs = resources_[*job.resource];
            double r_used = p.at("jobs_per_hour").get<double>();
            if (!rs.has_rate) rs.rate.jobs_per_hour = r_used;
            job.expected_hours = 1.0 / r_used;
            ++rs.in_flight;
            rs.jobs.insert(id);
            rs.free_at = std::max(t, rs.free_at) + 3600.0 / r_used;
            for (auto& s : decision_.selected) {
                if (s.id == *job.resource && s.allotment && *s.allotment > 0) --*s.allotment;
            }
            break;
        }
        case JobEvent::complete: {
            auto& rs = resources_[*job.resource];
            if (p.contains("charge")) take_charge(p.at("charge"));
            else ledger_.release(id);
            rs.rate.resource_id = *job.resource;
            rs.rate.jobs_per_hour = p.at("rate_after").get<double>();
            rs.rate.samples = p.at("samples").get<int>();
            rs.rate.last_update = SimTime(t);
            rs.has_rate = true;
            rs.last_completion = t;
            if (p.contains("observed") && job.expected_cpu_hours > 0) {
                double hours = 1.0 / p.at("observed").get<double>();
                slowdown_sum_ += hours / job.expected_cpu_hours;
                ++slowdown_count_;
                note_error(hours, job.expected_hours);
            }
            leave_resource();
            job.finalized = true;
            ++completions_since_replan_;
            break;
        }
        case JobEvent::fail: {
            ledger_.release(id);
            if (p.contains("charge")) take_charge(p.at("charge"));
            if (p.contains("rate_after") && job.resource) {
                auto& rs = resources_[*job.resource];
                rs.rate.resource_id = *job.resource;
                rs.rate.jobs_per_hour = p.at("rate_after").get<double>();
                rs.rate.samples = p.at("samples").get<int>();
                rs.rate.last_update = SimTime(t);
                rs.has_rate = true;
            }
            leave_resource();
            ++job.attempt;
            if (p.value("counted", true)) ++job.failures;
            if (p.contains("ran_hours")) note_error(p.at("ran_hours").get<double>(), job.expected_hours);
            job.finalized = p.value("final", false);
            break;
        }
        case JobEvent::abort: {
            ledger_.release(id);
            if (is_in_flight(job.state)) leave_resource();
            job.finalized = true;
            break;
        }
        case JobEvent::retry:
            job.resource.reset();
            break;
        case JobEvent::requeue:
            ledger_.release(id);
            leave_resource();
            ++job.attempt;
            job.resource.reset();
            break;
        default:
            break;
    }
    set_state(job, *to, t);
}

void Engine::apply_phase(const json& p, double t) {
    phase_ = *phase_from_string(p.at("to").get<std::string>());
    phase_reason_ = p.value("reason", std::string());
    if (p.contains("aborted")) {
        for (const auto& id : p.at("aborted")) {
            auto& job = jobs_.at(id.get<std::uint64_t>());
            ledger_.release(job.spec.id.ordinal);
            if (is_in_flight(job.state) && job.resource) {
                --resources_[*job.resource].in_flight;
                resources_[*job.resource].jobs.erase(job.spec.id.ordinal);
            }
            job.finalized = true;
            set_state(job, JobState::aborted, t);
        }
    }
}

void Engine::apply_replan(const json& p) {
    decision_ = {};
    for (const auto& s : p.at("selected")) decision_.selected.push_back(selection_from_json(s));
    decision_.projected_finish = Seconds(p.at("projected_finish").get<double>());
    decision_.projected_cost = Money::from_cents(p.at("projected_cost").get<std::int64_t>());
    decision_.feasible_deadline = p.at("feasible_deadline").get<bool>();
    decision_.feasible_budget = p.at("feasible_budget").get<bool>();
    completions_since_replan_ = 0;
    replan_reason_.reset();
}

// ---------------------------------------------------------------- commands

void Engine::act(Action action, SimTime now, const std::string& client) {
    auto refuse = [&] {
        throw IllegalState(std::string("cannot ") + to_string(action) + " an experiment in phase " +
                           to_string(phase_));
    };
    json payload{{"client", client}};
    switch (action) {
        case Action::start:
            if (phase_ != Phase::negotiating && phase_ != Phase::ready && phase_ != Phase::paused) refuse();
            payload["to"] = to_string(Phase::running);
            payload["reason"] = phase_ == Phase::paused ? "resumed" : "started";
            commit("phase", std::move(payload), now);
            break;
        case Action::resume:
            if (phase_ != Phase::paused) refuse();
            payload["to"] = to_string(Phase::running);
            payload["reason"] = "resumed";
            commit("phase", std::move(payload), now);
            break;
        case Action::pause:
            if (phase_ != Phase::running) refuse();
            payload["to"] = to_string(Phase::paused);
            payload["reason"] = "paused";
            commit("phase", std::move(payload), now);
            break;
        case Action::abort:
            if (is_terminal(phase_)) refuse();
            halt(Phase::aborted, client.empty() ? "aborted" : "aborted by " + client, now);
            break;
    }
}

void Engine::steer(std::optional<SimTime> deadline, std::optional<Money> budget, SimTime now,
                   const std::string& client) {
    if (is_terminal(phase_)) {
        throw IllegalState(std::string("cannot steer an experiment in phase ") + to_string(phase_));
    }
    if (!deadline && !budget) throw InvalidConstraints("nothing to change: give a deadline and/or a budget");
    Constraints c = constraints_;
    if (deadline) c.deadline = *deadline;
    if (budget) c.budget = *budget;
    validate(c, now);
    json payload{{"client", client}};
    if (deadline) payload["deadline"] = deadline->count();
    if (budget) payload["budget"] = budget->cents();
    payload["reason"] = deadline && budget ? "deadline and budget changed" : deadline ? "deadline changed" : "budget changed";
    commit("steer", std::move(payload), now);
}

void Engine::accept_tender(const economy::TenderResult& result, SimTime now) {
    json accepted = json::array();
    for (const auto& a : result.accepted) {
        accepted.push_back({{"resource", a.bid.resource_id},
                            {"rate", a.bid.rate.cents()},
                            {"slots", a.slots},
                            {"valid_from", a.bid.valid_from.count()},
                            {"valid_until", a.bid.valid_until.count()}});
    }
    commit("tender", {{"accepted", accepted}, {"partial", result.partial}}, now);
}

void Engine::apply_transition(std::uint64_t ordinal, JobEvent event, SimTime now, const json& detail) {
    if (ordinal >= jobs_.size()) throw IllegalState("no job " + std::to_string(ordinal));
    auto& job = jobs_[ordinal];
    if (!next_state(job.state, event) || (event == JobEvent::retry && job.failures >= config_.retry_cap)) {
        std::string msg = std::string("illegal transition: ") + to_string(event) + " from " + to_string(job.state);
        commit("anomaly", {{"job", ordinal}, {"message", msg}}, now);
        throw IllegalState(msg);
    }
    json p = detail;
    p["job"] = ordinal;
    p["event"] = to_string(event);
    p["attempt"] = job.attempt;
    if (event == JobEvent::dispatch) {
        if (!p.contains("resource")) throw IllegalState("dispatch needs a resource");
        if (!p.contains("rate")) p["rate"] = 0;
        if (!p.contains("cpu_hours")) p["cpu_hours"] = plan_.expected_job_hours;
        if (!p.contains("reservation")) {
            p["reservation"] = cost_of(p["cpu_hours"].get<double>(), Money::from_cents(p["rate"].get<std::int64_t>())).cents();
        }
        if (!p.contains("jobs_per_hour")) p["jobs_per_hour"] = reference_rate();
    } else if (event == JobEvent::complete) {
        double cpu = p.value("cpu_hours", job.expected_cpu_hours);
        Money amount = p.contains("amount") ? Money::from_cents(p["amount"].get<std::int64_t>())
                                            : cost_of(cpu, job.pinned_rate);
        if (!ledger_.can_charge(ordinal, amount, job.attempt)) {
            commit("anomaly", {{"job", ordinal}, {"message", "charge refused: over budget"}}, now);
            throw IllegalState("charge refused: over budget");
        }
        p["charge"] = {{"cpu_hours", cpu}, {"rate", job.pinned_rate.cents()}, {"amount", amount.cents()}};
        p.erase("amount");
        if (!p.contains("rate_after")) p["rate_after"] = resources_[*job.resource].rate.jobs_per_hour > 0
                                                              ? resources_[*job.resource].rate.jobs_per_hour
                                                              : reference_rate();
        if (!p.contains("samples")) p["samples"] = resources_[*job.resource].rate.samples;
    } else if (event == JobEvent::fail) {
        p["final"] = p.value("counted", true) && job.failures + 1 >= config_.retry_cap;
    }
    commit("job", std::move(p), now);
}

// ---------------------------------------------------------------- scheduling

Money Engine::rate_for(const scheduler::ResourceView& view, SimTime now) const {
    auto it = tendered_.find(view.id);
    if (it != tendered_.end() && now.count() < it->second.second) return it->second.first;
    return economy::cost_at(*view.schedule, constraints_.user_id, economy::time_of_day(now, origin_));
}

double Engine::rate_estimate(const scheduler::ResourceView& view) const {
    auto it = resources_.find(view.id);
    if (it != resources_.end() && it->second.has_rate) return it->second.rate.jobs_per_hour;
    return scheduler::initial_rate(view, prior_rate());
}

std::vector<scheduler::Candidate> Engine::candidates(SimTime now,
                                                     const std::vector<scheduler::ResourceView>& views) const {
    std::vector<scheduler::Candidate> out;
    for (const auto& v : views) {
        if (!v.authorized || v.status != scheduler::ResourceStatus::up) continue;
        scheduler::Candidate c;
        c.id = v.id;
        c.jobs_per_hour = rate_estimate(v);
        c.per_job_cost = cost_of(plan_.expected_job_hours / v.capability, rate_for(v, now));
        auto it = resources_.find(v.id);
        if (it != resources_.end()) {
            const auto& rs = it->second;
            c.busy_hours = std::max(0.0, rs.free_at - now.count()) / 3600.0;
            // An attempt past its expected duration is assumed to need as
            // long again as it has already run.
            double overdue = 0.0;
            for (auto j : rs.jobs) {
                const auto& job = jobs_[j];
                if (job.state != JobState::running) continue;
                double ran = (now.count() - job.timestamps.at(JobState::running)) / 3600.0;
                if (ran > job.expected_hours * (1.0 + 1e-9)) overdue = std::max(overdue, ran);
            }
            if (overdue > 0) c.busy_hours = std::max(c.busy_hours, overdue + (rs.in_flight - 1) / c.jobs_per_hour);
        }
        out.push_back(std::move(c));
    }
    return out;
}

double Engine::margin() const {
    if (error_count_ == 0) return 0.0;
    double rms = std::sqrt(error_sq_sum_ / error_count_);
    return rms < 1e-6 ? 0.0 : std::min(config_.deadline_margin, config_.margin_error_gain * rms);
}

Seconds Engine::horizon(SimTime now) const {
    return Seconds(std::max(0.0, (constraints_.deadline - now).count() * (1.0 - margin())));
}

economy::Quote Engine::quote(SimTime now) const {
    if (!directory_) {
        economy::Quote q;
        q.reason = "no resource directory bound";
        return q;
    }
    auto views = scheduler::discover(*directory_, constraints_.user_id);
    auto cands = candidates(now, views);
    Seconds t_rem = horizon(now);
    auto q = economy::quote(waiting_.size(), t_rem, ledger_.available(), cands, config_.select);
    q.projected_finish += now;
    return q;
}

std::optional<SimTime> Engine::eta(SimTime now) const {
    std::uint64_t remaining = counts_[static_cast<std::size_t>(JobState::waiting)];
    for (JobState s : {JobState::scheduled, JobState::staging, JobState::running, JobState::completing}) {
        remaining += counts_[static_cast<std::size_t>(s)];
    }
    if (remaining == 0) return now;
    double total = 0.0;
    for (const auto& s : decision_.selected) {
        auto it = resources_.find(s.id);
        total += it != resources_.end() && it->second.has_rate ? it->second.rate.jobs_per_hour : s.jobs_per_hour;
    }
    if (total <= 0) return std::nullopt;
    return now + from_hours(static_cast<double>(remaining) / total);
}

void Engine::halt(Phase phase, const std::string& reason, SimTime now) {
    std::vector<std::uint64_t> aborted;
    for (const auto& j : jobs_) {
        if (j.state == JobState::waiting || is_in_flight(j.state)) {
            aborted.push_back(j.spec.id.ordinal);
            if (is_in_flight(j.state) && dispatcher_) {
                dispatcher_->cancel(j.spec.id.ordinal, j.attempt);
            }
        }
    }
    commit("phase", {{"to", to_string(phase)}, {"reason", reason}, {"aborted", aborted}}, now);
}

void Engine::fail_attempt(std::uint64_t ordinal, int attempt, const std::string& reason, double cpu_hours,
                          SimTime now, json extra) {
    auto& job = jobs_[ordinal];
    json p = std::move(extra);
    p.update(json{{"job", ordinal}, {"event", "fail"}, {"attempt", attempt}, {"reason", reason}, {"cpu_hours", cpu_hours}});
    bool final = p.value("counted", true) && job.failures + 1 >= config_.retry_cap;
    p["final"] = final;
    if (config_.charge_failed && cpu_hours > 0 && job.resource) {
        Money amount = cost_of(cpu_hours, job.pinned_rate);
        if (ledger_.can_charge(ordinal, amount, attempt)) p["charge"] = {{"cpu_hours", cpu_hours}, {"rate", job.pinned_rate.cents()}, {"amount", amount.cents()}};
    }
    commit("job", std::move(p), now);
    if (!final) commit("job", {{"job", ordinal}, {"event", "retry"}, {"attempt", attempt + 1}}, now);
}

void Engine::cancel_stragglers(SimTime now, const std::vector<scheduler::Candidate>& cands) {
    if (config_.straggler_factor <= 0) return;
    double left = (constraints_.deadline - now).count() / 3600.0;
    std::vector<std::pair<std::uint64_t, std::string>> doomed;
    for (const auto& [rid, rs] : resources_) {
        for (auto j : rs.jobs) {
            const auto& job = jobs_[j];
            if (job.state != JobState::running) continue;
            double ran = (now.count() - job.timestamps.at(JobState::running)) / 3600.0;
            if (ran <= config_.straggler_factor * job.expected_hours || ran <= left) continue;
            bool elsewhere = false;
            for (const auto& c : cands) {
                if (c.id != rid && c.busy_hours + 1.0 / c.jobs_per_hour <= left * (1.0 - margin())) {
                    elsewhere = true;
                }
            }
            if (elsewhere) doomed.emplace_back(j, rid);
        }
    }
    for (const auto& [j, rid] : doomed) {
        auto& job = jobs_[j];
        int attempt = job.attempt;
        double ran = (now.count() - job.timestamps.at(JobState::running)) / 3600.0;
        // The cancelled attempt bounds the resource's rate from above; the
        // estimate restarts there.
        scheduler::RateEstimate est = resources_[rid].rate;
        est.jobs_per_hour = std::min(est.jobs_per_hour, 1.0 / std::max(ran, 1e-9));
        est.last_update = now;
        if (dispatcher_) dispatcher_->cancel(j, attempt);
        char buf[96];
        std::snprintf(buf, sizeof buf, "straggler: cancelled after %.2fh", ran);
        fail_attempt(j, attempt, buf, 0.0, now, {{"rate_after", est.jobs_per_hour}, {"samples", est.samples}, {"counted", false}, {"ran_hours", ran}});
    }
}

void Engine::dispatch_one(std::uint64_t ordinal, const scheduler::ResourceView& view, SimTime now) {
    auto& job = jobs_[ordinal];
    Money rate = rate_for(view, now);
    double cpu = plan_.expected_job_hours / view.capability;
    Money reservation = cost_of(cpu, rate);
    int attempt = job.attempt;
    commit("job",
           {{"job", ordinal},
            {"event", "dispatch"},
            {"attempt", attempt},
            {"resource", view.id},
            {"rate", rate.cents()},
            {"cpu_hours", cpu},
            {"reservation", reservation.cents()},
            {"jobs_per_hour", rate_estimate(view)}},
           now);
    if (!dispatcher_) {
        fail_attempt(ordinal, attempt, "no dispatcher bound", 0.0, now);
        return;
    }
    dispatcher::DispatchOrder order;
    order.job = ordinal;
    order.attempt = attempt;
    order.resource = view.id;
    order.task = job.spec.task;
    order.binding = job.spec.binding;
    order.pinned_rate = rate;
    order.projected_hours = cpu;
    order.staging_dir = config_.staging_dir;
    dispatcher::Dispatcher::Outcome out;
    try {
        out = dispatcher_->dispatch(order, now);
    } catch (const dispatcher::MalformedTask& e) {
        commit("anomaly", {{"job", ordinal}, {"message", std::string("malformed task: ") + e.what()}}, now);
        commit("job",
               {{"job", ordinal}, {"event", "fail"}, {"attempt", attempt}, {"reason", "malformed task"},
                {"cpu_hours", 0.0}, {"final", true}},
               now);
        return;
    }
    if (!out.accepted) {
        fail_attempt(ordinal, attempt, "submission refused: " + out.reason, 0.0, now);
        return;
    }
    if (jobs_[ordinal].state == JobState::scheduled && jobs_[ordinal].attempt == attempt) {
        commit("job", {{"job", ordinal}, {"event", "submit"}, {"attempt", attempt}}, now);
    }
}

void Engine::step(SimTime now, ReplanEvent event) {
    clock_ = std::max(clock_, now.count());
    if (is_terminal(phase_) || phase_ == Phase::negotiating || phase_ == Phase::ready) return;

    std::uint64_t in_flight = 0;
    for (const auto& [id, rs] : resources_) in_flight += static_cast<std::uint64_t>(std::max(0, rs.in_flight));

    if (waiting_.empty() && in_flight == 0) {
        bool clean = counts_[static_cast<std::size_t>(JobState::failed)] == 0 &&
                     counts_[static_cast<std::size_t>(JobState::aborted)] == 0;
        commit("phase",
               {{"to", to_string(clean ? Phase::completed : Phase::completed_with_failures)},
                {"reason", clean ? "all jobs done" : "all jobs finished, some failed"}},
               now);
        return;
    }
    if (now >= constraints_.deadline) {
        halt(Phase::deadline_missed,
             "deadline passed with " + std::to_string(waiting_.size() + in_flight) + " jobs unfinished", now);
        return;
    }
    if (config_.enforce_budget && ledger_.available() < Money{}) {
        halt(Phase::budget_exhausted, "budget is below committed spend", now);
        return;
    }
    if (phase_ == Phase::paused) return;
    if (!directory_) return;

    auto views = scheduler::discover(*directory_, constraints_.user_id);
    if (views.empty()) {
        halt(Phase::aborted, "infeasible: no authorized resources", now);
        return;
    }
    std::map<std::string, const scheduler::ResourceView*> by_id;
    for (const auto& v : views) by_id[v.id] = &v;
    auto cands = candidates(now, views);

    if (config_.straggler_factor > 0) {
        std::uint64_t before = last_seq_;
        cancel_stragglers(now, cands);
        if (last_seq_ != before) {
            if (is_terminal(phase_)) return;
            cands = candidates(now, views);
            event = ReplanEvent::failure;
        }
    }

    auto e = eta(now);
    bool eta_past = e && *e > constraints_.deadline;
    if (replan_reason_ ||
        scheduler::replan_trigger(event, completions_since_replan_, eta_past, config_.completions_per_replan)) {
        Seconds t_rem = horizon(now);
        auto d = scheduler::select_resources(waiting_.size(), t_rem, cands, ledger_.available(), config_.select);
        if (replan_reason_ || d.selected != decision_.selected || event != ReplanEvent::tick) {
            json selected = json::array();
            for (const auto& s : d.selected) selected.push_back(selection_to_json(s));
            commit("replan",
                   {{"reason", replan_reason_.value_or(scheduler::to_string(event))},
                    {"waiting", waiting_.size()},
                    {"t_rem", t_rem.count()},
                    {"selected", selected},
                    {"projected_finish", (now + d.projected_finish).count()},
                    {"projected_cost", d.projected_cost.cents()},
                    {"feasible_deadline", d.feasible_deadline},
                    {"feasible_budget", d.feasible_budget}},
                   now);
        }
    }

    std::map<std::string, int> busy;
    for (const auto& [id, rs] : resources_) busy[id] = rs.in_flight;
    std::vector<std::uint64_t> waiting(waiting_.begin(), waiting_.end());
    auto plan = scheduler::assign(waiting, decision_.selected, busy);
    for (const auto& a : plan) {
        if (is_terminal(phase_)) return;
        auto it = by_id.find(a.resource);
        if (it == by_id.end() || it->second->status != scheduler::ResourceStatus::up) continue;
        const auto& v = *it->second;
        Money need = cost_of(plan_.expected_job_hours / v.capability, rate_for(v, now));
        if (config_.enforce_budget && need > ledger_.available()) continue;
        dispatch_one(a.job, v, now);
    }

    in_flight = 0;
    for (const auto& [id, rs] : resources_) in_flight += static_cast<std::uint64_t>(std::max(0, rs.in_flight));
    if (config_.enforce_budget && !waiting_.empty() && in_flight == 0 && !cands.empty()) {
        Money cheapest = std::min_element(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
                             return a.per_job_cost < b.per_job_cost;
                         })->per_job_cost;
        if (cheapest > ledger_.available()) {
            halt(Phase::budget_exhausted,
                 "remaining budget " + ledger_.available().to_string() + " cannot pay for another job", now);
        }
    }
}

void Engine::on_status(const dispatcher::StatusUpdate& update, SimTime now) {
    if (!dispatcher_) return;
    on_signal(dispatcher_->handle_status(update), now);
}

void Engine::on_signal(const dispatcher::JobSignal& s, SimTime now) {
    using K = dispatcher::JobSignal::Kind;
    if (s.kind == K::none) return;
    if (s.kind == K::anomaly) {
        commit("anomaly", {{"job", s.job}, {"attempt", s.attempt}, {"message", s.message}}, now);
        return;
    }
    if (s.job >= jobs_.size() || jobs_[s.job].attempt != s.attempt || !is_in_flight(jobs_[s.job].state)) {
        commit("anomaly", {{"job", s.job}, {"attempt", s.attempt}, {"message", "update for a stale attempt"}}, now);
        return;
    }
    auto& job = jobs_[s.job];
    auto simple = [&](JobEvent ev) {
        if (!next_state(job.state, ev)) {
            commit("anomaly",
                   {{"job", s.job},
                    {"attempt", s.attempt},
                    {"message", std::string("illegal transition: ") + to_string(ev) + " from " + to_string(job.state)}},
                   now);
            return;
        }
        commit("job", {{"job", s.job}, {"event", to_string(ev)}, {"attempt", s.attempt}}, now);
    };
    switch (s.kind) {
        case K::started: simple(JobEvent::start); return;
        case K::staged_out: simple(JobEvent::stage_out); return;
        case K::failed:
            fail_attempt(s.job, s.attempt, s.message.empty() ? "failed" : s.message, s.cpu_hours, now);
            step(now, ReplanEvent::failure);
            return;
        case K::completed: break;
        default: return;
    }

    if (!next_state(job.state, JobEvent::complete)) {
        commit("anomaly",
               {{"job", s.job}, {"attempt", s.attempt}, {"message", std::string("completion while ") + to_string(job.state)}},
               now);
        return;
    }
    const std::string& rid = *job.resource;
    Money amount = cost_of(s.cpu_hours, job.pinned_rate);
    if (config_.charge_integrated && directory_) {
        for (const auto& v : directory_->query(constraints_.user_id)) {
            if (v.id == rid) {
                amount = economy::integrated_cost(*v.schedule, constraints_.user_id, s.cpu_hours, job.dispatched_at,
                                                  now - job.dispatched_at, origin_);
            }
        }
    }
    if (!ledger_.can_charge(s.job, amount, s.attempt)) {
        commit("job",
               {{"job", s.job}, {"event", "fail"}, {"attempt", s.attempt}, {"reason", "charge refused: over budget"},
                {"cpu_hours", s.cpu_hours}, {"final", true}},
               now);
        halt(Phase::budget_exhausted, "charge for job " + std::to_string(s.job) + " would pass the budget", now);
        return;
    }
    const auto& rs = resources_[rid];
    scheduler::RateEstimate est = rs.rate;
    if (!rs.has_rate) est.jobs_per_hour = prior_rate() * plan_.expected_job_hours / job.expected_cpu_hours;
    double since = std::max(job.dispatched_at.count(), rs.last_completion);
    double dt = now.count() - since;
    std::optional<double> observed;
    if (dt > 0) {
        observed = 3600.0 / dt;
        est.observe(*observed, now);
    }
    json done{{"job", s.job},
              {"event", "complete"},
              {"attempt", s.attempt},
              {"cpu_hours", s.cpu_hours},
              {"charge", {{"cpu_hours", s.cpu_hours}, {"rate", job.pinned_rate.cents()}, {"amount", amount.cents()}}},
              {"rate_after", est.jobs_per_hour},
              {"samples", est.samples}};
    if (observed) done["observed"] = *observed;
    commit("job", std::move(done), now);
    step(now, ReplanEvent::completion);
}

// ---------------------------------------------------------------- reading

Snapshot Engine::snapshot_locked() const {
    Snapshot s;
    s.id = id_;
    s.plan_name = plan_.name;
    s.phase = phase_;
    s.phase_reason = phase_reason_;
    s.total_jobs = jobs_.size();
    for (std::size_t i = 0; i < kJobStateCount; ++i) s.counts[static_cast<JobState>(i)] = counts_[i];
    for (const auto& [id, rs] : resources_) {
        if (rs.in_flight > 0) s.in_flight[id] = rs.in_flight;
    }
    s.budget = ledger_.budget();
    s.committed = ledger_.committed();
    s.reserved = ledger_.reserved();
    s.created_at = created_at_;
    s.deadline = constraints_.deadline;
    s.now = SimTime(clock_);
    if (!is_terminal(phase_)) s.eta = eta(s.now);
    s.last_seq = last_seq_;
    s.user_id = constraints_.user_id;
    s.selected = decision_.selected;
    return s;
}

Snapshot Engine::snapshot() const {
    std::lock_guard lk(mu_);
    return snapshot_locked();
}

std::vector<JobRecord> Engine::jobs(std::optional<JobState> filter, std::size_t offset, std::size_t limit) const {
    std::lock_guard lk(mu_);
    std::vector<JobRecord> out;
    std::size_t skipped = 0;
    for (const auto& j : jobs_) {
        if (filter && j.state != *filter) continue;
        if (skipped++ < offset) continue;
        if (out.size() >= limit) break;
        out.push_back(j);
    }
    return out;
}

JobRecord Engine::job(std::uint64_t ordinal) const {
    std::lock_guard lk(mu_);
    return jobs_.at(ordinal);
}

std::vector<economy::LedgerEntry> Engine::ledger_entries() const {
    std::lock_guard lk(mu_);
    return ledger_.entries();
}

std::string Engine::ledger_csv() const {
    std::lock_guard lk(mu_);
    return ledger_.to_csv();
}

std::map<std::string, scheduler::RateEstimate> Engine::rate_estimates() const {
    std::lock_guard lk(mu_);
    std::map<std::string, scheduler::RateEstimate> out;
    for (const auto& [id, rs] : resources_) {
        if (rs.has_rate) out[id] = rs.rate;
    }
    return out;
}

std::vector<std::string> Engine::records_after(std::uint64_t after_seq) const {
    std::lock_guard lk(mu_);
    std::vector<std::string> out;
    // seq n sits at index n - 1.
    for (std::size_t i = static_cast<std::size_t>(std::min<std::uint64_t>(after_seq, lines_.size())); i < lines_.size(); ++i) {
        out.push_back(lines_[i]);
    }
    return out;
}

bool Engine::wait_for_records(std::uint64_t after_seq, std::chrono::milliseconds timeout) const {
    std::unique_lock lk(mu_);
    return cv_.wait_for(lk, timeout, [&] { return last_seq_ > after_seq; });
}

std::uint64_t Engine::last_seq() const {
    std::lock_guard lk(mu_);
    return last_seq_;
}

void Engine::subscribe(Listener listener) { listeners_.push_back(std::move(listener)); }

json to_json(const Snapshot& s) {
    json counts = json::object();
    for (const auto& [state, n] : s.counts) counts[to_string(state)] = n;
    json selected = json::array();
    for (const auto& sel : s.selected) {
        selected.push_back({{"resource_id", sel.id},
                            {"quota", sel.quota},
                            {"allotment", sel.allotment ? json(*sel.allotment) : json(nullptr)},
                            {"jobs_per_hour", sel.jobs_per_hour},
                            {"per_job_cost", sel.per_job_cost.to_string()}});
    }
    json out{{"id", s.id},
             {"plan", s.plan_name},
             {"phase", to_string(s.phase)},
             {"phase_reason", s.phase_reason},
             {"total_jobs", s.total_jobs},
             {"counts", counts},
             {"in_flight", s.in_flight},
             {"ledger", {{"budget", s.budget.to_string()}, {"committed", s.committed.to_string()},
                         {"reserved", s.reserved.to_string()}}},
             {"user_id", s.user_id},
             {"deadline", format_duration(s.deadline - s.created_at)},
             {"elapsed", format_duration(s.now - s.created_at)},
             {"t_sim", s.now.count()},
             {"eta", s.eta ? json(format_duration(*s.eta - s.created_at)) : json(nullptr)},
             {"last_seq", s.last_seq},
             {"selected", selected}};
    return out;
}

json to_json(const JobRecord& j) {
    json binding = json::object();
    for (const auto& [k, v] : j.spec.binding) binding[k] = v;
    json stamps = json::object();
    for (const auto& [state, t] : j.timestamps) stamps[to_string(state)] = t;
    return json{{"job_id", j.spec.id.ordinal},
                {"state", to_string(j.state)},
                {"binding", binding},
                {"assigned_resource", j.resource ? json(*j.resource) : json(nullptr)},
                {"attempt", j.attempt},
                {"cost_incurred", j.cost_incurred.to_string()},
                {"timestamps", stamps}};
}

}  // namespace gridfarm::engine
