#include "gridfarm/service/service.hpp"

#include <httplib.h>

#include "gridfarm/service/report.hpp"

namespace gridfarm::service {

namespace {

Reply error(int status, const std::string& message) { return {status, {{"error", message}}}; }

Seconds duration_field(const json& v) {
    if (v.is_number()) return from_hours(v.get<double>());
    if (v.is_string()) return parse_duration(v.get<std::string>());
    throw std::invalid_argument("expected a duration such as \"PT10H\" or \"10h\"");
}

Money money_field(const json& v) {
    if (v.is_number()) return Money::from_units(v.get<double>());
    if (v.is_string()) return Money::parse(v.get<std::string>());
    throw std::invalid_argument("expected an amount such as \"250.00\"");
}

json constraints_json(const engine::Engine& e) {
    auto c = e.constraints();
    return {{"deadline", format_duration(c.deadline - e.created_at())},
            {"budget", c.budget.to_string()},
            {"user_id", c.user_id}};
}

}  // namespace

json to_json(const economy::Quote& q, SimTime origin) {
    json res = json::array();
    for (const auto& r : q.assumed_resources) {
        res.push_back({{"resource_id", r.resource_id},
                       {"rate_used", r.rate_used.to_string()},
                       {"rate_estimate", r.rate_estimate}});
    }
    json out{{"feasible", q.feasible},
             {"projected_cost", q.projected_cost.to_string()},
             {"projected_finish", format_duration(q.projected_finish - origin)},
             {"assumed_resources", res}};
    if (!q.reason.empty()) out["reason"] = q.reason;
    return out;
}

// ---------------------------------------------------------------- runner

Experiment::Experiment(std::unique_ptr<sim::Session> session, double speed, Seconds tick)
    : session_(std::move(session)), engine_(&session_->engine()), speed_(speed), tick_(tick) {
    thread_ = std::thread([this] { loop(); });
}

Experiment::~Experiment() { stop(); }

void Experiment::poke() { cv_.notify_all(); }

void Experiment::stop() {
    {
        std::lock_guard lk(mu_);
        stop_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
}

void Experiment::loop() {
    using engine::Phase;
    std::unique_lock lk(mu_);
    while (!stop_) {
        Phase p = session_->engine().phase();
        if (p == Phase::ready || p == Phase::negotiating) {
            // The clock starts with the experiment.
            cv_.wait(lk);
            continue;
        }
        auto r = session_->run({session_->sim().now() + tick_});
        if (r.status != sim::RunResult::Status::reached_time) return;
        if (speed_ > 0) {
            cv_.wait_for(lk, std::chrono::duration<double>(tick_.count() / speed_), [&] { return stop_; });
        } else {
            lk.unlock();
            std::this_thread::yield();
            lk.lock();
        }
    }
}

// ---------------------------------------------------------------- service

Service::Service(ServiceOptions options) : options_(std::move(options)) {
    fabric::validate(options_.fabric);
    if (!options_.journal_dir.empty()) std::filesystem::create_directories(options_.journal_dir);
}

Service::~Service() { shutdown(); }

void Service::shutdown() {
    stopping_ = true;
    std::map<std::string, std::shared_ptr<Experiment>> all;
    {
        std::lock_guard lk(mu_);
        all = experiments_;
    }
    for (auto& [id, e] : all) e->stop();
}

std::shared_ptr<Experiment> Service::find(const std::string& id) const {
    std::lock_guard lk(mu_);
    auto it = experiments_.find(id);
    return it == experiments_.end() ? nullptr : it->second;
}

Reply Service::create(const json& body, const std::string& client) {
    if (!body.is_object() || !body.contains("plan") || !body.at("plan").is_string()) {
        return error(422, "body needs a \"plan\" string");
    }
    auto parsed = plan::parse_plan(body.at("plan").get<std::string>());
    if (!parsed.ok()) {
        json diags = json::array();
        for (const auto& d : parsed.diagnostics) {
            diags.push_back({{"line", d.pos.line}, {"column", d.pos.column}, {"message", d.message}});
        }
        return {422, {{"error", "plan has errors"}, {"diagnostics", diags}}};
    }
    const json& c = body.contains("constraints") ? body.at("constraints") : body;
    engine::ExperimentSpec spec;
    try {
        if (!c.contains("deadline") || !c.contains("budget")) return error(422, "deadline and budget are required");
        spec.constraints.deadline = spec.created_at + duration_field(c.at("deadline"));
        spec.constraints.budget = money_field(c.at("budget"));
        if (body.contains("user_id")) spec.constraints.user_id = body.at("user_id").get<std::string>();
    } catch (const std::exception& e) {
        return error(422, e.what());
    }
    spec.plan = *parsed.plan;
    spec.config = options_.config;

    std::unique_lock lk(mu_);
    spec.id = "exp-" + std::to_string(next_id_);
    std::unique_ptr<engine::JournalSink> sink;
    std::unique_ptr<sim::Session> session;
    try {
        if (options_.journal_dir.empty()) {
            sink = std::make_unique<engine::MemoryJournal>();
        } else {
            auto path = engine::journal_path(options_.journal_dir, spec.id);
            std::filesystem::remove(path);
            sink = std::make_unique<engine::FileJournal>(path, options_.fsync);
        }
        session = std::make_unique<sim::Session>(sim::SessionSetup{options_.fabric, options_.seed, options_.sim},
                                                 spec, std::move(sink));
    } catch (const engine::InvalidConstraints& e) {
        return error(422, e.what());
    } catch (const plan::CrossProductTooLarge& e) {
        return error(422, e.what());
    }
    ++next_id_;
    auto& eng = session->engine();
    json quote = to_json(eng.quote(session->sim().now()), eng.created_at());
    if (body.value("start", false)) eng.act(engine::Engine::Action::start, session->sim().now(), client);
    json out{{"id", spec.id}, {"phase", engine::to_string(eng.phase())}, {"quote", quote},
             {"constraints", constraints_json(eng)}};
    experiments_[spec.id] = std::make_shared<Experiment>(std::move(session), options_.speed, options_.sim.tick);
    return {201, out};
}

Reply Service::act(const std::string& id, const json& body, const std::string& client) {
    auto exp = find(id);
    if (!exp) return error(404, "no experiment " + id);
    if (!body.is_object() || !body.contains("action") || !body.at("action").is_string()) {
        return error(422, "body needs an \"action\"");
    }
    auto action = engine::action_from_string(body.at("action").get<std::string>());
    if (!action) return error(422, "unknown action " + body.at("action").get<std::string>());
    Reply r = exp->locked([&](sim::Session& s) -> Reply {
        try {
            s.engine().act(*action, s.sim().now(), client);
        } catch (const engine::IllegalState& e) {
            return error(409, e.what());
        }
        auto snap = s.engine().snapshot();
        return {200, {{"id", id}, {"phase", engine::to_string(snap.phase)}, {"phase_reason", snap.phase_reason}}};
    });
    exp->poke();
    return r;
}

Reply Service::steer(const std::string& id, const json& body, const std::string& client) {
    auto exp = find(id);
    if (!exp) return error(404, "no experiment " + id);
    if (!body.is_object()) return error(422, "body must be an object");
    std::optional<Seconds> deadline;
    std::optional<Money> budget;
    try {
        if (body.contains("deadline")) deadline = duration_field(body.at("deadline"));
        if (body.contains("budget")) budget = money_field(body.at("budget"));
    } catch (const std::exception& e) {
        return error(422, e.what());
    }
    return exp->locked([&](sim::Session& s) -> Reply {
        auto& eng = s.engine();
        SimTime now = s.sim().now();
        std::optional<SimTime> at;
        if (deadline) at = eng.created_at() + *deadline;
        try {
            eng.steer(at, budget, now, client);
        } catch (const engine::IllegalState& e) {
            return error(409, e.what());
        } catch (const engine::InvalidConstraints& e) {
            return error(422, e.what());
        }
        json warnings = json::array();
        auto snap = eng.snapshot();
        if (snap.budget < snap.committed) {
            warnings.push_back("budget " + snap.budget.to_string() + " is below the " + snap.committed.to_string() +
                               " already spent; the experiment will stop");
        }
        auto q = eng.quote(now);
        if (!q.feasible) warnings.push_back("remaining work is not feasible: " + q.reason);
        return {200, {{"id", id}, {"constraints", constraints_json(eng)}, {"quote", to_json(q, eng.created_at())},
                      {"warnings", warnings}}};
    });
}

Reply Service::status(const std::string& id) const {
    auto exp = find(id);
    if (!exp) return error(404, "no experiment " + id);
    return {200, engine::to_json(exp->engine().snapshot())};
}

Reply Service::jobs(const std::string& id, const std::string& state, const std::string& page,
                    const std::string& page_size) const {
    auto exp = find(id);
    if (!exp) return error(404, "no experiment " + id);
    std::optional<engine::JobState> filter;
    if (!state.empty()) {
        filter = engine::job_state_from_string(state);
        if (!filter) return error(422, "unknown job state " + state);
    }
    std::size_t p = 1, size = 100;
    try {
        if (!page.empty()) p = std::stoul(page);
        if (!page_size.empty()) size = std::stoul(page_size);
    } catch (const std::exception&) {
        return error(422, "page and page_size must be positive integers");
    }
    if (p < 1 || size < 1 || size > 1000) return error(422, "page must be >= 1 and page_size in 1..1000");
    const auto& eng = exp->engine();
    auto snap = eng.snapshot();
    std::uint64_t total = filter ? snap.counts[*filter] : snap.total_jobs;
    json rows = json::array();
    for (const auto& j : eng.jobs(filter, (p - 1) * size, size)) rows.push_back(engine::to_json(j));
    return {200, {{"page", p}, {"page_size", size}, {"total", total}, {"jobs", rows}}};
}

Reply Service::resources(const std::string& id) const {
    auto exp = find(id);
    if (!exp) return error(404, "no experiment " + id);
    return exp->locked([&](sim::Session& s) -> Reply {
        std::vector<engine::JournalRecord> records;
        for (const auto& line : s.engine().records_after(0)) records.push_back(*engine::decode_record(line));
        json out = usage_report(records).to_json();
        out["ledger_committed"] = s.engine().snapshot().committed.to_string();
        return {200, out};
    });
}

Reply Service::list() const {
    json out = json::array();
    std::lock_guard lk(mu_);
    for (const auto& [id, e] : experiments_) {
        auto snap = e->engine().snapshot();
        out.push_back({{"id", id}, {"plan", snap.plan_name}, {"phase", engine::to_string(snap.phase)}});
    }
    return {200, {{"experiments", out}}};
}

Reply Service::fabric() const { return {200, json::parse(fabric::fabric_to_json(options_.fabric))}; }

// ---------------------------------------------------------------- http

namespace {

void send(httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
}

std::string client_of(const httplib::Request& req) {
    auto c = req.get_header_value("X-Client-Id");
    return c.empty() ? "anonymous" : c;
}

std::optional<json> body_of(const httplib::Request& req, httplib::Response& res) {
    try {
        return req.body.empty() ? json::object() : json::parse(req.body);
    } catch (const json::parse_error& e) {
        send(res, error(400, std::string("body is not JSON: ") + e.what()));
        return std::nullopt;
    }
}

std::string sse_event(const std::string& line) {
    auto r = engine::decode_record(line);
    return "id: " + std::to_string(r->seq) + "\nevent: " + r->kind + "\ndata: " + line + "\n\n";
}

}  // namespace

void Service::mount(httplib::Server& server) {
    using httplib::Request;
    using httplib::Response;
    const std::string exp = R"(/experiments/([A-Za-z0-9_.-]+))";

    server.Post("/experiments", [this](const Request& req, Response& res) {
        if (auto body = body_of(req, res)) send(res, create(*body, client_of(req)));
    });
    server.Get("/experiments", [this](const Request&, Response& res) { send(res, list()); });
    server.Post(exp + "/actions", [this](const Request& req, Response& res) {
        if (auto body = body_of(req, res)) send(res, act(req.matches[1], *body, client_of(req)));
    });
    server.Patch(exp + "/constraints", [this](const Request& req, Response& res) {
        if (auto body = body_of(req, res)) send(res, steer(req.matches[1], *body, client_of(req)));
    });
    server.Get(exp, [this](const Request& req, Response& res) { send(res, status(req.matches[1])); });
    server.Get(exp + "/jobs", [this](const Request& req, Response& res) {
        send(res, jobs(req.matches[1], req.get_param_value("state"), req.get_param_value("page"),
                       req.get_param_value("page_size")));
    });
    server.Get(exp + "/resources", [this](const Request& req, Response& res) { send(res, resources(req.matches[1])); });
    server.Get("/fabric", [this](const Request&, Response& res) { send(res, fabric()); });

    // Server-sent events: every journal record after from_seq (or
    // Last-Event-ID), then live records until the experiment ends.
    server.Get(exp + "/events", [this](const Request& req, Response& res) {
        auto e = find(req.matches[1]);
        if (!e) return send(res, error(404, "no experiment " + std::string(req.matches[1])));
        std::string from = req.get_param_value("from_seq");
        if (from.empty()) from = req.get_header_value("Last-Event-ID");
        std::uint64_t cursor = 0;
        try {
            if (!from.empty()) cursor = std::stoull(from);
        } catch (const std::exception&) {
            return send(res, error(422, "from_seq must be a non-negative integer"));
        }
        bool follow = req.get_param_value("follow") != "false";
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider(
            "text/event-stream", [this, e, cursor, follow](std::size_t, httplib::DataSink& sink) mutable {
                auto lines = e->engine().records_after(cursor);
                for (const auto& line : lines) {
                    std::string msg = sse_event(line);
                    if (!sink.write(msg.data(), msg.size())) return false;
                    ++cursor;
                }
                if (!lines.empty()) return true;
                if (!follow || stopping_ || engine::is_terminal(e->engine().phase())) {
                    if (e->engine().records_after(cursor).empty()) {
                        sink.done();
                        return true;
                    }
                    return true;
                }
                e->engine().wait_for_records(cursor, std::chrono::milliseconds(200));
                return sink.is_writable();
            });
    });

    server.set_exception_handler([](const Request&, Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& ex) {
            what = ex.what();
        } catch (...) {
        }
        send(res, error(500, what));
    });
    server.set_error_handler([](const Request&, Response& res) {
        if (res.body.empty()) send(res, error(res.status, "no such route"));
    });
}

}  // namespace gridfarm::service
