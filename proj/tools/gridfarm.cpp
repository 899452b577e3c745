#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "gridfarm/engine/engine.hpp"
#include "gridfarm/fabric/fabric.hpp"
#include "gridfarm/plan/plan.hpp"
#include "gridfarm/service/report.hpp"
#include "gridfarm/service/service.hpp"
#include "gridfarm/sim/simulation.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace gridfarm;

namespace {

struct Options {
    std::string plan;
    std::string fabric;
    int synthesize = 70;
    bool freeze = false;
    std::uint64_t seed = 42;
    std::vector<std::string> deadlines;
    std::string budget;
    std::string out_dir = "out";
    bool charge_failed = false;
    bool charge_integrated = false;
    std::string server = "http://127.0.0.1:8080";
    std::string client = "cli";
    std::string id;
    std::string journal;
};

struct Failure : std::runtime_error {
    int code;
    Failure(int c, const std::string& what) : std::runtime_error(what), code(c) {}
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Failure(2, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spill(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Failure(2, "cannot write " + path.string());
    out << text;
    std::cout << path.string() << "\n";
}

plan::Plan load_plan(const Options& o) {
    if (o.plan.empty()) throw Failure(2, "--plan is required");
    auto parsed = plan::parse_plan(slurp(o.plan));
    if (!parsed.ok()) {
        std::string msg;
        for (const auto& d : parsed.diagnostics) msg += o.plan + ":" + plan::to_string(d) + "\n";
        throw Failure(2, msg + "plan has errors");
    }
    return *parsed.plan;
}

fabric::FabricConfig load_fabric(const Options& o) {
    auto f = o.fabric.empty() ? fabric::synthesize_fabric(o.synthesize, o.seed) : fabric::load_fabric(o.fabric);
    return o.freeze ? fabric::frozen(std::move(f)) : f;
}

engine::ExperimentSpec make_spec(const Options& o, const std::string& deadline, const std::string& id) {
    engine::ExperimentSpec spec;
    spec.id = id;
    spec.plan = load_plan(o);
    if (o.budget.empty()) throw Failure(2, "--budget is required");
    spec.constraints.deadline = parse_duration(deadline);
    spec.constraints.budget = Money::parse(o.budget);
    spec.config.charge_failed = o.charge_failed;
    spec.config.charge_integrated = o.charge_integrated;
    return spec;
}

std::vector<engine::JournalRecord> decode_all(const std::vector<std::string>& lines) {
    std::vector<engine::JournalRecord> out;
    for (const auto& l : lines) out.push_back(*engine::decode_record(l));
    return out;
}

bool success(engine::Phase p) {
    return p == engine::Phase::completed || p == engine::Phase::completed_with_failures;
}

// Writes the report files for one finished journal into dir.
json write_reports(const fs::path& dir, const std::vector<engine::JournalRecord>& records) {
    auto usage = service::usage_report(records);
    spill(dir / "ledger.csv", service::ledger_csv(records));
    spill(dir / "usage.csv", usage.table_csv());
    spill(dir / "decisions.jsonl", service::decisions_jsonl(records));
    json summary{{"records", records.size()},
                 {"committed", usage.committed.to_string()},
                 {"elapsed", format_duration(Seconds(usage.end - usage.start))},
                 {"mean_resources_in_use", usage.mean_resources_in_use()}};
    for (const auto& r : records) {
        if (r.kind == "phase") {
            summary["phase"] = r.payload.at("to");
            summary["reason"] = r.payload.value("reason", "");
        }
    }
    return summary;
}

// ---------------------------------------------------------------- local

int cmd_quote(const Options& o) {
    std::string d = o.deadlines.empty() ? "" : o.deadlines.front();
    if (d.empty()) throw Failure(2, "--deadline is required");
    sim::Session s({load_fabric(o), o.seed, {}}, make_spec(o, d, "quote"), std::make_unique<engine::MemoryJournal>());
    auto q = s.engine().quote(s.sim().now());
    std::cout << service::to_json(q, SimTime(0.0)).dump(2) << "\n";
    if (!q.feasible) {
        std::cerr << "infeasible: " << q.reason << "\n";
        return 1;
    }
    return 0;
}

int cmd_simulate(const Options& o) {
    if (o.deadlines.empty()) throw Failure(2, "--deadline is required");
    auto fab = load_fabric(o);
    fs::create_directories(o.out_dir);
    bool several = o.deadlines.size() > 1;
    bool ok = true;
    std::string comparison = "deadline,phase,finish_hours,mean_resources_in_use,cost\n";
    for (const auto& d : o.deadlines) {
        fs::path dir = several ? fs::path(o.out_dir) / ("deadline-" + d) : fs::path(o.out_dir);
        fs::create_directories(dir);
        auto spec = make_spec(o, d, fs::path(o.plan).stem().string());
        fs::path journal = engine::journal_path(dir, spec.id);
        fs::remove(journal);
        sim::Session s({fab, o.seed, {}}, spec, std::make_unique<engine::FileJournal>(journal));
        std::ofstream trace(dir / "trace.jsonl", std::ios::trunc);
        s.sim().set_trace_stream(&trace);
        auto q = s.engine().quote(s.sim().now());
        s.start(o.client);
        auto r = s.run();
        trace.close();
        auto snap = s.engine().snapshot();
        std::cout << journal.string() << "\n" << (dir / "trace.jsonl").string() << "\n";
        auto summary = write_reports(dir, decode_all(s.engine().records_after(0)));
        summary["quote"] = service::to_json(q, SimTime(0.0));
        summary["deadline"] = format_duration(parse_duration(d));
        summary["seed"] = o.seed;
        if (r.status != sim::RunResult::Status::terminal) summary["stalled"] = r.diagnostic;
        spill(dir / "summary.json", summary.dump(2) + "\n");
        ok = ok && r.status == sim::RunResult::Status::terminal && success(snap.phase);
        char row[160];
        std::snprintf(row, sizeof row, "%s,%s,%.3f,%.3f,%s\n", d.c_str(), engine::to_string(snap.phase),
                      to_hours(r.now), summary["mean_resources_in_use"].get<double>(),
                      snap.committed.to_string().c_str());
        comparison += row;
        std::cerr << d << ": " << engine::to_string(snap.phase) << " at " << format_duration(r.now) << ", cost "
                  << snap.committed.to_string() << "\n";
    }
    if (several) spill(fs::path(o.out_dir) / "comparison.csv", comparison);
    return ok ? 0 : 1;
}

int cmd_report(const Options& o) {
    fs::path journal = o.journal;
    if (journal.empty()) {
        if (fs::is_directory(o.out_dir)) {
            for (const auto& e : fs::directory_iterator(o.out_dir)) {
                if (e.path().extension() == ".journal") journal = e.path();
            }
        }
        if (journal.empty()) throw Failure(2, "no --journal given and no .journal file in " + o.out_dir);
    }
    auto contents = engine::read_journal_file(journal);
    if (!contents.clean()) std::cerr << "warning: " << journal.string() << ": " << contents.error << "\n";
    fs::create_directories(o.out_dir);
    auto summary = write_reports(o.out_dir, contents.records);
    spill(fs::path(o.out_dir) / "report.json", summary.dump(2) + "\n");
    return summary.contains("phase") && success(*engine::phase_from_string(summary["phase"].get<std::string>())) ? 0 : 1;
}

// ---------------------------------------------------------------- remote

httplib::Headers headers(const Options& o) { return {{"X-Client-Id", o.client}}; }

int print_reply(const httplib::Result& res) {
    if (!res) throw Failure(3, "request failed: " + httplib::to_string(res.error()));
    std::cout << json::parse(res->body).dump(2) << "\n";
    return res->status < 300 ? 0 : 1;
}

std::string need_id(const Options& o) {
    if (o.id.empty()) throw Failure(2, "--id is required");
    return o.id;
}

int cmd_status(const Options& o) {
    httplib::Client cli(o.server);
    return print_reply(cli.Get("/experiments/" + need_id(o), headers(o)));
}

int cmd_steer(const Options& o) {
    json body = json::object();
    if (!o.deadlines.empty()) body["deadline"] = o.deadlines.front();
    if (!o.budget.empty()) body["budget"] = o.budget;
    httplib::Client cli(o.server);
    return print_reply(cli.Patch("/experiments/" + need_id(o) + "/constraints", headers(o), body.dump(),
                                 "application/json"));
}

int cmd_control(const Options& o, const std::string& action) {
    httplib::Client cli(o.server);
    return print_reply(cli.Post("/experiments/" + need_id(o) + "/actions", headers(o),
                                json{{"action", action}}.dump(), "application/json"));
}

int cmd_run(const Options& o, bool wait) {
    if (o.deadlines.empty() || o.budget.empty()) throw Failure(2, "--deadline and --budget are required");
    json body{{"plan", slurp(o.plan)}, {"constraints", {{"deadline", o.deadlines.front()}, {"budget", o.budget}}},
              {"start", true}};
    httplib::Client cli(o.server);
    cli.set_read_timeout(std::chrono::hours(24));
    auto res = cli.Post("/experiments", headers(o), body.dump(), "application/json");
    if (!res) throw Failure(3, "request failed: " + httplib::to_string(res.error()));
    auto reply = json::parse(res->body);
    std::cout << reply.dump(2) << "\n";
    if (res->status != 201) return 1;
    if (!wait) return 0;
    std::string id = reply.at("id");
    std::string buffer;
    cli.Get("/experiments/" + id + "/events", headers(o), [&](const char* data, std::size_t n) {
        buffer.append(data, n);
        std::size_t end;
        while ((end = buffer.find("\n\n")) != std::string::npos) {
            std::string event = buffer.substr(0, end);
            buffer.erase(0, end + 2);
            auto at = event.find("data: ");
            if (at == std::string::npos) continue;
            auto rec = engine::decode_record(event.substr(at + 6));
            if (rec && rec->kind == "phase") std::cerr << "phase " << rec->payload.value("to", "") << "\n";
        }
        return true;
    });
    auto st = cli.Get("/experiments/" + id, headers(o));
    if (!st) throw Failure(3, "request failed: " + httplib::to_string(st.error()));
    auto snap = json::parse(st->body);
    std::cout << snap.dump(2) << "\n";
    return success(*engine::phase_from_string(snap.at("phase").get<std::string>())) ? 0 : 1;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const Options& o, const std::string& host, int port, const std::string& journal_dir, double speed) {
    service::ServiceOptions so;
    so.fabric = load_fabric(o);
    so.seed = o.seed;
    so.journal_dir = journal_dir;
    so.speed = speed;
    so.config.charge_failed = o.charge_failed;
    so.config.charge_integrated = o.charge_integrated;
    service::Service svc(std::move(so));
    httplib::Server server;
    svc.mount(server);
    g_server = &server;
    std::signal(SIGINT, [](int) { g_server->stop(); });
    std::signal(SIGTERM, [](int) { g_server->stop(); });
    int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Failure(3, "cannot listen on " + host + ":" + std::to_string(port));
    std::cout << "listening on http://" << host << ":" << bound << std::endl;
    server.listen_after_bind();
    svc.shutdown();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deadline and budget constrained parameter sweeps on a simulated grid"};
    app.require_subcommand(1);
    Options o;

    auto local = [&](CLI::App* c, bool outputs) {
        c->add_option("--plan", o.plan, "plan file");
        c->add_option("--fabric", o.fabric, "fabric JSON file");
        c->add_option("--synthesize", o.synthesize, "synthesize N resources when no --fabric is given");
        c->add_flag("--frozen", o.freeze, "turn off load, failures, outages and staging delays");
        c->add_option("--seed", o.seed, "random seed");
        c->add_option("--deadline", o.deadlines, "deadline from start, e.g. 10h or PT10H; repeat to compare");
        c->add_option("--budget", o.budget, "budget, e.g. 500.00");
        c->add_flag("--charge-failed", o.charge_failed, "charge failed attempts for the CPU they used");
        c->add_flag("--charge-integrated", o.charge_integrated, "charge across price changes during a run");
        if (outputs) c->add_option("--out-dir", o.out_dir, "where report files go");
    };
    auto remote = [&](CLI::App* c) {
        c->add_option("--server", o.server, "service base URL");
        c->add_option("--client-id", o.client, "sent as X-Client-Id");
    };

    auto* quote = app.add_subcommand("quote", "can the plan finish by the deadline within budget, and at what cost");
    local(quote, false);
    auto* simulate = app.add_subcommand("simulate", "run to completion on a simulated fabric and write reports");
    local(simulate, true);
    auto* report = app.add_subcommand("report", "rebuild report files from a journal");
    report->add_option("--journal", o.journal, "journal file (default: the .journal file in --out-dir)");
    report->add_option("--out-dir", o.out_dir, "where report files go");

    std::string host = "127.0.0.1", journal_dir = "journals";
    int port = 8080;
    double speed = 3600.0;
    auto* serve = app.add_subcommand("serve", "start the HTTP service");
    local(serve, false);
    serve->add_option("--host", host);
    serve->add_option("--port", port, "0 picks a free port");
    serve->add_option("--journal-dir", journal_dir);
    serve->add_option("--speed", speed, "simulated seconds per second; 0 runs flat out");

    bool wait = false;
    auto* run = app.add_subcommand("run", "create and start an experiment on a service");
    local(run, false);
    remote(run);
    run->add_flag("--wait", wait, "follow events until the experiment ends");
    auto* status = app.add_subcommand("status", "print an experiment's snapshot");
    remote(status);
    status->add_option("--id", o.id)->required();
    auto* steer = app.add_subcommand("steer", "change a running experiment's deadline or budget");
    remote(steer);
    steer->add_option("--id", o.id)->required();
    steer->add_option("--deadline", o.deadlines, "new deadline from creation");
    steer->add_option("--budget", o.budget, "new budget");
    std::string action;
    auto* control = app.add_subcommand("control", "start, pause, resume or abort an experiment");
    remote(control);
    control->add_option("--id", o.id)->required();
    control->add_option("action", action)->required()->check(CLI::IsMember({"start", "pause", "resume", "abort"}));

    CLI11_PARSE(app, argc, argv);
    try {
        if (*quote) return cmd_quote(o);
        if (*simulate) return cmd_simulate(o);
        if (*report) return cmd_report(o);
        if (*serve) return cmd_serve(o, host, port, journal_dir, speed);
        if (*run) return cmd_run(o, wait);
        if (*status) return cmd_status(o);
        if (*steer) return cmd_steer(o);
        if (*control) return cmd_control(o, action);
    } catch (const Failure& f) {
        std::cerr << f.what() << "\n";
        return f.code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
