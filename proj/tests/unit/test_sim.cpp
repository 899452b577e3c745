#include <map>
#include <set>

#include "../support/worlds.hpp"
#include "doctest.h"
#include "gridfarm/sim/simulation.hpp"

using namespace gridfarm;
using json = nlohmann::json;

namespace {

engine::ExperimentSpec spec_for(int jobs, double deadline_h, double budget = 1e6, double hours = 1.0) {
    engine::ExperimentSpec s;
    s.id = "sim";
    s.plan = worlds::sweep_plan(jobs, hours);
    s.constraints.deadline = from_hours(deadline_h);
    s.constraints.budget = Money::from_units(budget);
    return s;
}

struct Run {
    std::string journal;
    std::vector<std::string> trace;
    engine::Snapshot snap;
    sim::RunResult result;
};

Run run(const sim::SessionSetup& setup, const engine::ExperimentSpec& spec) {
    auto sink = std::make_unique<engine::MemoryJournal>();
    auto* j = sink.get();
    sim::Session s(setup, spec, std::move(sink));
    s.start();
    Run r;
    r.result = s.run();
    r.journal = j->text();
    r.trace = s.sim().trace();
    r.snap = s.engine().snapshot();
    return r;
}

}  // namespace

TEST_CASE("six jobs on two fast resources complete") {
    auto r = run({worlds::two_fast(), 1, {}}, spec_for(6, 10));
    CHECK(r.result.status == sim::RunResult::Status::terminal);
    CHECK(r.snap.phase == engine::Phase::completed);
    CHECK(r.snap.counts.at(engine::JobState::done) == 6);
    REQUIRE_FALSE(r.trace.empty());
    CHECK(json::parse(r.trace.back()).at("kind") == "experiment_completed");
}

TEST_CASE("no resources halts the experiment") {
    auto r = run({fabric::FabricConfig{}, 1, {}}, spec_for(6, 10));
    CHECK(r.result.status == sim::RunResult::Status::terminal);
    CHECK(r.snap.phase == engine::Phase::aborted);
    CHECK(r.snap.phase_reason.find("infeasible") != std::string::npos);
    CHECK(r.trace.size() < 10);
}

TEST_CASE("no engine means the queue runs dry") {
    fabric::FabricConfig c;
    sim::Simulation s(c, 1, {Seconds(120), SimTime(3600)});
    auto result = s.run_until();
    CHECK(result.status == sim::RunResult::Status::stalled);
    CHECK_FALSE(result.diagnostic.empty());
}

TEST_CASE("same inputs give byte-identical journals and traces") {
    sim::SessionSetup setup{fabric::synthesize_fabric(20, 9), 9, {}};
    auto spec = spec_for(80, 12, 5000);
    auto a = run(setup, spec);
    auto b = run(setup, spec);
    CHECK(a.journal == b.journal);
    CHECK(a.trace == b.trace);

    sim::SessionSetup other{fabric::synthesize_fabric(20, 9), 10, {}};
    CHECK(run(other, spec).trace != a.trace);
}

TEST_CASE("causality, FIFO order and slot conservation") {
    auto cfg = fabric::synthesize_fabric(15, 4);
    cfg.resources[0].slots = 2;
    cfg.resources[1].slots = 3;
    std::map<std::string, int> slots;
    for (const auto& res : cfg.resources) slots[res.id] = res.slots;
    sim::SessionSetup setup{cfg, 4, {}};
    auto r = run(setup, spec_for(120, 15, 1e5));

    // Submission order per resource, from the journal.
    std::map<std::string, std::vector<std::pair<std::uint64_t, int>>> submitted;
    for (const auto& rec : engine::read_journal_text(r.journal).records) {
        if (rec.kind == "job" && rec.payload.at("event") == "dispatch") {
            submitted[rec.payload.at("resource")].emplace_back(rec.payload.at("job"), rec.payload.at("attempt"));
        }
    }

    std::map<std::pair<std::uint64_t, int>, double> started;
    std::map<std::string, std::vector<std::pair<std::uint64_t, int>>> start_order;
    std::map<std::string, int> running;
    double last_t = 0;
    int finishes = 0;
    for (const auto& line : r.trace) {
        auto e = json::parse(line);
        double t = e.at("t");
        CHECK(t >= last_t);
        last_t = t;
        if (e.at("kind") == "job_start") {
            std::pair<std::uint64_t, int> key{e.at("job"), e.at("attempt")};
            started[key] = t;
            std::string res = e.at("resource");
            start_order[res].push_back(key);
            CHECK(++running[res] <= slots[res]);
        } else if (e.at("kind") == "job_finish") {
            std::pair<std::uint64_t, int> key{e.at("job"), e.at("attempt")};
            REQUIRE(started.count(key));
            CHECK(started[key] <= t);
            --running[e.at("resource").get<std::string>()];
            ++finishes;
        } else if (e.at("kind") == "resource_down") {
            running[e.at("resource").get<std::string>()] = 0;
        }
    }
    CHECK(finishes > 0);
    // Starts on each resource follow submission order (cancelled attempts
    // drop out without reordering the rest).
    for (const auto& [res, order] : start_order) {
        const auto& sub = submitted[res];
        std::size_t k = 0;
        for (const auto& key : order) {
            while (k < sub.size() && sub[k] != key) ++k;
            CHECK(k < sub.size());
        }
    }
}

TEST_CASE("frozen throughput matches capability") {
    fabric::FabricConfig c;
    c.resources = {worlds::quiet_resource("solo", 2.5, 1.0)};
    c = fabric::frozen(c);
    sim::SessionSetup setup{c, 2, {Seconds(120), SimTime(100 * kSecondsPerDay)}};
    auto spec = spec_for(2000, 2000, 1e7);
    auto r = run(setup, spec);
    REQUIRE(r.snap.phase == engine::Phase::completed);
    double first_start = -1, last_finish = 0;
    for (const auto& line : r.trace) {
        auto e = json::parse(line);
        if (e.at("kind") == "job_start" && first_start < 0) first_start = e.at("t");
        if (e.at("kind") == "job_finish") last_finish = e.at("t");
    }
    double per_hour = 2000.0 / ((last_finish - first_start) / 3600.0);
    CHECK(per_hour == doctest::Approx(2.5).epsilon(0.001));
}

TEST_CASE("a crash fails everything on the resource") {
    auto cfg = worlds::two_fast();
    cfg.resources[0].outage = {2.0, 0.5};
    auto r = run({cfg, 5, {}}, spec_for(40, 100, 1e5, 4.0));
    CHECK(r.result.status == sim::RunResult::Status::terminal);
    std::set<double> downs;
    for (const auto& line : r.trace) {
        auto e = json::parse(line);
        if (e.at("kind") == "resource_down") {
            CHECK(e.at("resource") == "fast-a");
            downs.insert(e.at("t").get<double>());
        }
    }
    REQUIRE_FALSE(downs.empty());
    int crashed = 0;
    std::map<double, int> lost_at;
    for (const auto& rec : engine::read_journal_text(r.journal).records) {
        if (rec.kind == "job" && rec.payload.at("event") == "fail" &&
            rec.payload.value("reason", std::string()) == "resource crashed") {
            ++crashed;
            CHECK(downs.count(rec.t_sim) == 1);
            ++lost_at[rec.t_sim];
        }
    }
    CHECK(crashed > 0);
    for (const auto& [t, n] : lost_at) CHECK(n >= 1);
}
