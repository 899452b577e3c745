#include <atomic>
#include <thread>

#include "../support/worlds.hpp"
#include "doctest.h"
#include "gridfarm/engine/engine.hpp"
#include "gridfarm/sim/simulation.hpp"

using namespace gridfarm;
using namespace gridfarm::engine;
using json = nlohmann::json;

namespace {

ExperimentSpec six_jobs(double deadline_h = 2.0, double budget = 100.0) {
    ExperimentSpec s;
    s.id = "exp-1";
    s.plan = worlds::sweep_plan(6);
    s.constraints.deadline = from_hours(deadline_h);
    s.constraints.budget = Money::from_units(budget);
    return s;
}

std::uint64_t total(const Snapshot& s) {
    std::uint64_t n = 0;
    for (const auto& [state, c] : s.counts) n += c;
    return n;
}

struct Manual {
    MemoryJournal* journal;
    std::unique_ptr<Engine> engine;
};

Manual manual(ExperimentSpec spec = six_jobs()) {
    auto sink = std::make_unique<MemoryJournal>();
    auto* j = sink.get();
    return {j, std::make_unique<Engine>(std::move(spec), std::move(sink))};
}

void run_to_running(Engine& e, std::uint64_t job, const std::string& resource, double t = 0.0) {
    e.apply_transition(job, JobEvent::dispatch, SimTime(t), {{"resource", resource}, {"rate", 600}, {"cpu_hours", 1.5}});
    e.apply_transition(job, JobEvent::submit, SimTime(t));
    e.apply_transition(job, JobEvent::start, SimTime(t));
}

}  // namespace

TEST_CASE("create an experiment with six jobs") {
    auto m = manual();
    auto snap = m.engine->snapshot();
    CHECK(snap.phase == Phase::ready);
    CHECK(snap.total_jobs == 6);
    CHECK(snap.counts.at(JobState::waiting) == 6);
    CHECK(total(snap) == 6);
    for (auto s : {JobState::scheduled, JobState::staging, JobState::running, JobState::completing, JobState::done,
                   JobState::failed, JobState::aborted}) {
        CHECK(snap.counts.at(s) == 0);
    }

    auto negotiating = six_jobs();
    negotiating.negotiate = true;
    CHECK(manual(negotiating).engine->phase() == Phase::negotiating);
}

TEST_CASE("constraints are validated") {
    auto zero = six_jobs(2.0, 0.0);
    CHECK_THROWS_WITH_AS(manual(zero), "budget must be positive", InvalidConstraints);
    auto no_time = six_jobs(0.0, 100.0);
    CHECK_THROWS_AS(manual(no_time), InvalidConstraints);
}

TEST_CASE("the first journal record carries the whole plan") {
    auto m = manual();
    auto contents = read_journal_text(m.journal->text());
    REQUIRE(contents.clean());
    const auto& first = contents.records.front();
    CHECK(first.seq == 1);
    CHECK(first.kind == "experiment_created");
    auto reparsed = plan::parse_plan(first.payload.at("plan").get<std::string>());
    REQUIRE(reparsed.ok());
    CHECK(plan::print_plan(*reparsed.plan) == plan::print_plan(m.engine->plan()));
    CHECK(first.payload.at("budget").get<std::int64_t>() == 10000);
    CHECK(first.payload.at("deadline").get<double>() == doctest::Approx(7200.0));
}

TEST_CASE("legal transitions") {
    auto m = manual();
    auto& e = *m.engine;
    e.apply_transition(0, JobEvent::dispatch, SimTime(10), {{"resource", "R3"}, {"rate", 600}, {"cpu_hours", 1.5}});
    auto j = e.job(0);
    CHECK(j.state == JobState::scheduled);
    CHECK(j.resource == std::optional<std::string>("R3"));

    e.apply_transition(0, JobEvent::submit, SimTime(20));
    e.apply_transition(0, JobEvent::start, SimTime(30));
    e.apply_transition(0, JobEvent::stage_out, SimTime(40));
    e.apply_transition(0, JobEvent::complete, SimTime(50), {{"cpu_hours", 1.5}, {"amount", 900}});
    j = e.job(0);
    CHECK(j.state == JobState::done);
    CHECK(j.cost_incurred == Money::from_units(9.0));
    CHECK(j.finalized);
    CHECK(e.snapshot().committed == Money::from_units(9.0));
    CHECK(j.timestamps.at(JobState::scheduled) == 10.0);
    CHECK(j.timestamps.at(JobState::done) == 50.0);
}

TEST_CASE("an illegal transition is refused and journaled") {
    auto m = manual();
    auto& e = *m.engine;
    run_to_running(e, 0, "R1");
    e.apply_transition(0, JobEvent::stage_out, SimTime(1));
    e.apply_transition(0, JobEvent::complete, SimTime(2), {{"amount", 100}});
    auto before = e.job(0);
    std::uint64_t seq = e.last_seq();
    CHECK_THROWS_AS(e.apply_transition(0, JobEvent::dispatch, SimTime(3), {{"resource", "R1"}}), IllegalState);
    CHECK(e.job(0).state == before.state);
    CHECK(e.job(0).cost_incurred == before.cost_incurred);
    auto recs = read_journal_text(m.journal->text()).records;
    REQUIRE(recs.back().seq == seq + 1);
    CHECK(recs.back().kind == "anomaly");

    CHECK_THROWS_AS(e.apply_transition(1, JobEvent::start, SimTime(3)), IllegalState);
    CHECK(e.job(1).state == JobState::waiting);
}

TEST_CASE("retry cap") {
    auto m = manual();
    auto& e = *m.engine;
    for (int k = 0; k < 3; ++k) {
        run_to_running(e, 2, "R1", k);
        e.apply_transition(2, JobEvent::fail, SimTime(k + 0.5), {{"reason", "boom"}});
        if (k < 2) e.apply_transition(2, JobEvent::retry, SimTime(k + 0.5));
    }
    CHECK(e.job(2).state == JobState::failed);
    CHECK(e.job(2).attempt == 3);
    CHECK_THROWS_AS(e.apply_transition(2, JobEvent::retry, SimTime(5)), IllegalState);
}

TEST_CASE("journal sequence numbers are gapless and every prefix replays") {
    auto m = manual();
    auto& e = *m.engine;
    run_to_running(e, 0, "R1");
    run_to_running(e, 1, "R2");
    e.apply_transition(0, JobEvent::stage_out, SimTime(100));
    e.apply_transition(0, JobEvent::complete, SimTime(100), {{"amount", 250}});
    auto lines = m.journal->lines();
    for (std::size_t n = 1; n <= lines.size(); ++n) {
        std::string prefix;
        for (std::size_t i = 0; i < n; ++i) prefix += lines[i] + "\n";
        auto contents = read_journal_text(prefix);
        REQUIRE(contents.clean());
        for (std::size_t i = 0; i < contents.records.size(); ++i) CHECK(contents.records[i].seq == i + 1);
        auto r = Engine::recover(contents, std::make_unique<MemoryJournal>(), SimTime(200));
        CHECK(total(r->snapshot()) == 6);
    }
}

TEST_CASE("recovery") {
    SUBCASE("empty journal") {
        CHECK_THROWS_WITH_AS(Engine::recover(read_journal_text(""), std::make_unique<MemoryJournal>(), SimTime(0)),
                             "no experiment-created record", RecoveryError);
    }
    SUBCASE("two jobs caught running go back to waiting") {
        auto m = manual();
        run_to_running(*m.engine, 0, "R1");
        run_to_running(*m.engine, 1, "R2");
        RecoveryReport report;
        auto r = Engine::recover(read_journal_text(m.journal->text()), std::make_unique<MemoryJournal>(), SimTime(60),
                                 &report);
        CHECK(report.requeued == std::vector<std::uint64_t>{0, 1});
        CHECK_FALSE(report.torn_tail);
        for (std::uint64_t j : {0, 1}) {
            CHECK(r->job(j).state == JobState::waiting);
            CHECK(r->job(j).attempt == 1);
            CHECK_FALSE(r->job(j).resource.has_value());
        }
        CHECK(r->snapshot().reserved == Money{});
        CHECK(r->snapshot().counts.at(JobState::waiting) == 6);
    }
    SUBCASE("torn final line is ignored") {
        auto m = manual();
        run_to_running(*m.engine, 0, "R1");
        std::string text = m.journal->text();
        text += text.substr(0, 20);  // half a record, no newline
        RecoveryReport report;
        auto contents = read_journal_text(text);
        CHECK(contents.torn_tail);
        auto r = Engine::recover(contents, std::make_unique<MemoryJournal>(), SimTime(60), &report);
        CHECK(report.torn_tail);
        CHECK(r->job(0).state == JobState::waiting);
    }
    SUBCASE("corruption mid-stream stops at the last valid record") {
        auto m = manual();
        run_to_running(*m.engine, 0, "R1");
        run_to_running(*m.engine, 1, "R1");
        auto lines = m.journal->lines();
        std::string text;
        for (std::size_t i = 0; i < lines.size(); ++i) {
            std::string l = lines[i];
            if (i == 3) l[l.size() / 2] = l[l.size() / 2] == 'x' ? 'y' : 'x';
            text += l + "\n";
        }
        auto contents = read_journal_text(text);
        REQUIRE(contents.corrupt_line.has_value());
        CHECK(*contents.corrupt_line == 4);
        CHECK(contents.records.size() == 3);
        RecoveryReport report;
        auto r = Engine::recover(contents, std::make_unique<MemoryJournal>(), SimTime(60), &report);
        CHECK(report.truncated_at_line == contents.corrupt_line);
        CHECK(report.last_seq == 3);
        CHECK(r->job(1).state == JobState::waiting);
        CHECK(r->job(1).attempt == 0);
    }
}

TEST_CASE("a completed run recovers to the same final state") {
    sim::SessionSetup setup{worlds::two_fast(), 3, {}};
    auto spec = six_jobs(10.0, 1000.0);
    auto sink = std::make_unique<MemoryJournal>();
    auto* journal = sink.get();
    sim::Session live(setup, spec, std::move(sink));
    live.start();
    live.run();
    auto a = live.engine().snapshot();
    REQUIRE(a.phase == Phase::completed);

    auto r = Engine::recover(read_journal_text(journal->text()), std::make_unique<MemoryJournal>(), a.now);
    auto b = r->snapshot();
    CHECK(b.phase == Phase::completed);
    CHECK(b.counts == a.counts);
    CHECK(b.counts.at(JobState::done) == 6);
    CHECK(b.committed == a.committed);
    CHECK(r->ledger_entries() == live.engine().ledger_entries());
    for (std::uint64_t j = 0; j < 6; ++j) {
        CHECK(r->job(j).cost_incurred == live.engine().job(j).cost_incurred);
        CHECK(r->job(j).resource == live.engine().job(j).resource);
    }
}

TEST_CASE("steering") {
    sim::SessionSetup setup{worlds::two_fast(), 3, {}};
    auto spec = ExperimentSpec{};
    spec.id = "steer";
    spec.plan = worlds::sweep_plan(60, 2.0);
    spec.constraints.deadline = from_hours(20);
    spec.constraints.budget = Money::from_units(10000);

    SUBCASE("tightening the deadline re-plans within one cycle") {
        auto sink = std::make_unique<MemoryJournal>();
        auto* journal = sink.get();
        sim::Session s(setup, spec, std::move(sink));
        s.start();
        s.run({SimTime(3600)});
        SimTime at = s.sim().now();
        s.engine().steer(from_hours(10), std::nullopt, at, "client-7");
        s.run({at + Seconds(120)});
        bool steered = false, replanned = false;
        for (const auto& r : read_journal_text(journal->text()).records) {
            if (r.kind == "steer") {
                steered = true;
                CHECK(r.payload.at("client") == "client-7");
                CHECK(r.payload.at("reason") == "deadline changed");
            }
            if (steered && r.kind == "replan" && r.payload.at("reason") == "deadline changed") {
                CHECK(r.t_sim <= at.count() + 120.0);
                replanned = true;
            }
        }
        CHECK(replanned);
        CHECK(s.engine().constraints().deadline == from_hours(10));
    }
    SUBCASE("budget below spend ends in budget_exhausted") {
        sim::Session s(setup, spec, std::make_unique<MemoryJournal>());
        s.start();
        s.run({SimTime(4 * 3600)});
        auto spent = s.engine().snapshot().committed;
        REQUIRE(spent > Money{});
        s.engine().steer(std::nullopt, Money::from_cents(std::max<std::int64_t>(1, spent.cents() / 2)), s.sim().now());
        s.run();
        CHECK(s.engine().phase() == Phase::budget_exhausted);
        CHECK(s.engine().snapshot().committed == spent);
    }
    SUBCASE("a finished experiment cannot be steered") {
        auto small = six_jobs(10.0, 1000.0);
        sim::Session s(setup, small, std::make_unique<MemoryJournal>());
        s.start();
        s.run();
        REQUIRE(s.engine().phase() == Phase::completed);
        CHECK_THROWS_AS(s.engine().steer(from_hours(20), std::nullopt, s.sim().now()), IllegalState);
    }
    SUBCASE("invalid values are rejected") {
        sim::Session s(setup, spec, std::make_unique<MemoryJournal>());
        s.start();
        s.run({SimTime(7200)});
        CHECK_THROWS_AS(s.engine().steer(SimTime(3600), std::nullopt, s.sim().now()), InvalidConstraints);
        CHECK_THROWS_AS(s.engine().steer(std::nullopt, Money{}, s.sim().now()), InvalidConstraints);
    }
}

TEST_CASE("actions follow the phase rules") {
    auto m = manual();
    auto& e = *m.engine;
    CHECK_THROWS_AS(e.act(Engine::Action::pause, SimTime(0)), IllegalState);
    e.act(Engine::Action::start, SimTime(0));
    CHECK(e.phase() == Phase::running);
    e.act(Engine::Action::pause, SimTime(1));
    CHECK(e.phase() == Phase::paused);
    e.act(Engine::Action::resume, SimTime(2));
    e.act(Engine::Action::abort, SimTime(3), "ops");
    CHECK(e.phase() == Phase::aborted);
    CHECK(e.snapshot().counts.at(JobState::aborted) == 6);
    CHECK_THROWS_AS(e.act(Engine::Action::start, SimTime(4)), IllegalState);
}

TEST_CASE("snapshots stay consistent under concurrent transitions") {
    ExperimentSpec spec;
    spec.id = "stress";
    spec.plan = worlds::sweep_plan(250);
    spec.constraints.deadline = from_hours(100);
    spec.constraints.budget = Money::from_units(1e6);
    auto m = manual(spec);
    auto& e = *m.engine;
    std::atomic<bool> done{false};
    std::atomic<int> seen{0}, bad{0};
    std::thread reader([&] {
        while (!done) {
            auto s = e.snapshot();
            if (total(s) != 250) ++bad;
            ++seen;
        }
    });
    int transitions = 0;
    for (std::uint64_t j = 0; j < 200; ++j) {
        double t = static_cast<double>(j);
        e.apply_transition(j, JobEvent::dispatch, SimTime(t), {{"resource", "R" + std::to_string(j % 7)}, {"rate", 100}});
        e.apply_transition(j, JobEvent::submit, SimTime(t));
        e.apply_transition(j, JobEvent::start, SimTime(t));
        e.apply_transition(j, JobEvent::stage_out, SimTime(t));
        e.apply_transition(j, JobEvent::complete, SimTime(t), {{"amount", 100}});
        transitions += 5;
    }
    done = true;
    reader.join();
    CHECK(transitions == 1000);
    CHECK(seen > 0);
    CHECK(bad == 0);
    CHECK(e.snapshot().counts.at(JobState::done) == 200);
}
