#include <random>

#include "../support/oracles.hpp"
#include "doctest.h"
#include "gridfarm/economy/cost_schedule.hpp"
#include "gridfarm/economy/ledger.hpp"
#include "gridfarm/economy/quote.hpp"
#include "gridfarm/economy/tender.hpp"

using namespace gridfarm;
using namespace gridfarm::economy;

namespace {
Money units(double u) { return Money::from_units(u); }
double hm(int h, int m = 0) { return h * 3600.0 + m * 60.0; }
}  // namespace

TEST_CASE("money is exact fixed point") {
    CHECK(Money::parse("12.34").cents() == 1234);
    CHECK(Money::parse("7").cents() == 700);
    CHECK(Money::parse("-0.5").cents() == -50);
    CHECK_THROWS(Money::parse("1.234"));
    CHECK_THROWS(Money::parse("abc"));
    CHECK(Money::from_cents(-5).to_string() == "-0.05");
    CHECK(cost_of(1.5, units(6)) == units(9));
    Money sum;
    for (int i = 0; i < 10; ++i) sum += units(0.1);
    CHECK(sum == units(1.0));
}

TEST_CASE("cost_at looks up the band and applies the user factor") {
    CostSchedule s({{hm(8), hm(20), units(6)}, {hm(20), hm(8), units(2)}}, {{"alice", 0.5}});
    CHECK(cost_at(s, "bob", hm(21)) == units(2));
    CHECK(cost_at(s, "bob", hm(8)) == units(6));
    CHECK(cost_at(s, "bob", hm(7, 59)) == units(2));
    CHECK(cost_at(s, "bob", hm(20)) == units(2));
    CHECK(cost_at(s, "alice", hm(12)) == units(3));
    CHECK(s.boundaries() == std::vector<double>{hm(8), hm(20)});
}

TEST_CASE("schedules must partition the day") {
    CHECK_THROWS_AS(CostSchedule({{hm(8), hm(20), units(6)}, {hm(19), hm(8), units(2)}}), InvalidSchedule);
    CHECK_THROWS_AS(CostSchedule({{hm(8), hm(20), units(6)}, {hm(21), hm(8), units(2)}}), InvalidSchedule);
    CHECK_THROWS_AS(CostSchedule({{hm(0), hm(24), units(0)}}), InvalidSchedule);
    CHECK_THROWS_AS(CostSchedule({{hm(0), hm(24), units(1)}}, {{"u", 0.0}}), InvalidSchedule);
    CHECK_NOTHROW(CostSchedule({{hm(0), hm(24), units(1)}}));
}

TEST_CASE("property: cost_at is total over random partitions") {
    std::mt19937 rng(3);
    for (int iter = 0; iter < 300; ++iter) {
        int n = 1 + static_cast<int>(rng() % 5);
        std::vector<double> cuts;
        while (static_cast<int>(cuts.size()) < n) {
            double c = static_cast<double>(rng() % 1440) * 60.0;
            if (std::find(cuts.begin(), cuts.end(), c) == cuts.end()) cuts.push_back(c);
        }
        std::sort(cuts.begin(), cuts.end());
        std::vector<CostSegment> segs;
        for (int i = 0; i < n; ++i) {
            double start = cuts[static_cast<std::size_t>(i)];
            double end = i + 1 < n ? cuts[static_cast<std::size_t>(i + 1)] : cuts[0];
            if (n == 1) end = start == 0 ? kSecondsPerDay : start;
            if (n == 1 && start != 0) {
                segs.push_back({start, kSecondsPerDay, Money::from_cents(100 + i)});
                segs.push_back({0, start, Money::from_cents(500)});
                break;
            }
            segs.push_back({start, end == 0 ? kSecondsPerDay : end, Money::from_cents(100 + i)});
        }
        CostSchedule s(segs);
        for (int k = 0; k < 50; ++k) {
            double t = static_cast<double>(rng() % 86400);
            Money r = cost_at(s, "u", t);
            bool matched = false;
            for (const auto& seg : segs) {
                bool in = seg.end > seg.start ? (t >= seg.start && t < seg.end) : (t >= seg.start || t < seg.end);
                if (in) {
                    CHECK(r == seg.rate);
                    matched = true;
                }
            }
            CHECK(matched);
        }
    }
}

TEST_CASE("integrated cost spreads cpu time across a price change") {
    auto s = CostSchedule::day_night(units(6), units(2));
    // starts 19:00 (origin 08:00 + 11h), 2h wall, 2 cpu-h: 1h at 6 + 1h at 2.
    CHECK(integrated_cost(s, "u", 2.0, from_hours(11), from_hours(2), hm(8)) == units(8));
    CHECK(next_boundary(s.boundaries(), from_hours(0), hm(8)) == from_hours(12));
    CHECK(next_boundary(s.boundaries(), from_hours(12), hm(8)) == from_hours(24));
}

TEST_CASE("ledger charges, holds and refuses") {
    BudgetLedger l(units(20));
    l.reserve(1, units(9));
    CHECK(l.reserved() == units(9));
    CHECK(l.available() == units(11));
    auto e = l.charge(1, "R3", 1.5, units(6), 10, 36.0);
    CHECK(e.amount == units(9));
    CHECK(l.committed() == units(9));
    CHECK(l.reserved() == Money{});
    auto z = l.charge(2, "R3", 0.0, units(6), 11, 40.0);
    CHECK(z.amount == Money{});
    CHECK(l.entries().size() == 2);
    try {
        l.charge(1, "R3", 1.0, units(1), 12, 41.0);
        FAIL("double charge accepted");
    } catch (const LedgerError& err) {
        CHECK(err.kind() == LedgerError::Kind::double_charge);
    }
    try {
        l.charge(3, "R3", 2.0, units(6), 12, 41.0);
        FAIL("overspend accepted");
    } catch (const LedgerError& err) {
        CHECK(err.kind() == LedgerError::Kind::over_budget);
    }
    CHECK(l.committed() == l.recompute_committed());
    CHECK(l.to_csv() == "seq,t_sim,job_id,resource_id,cpu_hours,rate,amount\n"
                        "10,36.000,1,R3,1.500000,6.00,9.00\n"
                        "11,40.000,2,R3,0.000000,6.00,0.00\n");
    BudgetLedger advisory(units(1), false);
    CHECK_NOTHROW(advisory.charge(1, "R", 10, units(5), 1, 0));
    CHECK(advisory.committed() == units(50));
}

TEST_CASE("property: ledger conservation over random sequences") {
    std::mt19937 rng(11);
    BudgetLedger l(units(1000));
    for (std::uint64_t job = 0; job < 500; ++job) {
        double h = static_cast<double>(rng() % 400) / 100.0;
        Money rate = Money::from_cents(50 + rng() % 900);
        if (l.can_charge(job, cost_of(h, rate))) l.charge(job, "R", h, rate, job, 0);
        CHECK(l.committed() == l.recompute_committed());
        CHECK(l.committed() <= l.budget());
    }
}

namespace {
std::vector<scheduler::Candidate> abc() {
    return {{"A", 4, units(1), 0}, {"B", 2, units(2), 0}, {"C", 1, units(5), 0}};
}
}  // namespace

TEST_CASE("quote examples") {
    auto rs = abc();
    auto q = quote(10, from_hours(2), units(20), rs);
    CHECK(q.feasible);
    CHECK(q.projected_cost == units(12));
    REQUIRE(q.assumed_resources.size() == 2);
    CHECK(q.assumed_resources[0].resource_id == "A");
    CHECK(q.assumed_resources[1].resource_id == "B");

    // Oracle: cheapest feasible subset by enumeration.
    auto best = oracle::cheapest_feasible_subset({{16, 100}, {8, 200}, {4, 500}}, 10, 8);
    REQUIRE(best);
    CHECK(best->cost_cents == 1200);
    CHECK(best->mask == 0b011);

    auto tight = quote(10, from_hours(0.5), units(20), rs);
    CHECK_FALSE(tight.feasible);
    CHECK(tight.reason.find("deadline") != std::string::npos);
    CHECK_FALSE(oracle::cheapest_feasible_subset({{16, 100}, {8, 200}, {4, 500}}, 10, 2));

    auto poor = quote(10, from_hours(2), units(5), rs);
    CHECK_FALSE(poor.feasible);
    CHECK(poor.reason.find("budget") != std::string::npos);

    auto none = quote(10, from_hours(2), units(5), {});
    CHECK_FALSE(none.feasible);
    CHECK(none.reason == "no authorized resources available");
}

TEST_CASE("tender accepts cheapest bids first") {
    auto r = run_tender({5, from_hours(1)}, {{"B", units(3), 4, {}, {}}, {"A", units(2), 4, {}, {}}});
    REQUIRE(r.accepted.size() == 2);
    CHECK(r.accepted[0].bid.resource_id == "A");
    CHECK(r.accepted[0].slots == 4);
    CHECK(r.accepted[1].bid.resource_id == "B");
    CHECK(r.accepted[1].slots == 1);
    CHECK_FALSE(r.partial);
    CHECK(r.rate_weighted_cost().cents() == oracle::cheapest_cover({{200, 4}, {300, 4}}, 5));

    auto exact = run_tender({3, from_hours(1)}, {{"X", units(9), 3, {}, {}}});
    REQUIRE(exact.accepted.size() == 1);
    CHECK(exact.accepted[0].slots == 3);

    auto tie = run_tender({1, from_hours(1)}, {{"Z", units(1), 1, {}, {}}, {"Y", units(1), 1, {}, {}}});
    CHECK(tie.accepted[0].bid.resource_id == "Y");

    auto short_run = run_tender({10, from_hours(1)}, {{"A", units(1), 2, {}, {}}});
    CHECK(short_run.partial);
    CHECK(short_run.slots_covered() == 2);

    CHECK_THROWS_AS(run_tender({1, from_hours(1)}, {}), NoCapacityOffered);
}

TEST_CASE("bids follow the schedule with markup") {
    auto s = CostSchedule::day_night(units(6), units(2));
    auto b = make_bid("R1", s, "u", from_hours(1), hm(8), 1.5, 2, from_hours(3));
    CHECK(b.rate == units(9));
    CHECK(b.capacity == 2);
    CHECK(b.valid_until == from_hours(4));
    auto night = make_bid("R1", s, "u", from_hours(13), hm(8), 1.0, 1, from_hours(1));
    CHECK(night.rate == units(2));
}

TEST_CASE("property: greedy tender equals brute-force cheapest cover for up to 6 bidders") {
    std::mt19937 rng(5);
    for (int iter = 0; iter < 400; ++iter) {
        int n = 1 + static_cast<int>(rng() % 6);
        std::vector<Bid> bids;
        std::vector<oracle::Offer> offers;
        for (int i = 0; i < n; ++i) {
            std::int64_t cents = 100 + static_cast<std::int64_t>(rng() % 6) * 50;
            int cap = 1 + static_cast<int>(rng() % 4);
            bids.push_back({"R" + std::to_string(i), Money::from_cents(cents), cap, {}, {}});
            offers.push_back({cents, cap});
        }
        int request = 1 + static_cast<int>(rng() % 12);
        auto r = run_tender({request, from_hours(1)}, bids);
        CHECK(r.rate_weighted_cost().cents() == oracle::cheapest_cover(offers, request));
    }
}
