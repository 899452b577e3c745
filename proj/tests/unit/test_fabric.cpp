#include <cmath>
#include <set>

#include "doctest.h"
#include "gridfarm/core/rng.hpp"
#include "gridfarm/fabric/fabric.hpp"

using namespace gridfarm;
using namespace gridfarm::fabric;

TEST_CASE("synthesize 70 resources") {
    auto c = synthesize_fabric(70, 42);
    REQUIRE(c.resources.size() == 70);
    std::set<std::string> ids;
    for (const auto& r : c.resources) {
        ids.insert(r.id);
        CHECK(r.capability >= 0.5 - 1e-9);
        CHECK(r.capability <= 4.0 + 1e-9);
        CHECK(r.slots >= 1);
        CHECK(r.failure_rate >= 0.0);
        CHECK(r.failure_rate < 1.0);
        CHECK(r.schedule);
    }
    CHECK(ids.size() == 70);
    CHECK_NOTHROW(validate(c));

    Fabric f(c, 42);
    CHECK(f.query("anyone").size() == 70);
}

TEST_CASE("same seed gives the same fabric field by field") {
    auto a = synthesize_fabric(70, 42);
    auto b = synthesize_fabric(70, 42);
    REQUIRE(a.resources.size() == b.resources.size());
    for (std::size_t i = 0; i < a.resources.size(); ++i) CHECK(a.resources[i] == b.resources[i]);
    CHECK(fabric_to_json(a) == fabric_to_json(b));

    auto other = synthesize_fabric(70, 43);
    bool differs = false;
    for (std::size_t i = 0; i < a.resources.size(); ++i) differs = differs || !(a.resources[i] == other.resources[i]);
    CHECK(differs);
}

TEST_CASE("adding resources leaves the existing ones alone") {
    auto small = synthesize_fabric(10, 7);
    auto big = synthesize_fabric(20, 7);
    for (std::size_t i = 0; i < small.resources.size(); ++i) CHECK(small.resources[i] == big.resources[i]);
}

TEST_CASE("fabric json round trip") {
    auto c = synthesize_fabric(12, 5);
    auto back = parse_fabric(fabric_to_json(c));
    REQUIRE(back.resources.size() == c.resources.size());
    for (std::size_t i = 0; i < c.resources.size(); ++i) CHECK(back.resources[i] == c.resources[i]);
    CHECK(back.origin_time_of_day == c.origin_time_of_day);
}

TEST_CASE("fabric config rejections") {
    const char* overlapping = R"({"resources":[{"id":"R1","capability":1,
        "cost":[{"start":"00:00","end":"13:00","rate":1},{"start":"12:00","end":"24:00","rate":2}]}]})";
    CHECK_THROWS_AS(parse_fabric(overlapping), InvalidFabric);

    const char* dup = R"({"resources":[{"id":"R1","capability":1,"cost":1},{"id":"R1","capability":2,"cost":1}]})";
    CHECK_THROWS_AS(parse_fabric(dup), InvalidFabric);

    CHECK_THROWS_AS(parse_fabric(R"({"resources":[{"id":"R1","capability":0,"cost":1}]})"), InvalidFabric);
    CHECK_THROWS_AS(parse_fabric(R"({"resources":[{"id":"R1","capability":1,"slots":0,"cost":1}]})"), InvalidFabric);
    CHECK_THROWS_AS(parse_fabric(R"({"resources":[{"id":"R1","capability":1,"failure_rate":1,"cost":1}]})"),
                    InvalidFabric);
    CHECK_THROWS_AS(parse_fabric("not json"), InvalidFabric);

    auto ok = parse_fabric(R"({"resources":[{"id":"R1","capability":2,"cost":{"day":"3.50","night":1}}]})");
    CHECK(ok.resources.at(0).capability == 2.0);
}

TEST_CASE("job duration") {
    SimResource r;
    r.capability = 2.0;
    auto d = job_duration(r, 1.0, 0.0, 0, 0.0);
    CHECK(d.cpu_hours == doctest::Approx(0.5));
    CHECK(d.wall_hours == doctest::Approx(0.5));

    r.capability = 1.0;
    CHECK(job_duration(r, 1.0, 0.5, 0, 0.0).wall_hours == doctest::Approx(2.0));

    r.queue_type = scheduler::QueueType::batch;
    r.mean_service_hours = 1.0;
    CHECK(job_duration(r, 1.0, 0.0, 3, 0.0).wall_hours == doctest::Approx(4.0));

    r.bandwidth_mb_s = 10.0;
    CHECK(job_duration(r, 1.0, 0.0, 0, 36000.0).wall_hours == doctest::Approx(2.0));
}

TEST_CASE("load walk stays in bounds and steps by at most its reflection") {
    SimResource r;
    r.id = "R01";
    r.load = {0.2, 0.05, 0.9};
    LoadWalk w(9, r, Seconds(300));
    LoadWalk again(9, r, Seconds(300));
    double prev = w.at(SimTime(0));
    CHECK(prev == doctest::Approx(0.2));
    for (int k = 1; k < 2000; ++k) {
        double v = w.at(SimTime(k * 300.0));
        CHECK(v >= 0.0);
        CHECK(v <= 0.9);
        CHECK(w.at(SimTime(k * 300.0 + 299.0)) == v);
        prev = v;
    }
    // Reading out of order gives the same path.
    CHECK(again.at(SimTime(1999 * 300.0)) == prev);
}

TEST_CASE("outage timeline is consistent") {
    SimResource r;
    r.id = "R02";
    r.outage = {10.0, 1.0};
    OutageTimeline t(3, r);
    OutageTimeline u(3, r);
    SimTime now(0.0);
    int changes = 0;
    bool up = t.up_at(now);
    CHECK(up);
    while (changes < 50) {
        SimTime next = t.next_change(now);
        REQUIRE(std::isfinite(next.count()));
        CHECK(next > now);
        CHECK(t.up_at(SimTime(next.count() - 1e-6)) == up);
        up = !up;
        CHECK(t.up_at(next) == up);
        CHECK(u.next_change(now) == next);
        now = next;
        ++changes;
    }

    SimResource steady;
    steady.id = "R03";
    OutageTimeline never(3, steady);
    CHECK(never.up_at(SimTime(1e9)));
    CHECK(std::isinf(never.next_change(SimTime(0)).count()));
}

TEST_CASE("frozen fabric has no variation") {
    auto c = frozen(synthesize_fabric(30, 11));
    for (const auto& r : c.resources) {
        CHECK(r.load.initial == 0.0);
        CHECK(r.load.sigma == 0.0);
        CHECK(r.failure_rate == 0.0);
        CHECK(r.outage.mtbf_hours == 0.0);
        CHECK(r.background_queue == 0);
        CHECK(r.schedule->segments().size() == 1);
    }
}

TEST_CASE("directory reflects authorization and status") {
    FabricConfig c;
    SimResource a;
    a.id = "A";
    a.schedule = std::make_shared<economy::CostSchedule>(economy::CostSchedule::flat(Money::from_units(1)));
    a.authorized_users = {"alice"};
    SimResource b = a;
    b.id = "B";
    b.authorized_users = {"*"};
    c.resources = {a, b};
    Fabric f(c, 1);
    auto views = f.query("bob");
    REQUIRE(views.size() == 2);
    CHECK_FALSE(views[0].authorized);
    CHECK(views[1].authorized);
    f.set_up(1, false);
    CHECK(f.query("bob")[1].status == scheduler::ResourceStatus::down);
    CHECK(f.query("alice")[0].authorized);
}
