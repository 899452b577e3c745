#include <algorithm>
#include <random>

#include "../support/oracles.hpp"
#include "doctest.h"
#include "gridfarm/scheduler/rate.hpp"
#include "gridfarm/scheduler/resource_view.hpp"
#include "gridfarm/scheduler/select.hpp"

using namespace gridfarm;
using namespace gridfarm::scheduler;

namespace {

Money units(double u) { return Money::from_units(u); }

std::vector<Candidate> abc() {
    return {{"A", 4, units(1), 0}, {"B", 2, units(2), 0}, {"C", 1, units(5), 0}};
}

class FakeDirectory : public ResourceDirectory {
public:
    std::vector<ResourceView> views;
    std::vector<std::string> allowed_users;
    std::vector<ResourceView> query(const std::string& user) const override {
        auto out = views;
        bool ok = std::find(allowed_users.begin(), allowed_users.end(), user) != allowed_users.end();
        for (auto& v : out) v.authorized = ok;
        return out;
    }
};

}  // namespace

TEST_CASE("select_resources picks the cheapest deadline-feasible prefix") {
    auto rs = abc();
    auto d = select_resources(10, from_hours(2), rs, units(100));
    CHECK(d.selected_ids() == std::vector<std::string>{"A", "B"});
    CHECK(d.projected_cost == units(12));
    CHECK(d.feasible_deadline);
    CHECK(d.feasible_budget);
    CHECK(*d.selected[0].allotment == 8);
    CHECK(*d.selected[1].allotment == 2);
    CHECK(d.projected_finish == from_hours(2));

    auto tight = select_resources(10, from_hours(1), rs, units(100));
    CHECK(tight.selected_ids() == std::vector<std::string>{"A", "B", "C"});
    CHECK_FALSE(tight.feasible_deadline);
    CHECK_FALSE(tight.selected[0].allotment.has_value());

    auto none = select_resources(0, from_hours(2), rs, units(100));
    CHECK(none.selected.empty());
    CHECK(none.feasible_deadline);
    CHECK(none.feasible_budget);
    CHECK(none.projected_cost == Money{});

    auto empty = select_resources(3, from_hours(2), {}, units(100));
    CHECK(empty.selected.empty());
    CHECK_FALSE(empty.feasible_deadline);
    CHECK_FALSE(empty.feasible_budget);

    auto poor = select_resources(10, from_hours(2), rs, units(5));
    CHECK(poor.feasible_deadline);
    CHECK_FALSE(poor.feasible_budget);
    CHECK(poor.selected_ids() == std::vector<std::string>{"A", "B"});
}

TEST_CASE("ties in per-job cost break on resource id") {
    std::vector<Candidate> rs{{"Z", 1, units(1), 0}, {"M", 1, units(1), 0}};
    auto d = select_resources(1, from_hours(1), rs, units(10));
    CHECK(d.selected_ids() == std::vector<std::string>{"M"});
}

TEST_CASE("backlog shrinks capacity") {
    Candidate busy{"A", 4, units(1), 1.5};
    CHECK(capacity_within(busy, from_hours(2)) == 2);
    CHECK(capacity_within(busy, from_hours(1)) == 0);
    CHECK(capacity_within({"B", 3, units(1), 0}, from_hours(1.0 / 3.0 * 2.0)) == 2);
}

TEST_CASE("quotas follow rate, cycle and pipeline factor") {
    SelectParams p{0.5, 2.0};
    CHECK(quota_for(4, p) == 4);
    CHECK(quota_for(0.1, p) == 1);
    CHECK(quota_for(2, SelectParams{}) == 1);
}

TEST_CASE("assign fills cheapest first up to quota") {
    std::vector<Selection> sel{{"A", 4, std::nullopt, 4, units(1)}, {"B", 2, std::nullopt, 2, units(2)}};
    std::vector<std::uint64_t> six{0, 1, 2, 3, 4, 5};
    auto orders = assign(six, sel, {});
    REQUIRE(orders.size() == 6);
    for (int i = 0; i < 4; ++i) CHECK(orders[static_cast<std::size_t>(i)].resource == "A");
    CHECK(orders[4] == Assignment{4, "B"});
    CHECK(orders[5] == Assignment{5, "B"});

    CHECK(assign(six, sel, {{"A", 4}, {"B", 2}}).empty());

    std::vector<std::uint64_t> three{7, 8, 9};
    auto partial = assign(three, sel, {{"A", 2}});
    REQUIRE(partial.size() == 3);
    CHECK(partial[0] == Assignment{7, "A"});
    CHECK(partial[1] == Assignment{8, "A"});
    CHECK(partial[2] == Assignment{9, "B"});

    std::vector<Selection> limited{{"A", 4, 1, 4, units(1)}, {"B", 2, 0, 2, units(2)}};
    CHECK(assign(three, limited, {}).size() == 1);
}

TEST_CASE("replan trigger rules") {
    CHECK(replan_trigger(ReplanEvent::constraints_steered));
    CHECK(replan_trigger(ReplanEvent::resource_down));
    CHECK(replan_trigger(ReplanEvent::tick));
    CHECK_FALSE(replan_trigger(ReplanEvent::completion, 3, false));
    CHECK(replan_trigger(ReplanEvent::completion, 5, false));
    CHECK(replan_trigger(ReplanEvent::completion, 1, true));
}

TEST_CASE("rate estimation") {
    ResourceView v;
    v.id = "R";
    v.capability = 2.0;
    CHECK(estimate_rate({}, v, 1.0).jobs_per_hour == doctest::Approx(2.0));
    std::vector<double> one{4.0};
    CHECK(estimate_rate(one, v, 1.0).jobs_per_hour == doctest::Approx(2.6));
    CHECK(estimate_rate(one, v, 1.0).samples == 1);

    // Oracle: iterate the recurrence. From any start within 100% of the
    // observed rate, 14 observations land within 1%.
    for (double start : {0.05, 1.0, 2.0, 7.5, 10.0}) {
        int k = oracle::ewma_steps_to_converge(start, 5.0, 0.3, 0.01);
        CHECK(k > 0);
        CHECK(k <= 14);
        v.capability = start;
        std::vector<double> constant(14, 5.0);
        CHECK(std::abs(estimate_rate(constant, v, 1.0).jobs_per_hour - 5.0) <= 0.01 * 5.0);
        constant.resize(static_cast<std::size_t>(k - 1));
        CHECK(std::abs(estimate_rate(constant, v, 1.0).jobs_per_hour - 5.0) > 0.01 * 5.0);
    }
}

TEST_CASE("discover returns authorized resources and flags down ones") {
    FakeDirectory dir;
    for (int i = 0; i < 70; ++i) {
        ResourceView v;
        v.id = "R" + std::to_string(i);
        dir.views.push_back(v);
    }
    dir.allowed_users = {"alice"};
    CHECK(discover(dir, "alice").size() == 70);
    CHECK(discover(dir, "mallory").empty());
    dir.views[3].status = ResourceStatus::down;
    auto views = discover(dir, "alice");
    CHECK(views[3].status == ResourceStatus::down);
}

namespace {

struct Instance {
    std::vector<oracle::Res> res;
    std::vector<Candidate> cands;
    std::uint64_t jobs;
    int t_quarters;
};

Instance random_instance(std::mt19937& rng) {
    Instance in;
    int n = 1 + static_cast<int>(rng() % 6);
    for (int i = 0; i < n; ++i) {
        oracle::Res r{1 + static_cast<int>(rng() % 24), 50 + static_cast<std::int64_t>(rng() % 20) * 25};
        in.res.push_back(r);
        in.cands.push_back({"R" + std::to_string(i), r.rate_quarters / 4.0, Money::from_cents(r.cost_cents), 0});
    }
    in.jobs = rng() % 31;
    in.t_quarters = 1 + static_cast<int>(rng() % 24);
    return in;
}

}  // namespace

TEST_CASE("property: selection cost equals the brute-force subset minimum") {
    std::mt19937 rng(2024);
    for (int iter = 0; iter < 500; ++iter) {
        auto in = random_instance(rng);
        Seconds t = from_hours(in.t_quarters / 4.0);
        auto d = select_resources(in.jobs, t, in.cands, units(1e6));
        for (std::size_t i = 0; i < in.res.size(); ++i) {
            CHECK(capacity_within(in.cands[i], t) == oracle::capacity(in.res[i], in.t_quarters));
        }
        if (in.jobs == 0) {
            CHECK(d.projected_cost == Money{});
            continue;
        }
        auto best = oracle::cheapest_feasible_subset(in.res, in.jobs, in.t_quarters);
        CHECK(d.feasible_deadline == best.has_value());
        if (best) CHECK(d.projected_cost.cents() == best->cost_cents);
    }
}

TEST_CASE("property: tighter deadlines never shrink the selected set") {
    std::mt19937 rng(99);
    for (int iter = 0; iter < 1000; ++iter) {
        auto in = random_instance(rng);
        int shorter = 1 + static_cast<int>(rng() % static_cast<unsigned>(in.t_quarters));
        auto loose = select_resources(in.jobs, from_hours(in.t_quarters / 4.0), in.cands, units(1e6));
        auto tight = select_resources(in.jobs, from_hours(shorter / 4.0), in.cands, units(1e6));
        auto tight_ids = tight.selected_ids();
        for (const auto& id : loose.selected_ids()) {
            CHECK(std::find(tight_ids.begin(), tight_ids.end(), id) != tight_ids.end());
        }
        // Determinism.
        CHECK(select_resources(in.jobs, from_hours(shorter / 4.0), in.cands, units(1e6)) == tight);
        // Soundness of the deadline flag.
        if (tight.feasible_deadline) {
            double sum = 0;
            for (const auto& s : tight.selected) sum += s.jobs_per_hour * (shorter / 4.0);
            CHECK(sum >= static_cast<double>(in.jobs));
        }
    }
}
