#include "gridfarm/service/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gridfarm/core/time.hpp"
#include "gridfarm/economy/ledger.hpp"

namespace gridfarm::service {

UsageReport usage_report(const std::vector<engine::JournalRecord>& records) {
    UsageReport out;
    if (records.empty()) return out;
    out.start = records.front().t_sim;
    std::map<std::uint64_t, std::string> where;
    std::map<std::string, int> held;
    int jobs = 0;

    auto point = [&](ResourceUsage& r, double t) {
        UsagePoint p{t, held[r.resource_id], r.charged};
        if (!r.series.empty() && r.series.back().t_sim == t) {
            r.series.back() = p;
        } else {
            r.series.push_back(p);
        }
    };
    auto overall = [&](double t) {
        int busy = 0;
        for (const auto& [id, n] : held) busy += n > 0;
        InUsePoint p{t, busy, jobs, out.committed};
        if (!out.in_use.empty() && out.in_use.back().t_sim == t) {
            out.in_use.back() = p;
        } else {
            out.in_use.push_back(p);
        }
    };
    auto leave = [&](std::uint64_t job, double t) {
        auto it = where.find(job);
        if (it == where.end()) return;
        --held[it->second];
        --jobs;
        point(out.resources[it->second], t);
        where.erase(it);
    };

    overall(out.start);
    for (const auto& r : records) {
        out.end = r.t_sim;
        const json& p = r.payload;
        if (r.kind == "job") {
            std::string ev = p.at("event");
            std::uint64_t job = p.at("job");
            if (p.contains("charge")) {
                auto it = where.find(job);
                if (it != where.end()) {
                    auto& res = out.resources[it->second];
                    Money amount = Money::from_cents(p.at("charge").at("amount").get<std::int64_t>());
                    res.charged += amount;
                    res.cpu_hours += p.at("charge").at("cpu_hours").get<double>();
                    out.committed += amount;
                }
            }
            if (ev == "dispatch") {
                std::string id = p.at("resource");
                auto& res = out.resources[id];
                res.resource_id = id;
                ++res.dispatched;
                where[job] = id;
                ++held[id];
                ++jobs;
                point(res, r.t_sim);
            } else if (ev == "complete") {
                auto it = where.find(job);
                if (it != where.end()) ++out.resources[it->second].completed;
                leave(job, r.t_sim);
            } else if (ev == "fail" || ev == "abort" || ev == "requeue") {
                leave(job, r.t_sim);
            }
        } else if (r.kind == "phase") {
            for (const auto& j : p.value("aborted", json::array())) leave(j.get<std::uint64_t>(), r.t_sim);
        } else if (r.kind == "recovered") {
            for (const auto& j : p.value("requeued", json::array())) leave(j.get<std::uint64_t>(), r.t_sim);
        }
        overall(r.t_sim);
    }
    return out;
}

double UsageReport::mean_resources_in_use() const {
    if (end <= start || in_use.empty()) return 0.0;
    double area = 0.0;
    for (std::size_t i = 0; i < in_use.size(); ++i) {
        double next = i + 1 < in_use.size() ? in_use[i + 1].t_sim : end;
        area += in_use[i].resources * (next - in_use[i].t_sim);
    }
    return area / (end - start);
}

std::string UsageReport::table_csv(double bucket) const {
    std::ostringstream os;
    os << "hour,resources_in_use,jobs_in_flight,cost\n";
    if (in_use.empty()) return os.str();
    // Last point at or before t.
    auto at = [&](double t) {
        auto it = std::upper_bound(in_use.begin(), in_use.end(), t,
                                   [](double v, const InUsePoint& p) { return v < p.t_sim; });
        return it == in_use.begin() ? in_use.front() : *std::prev(it);
    };
    for (int row = 0; start + row * bucket < end; ++row) {
        double lo = start + row * bucket, hi = std::min(lo + bucket, end);
        double area = 0.0;
        for (std::size_t i = 0; i < in_use.size(); ++i) {
            double a = std::max(in_use[i].t_sim, lo);
            double b = std::min(i + 1 < in_use.size() ? in_use[i + 1].t_sim : end, hi);
            if (b > a) area += in_use[i].resources * (b - a);
        }
        InUsePoint last = at(hi);
        char line[128];
        std::snprintf(line, sizeof line, "%d,%.3f,%d,%s\n", row + 1, area / (hi - lo), last.jobs,
                      last.committed.to_string().c_str());
        os << line;
    }
    return os.str();
}

json UsageReport::to_json() const {
    json res = json::array();
    for (const auto& [id, r] : resources) {
        json series = json::array();
        for (const auto& p : r.series) {
            series.push_back({{"t", format_duration(Seconds(p.t_sim - start))},
                              {"t_sim", p.t_sim},
                              {"in_flight", p.in_flight},
                              {"charged", p.charged.to_string()}});
        }
        res.push_back({{"resource_id", id},
                       {"dispatched", r.dispatched},
                       {"completed", r.completed},
                       {"cpu_hours", r.cpu_hours},
                       {"charged", r.charged.to_string()},
                       {"series", series}});
    }
    json use = json::array();
    for (const auto& p : in_use) {
        use.push_back({{"t", format_duration(Seconds(p.t_sim - start))},
                       {"t_sim", p.t_sim},
                       {"resources_in_use", p.resources},
                       {"jobs_in_flight", p.jobs},
                       {"committed", p.committed.to_string()}});
    }
    return {{"resources", res},
            {"in_use", use},
            {"committed", committed.to_string()},
            {"mean_resources_in_use", mean_resources_in_use()}};
}

std::string ledger_csv(const std::vector<engine::JournalRecord>& records) {
    economy::BudgetLedger ledger({}, false);
    std::map<std::uint64_t, std::string> where;
    for (const auto& r : records) {
        if (r.kind != "job") continue;
        const json& p = r.payload;
        std::uint64_t job = p.at("job");
        if (p.at("event") == "dispatch") where[job] = p.at("resource").get<std::string>();
        if (!p.contains("charge")) continue;
        const json& c = p.at("charge");
        ledger.charge_amount(job, where[job], c.at("cpu_hours").get<double>(),
                             Money::from_cents(c.at("rate").get<std::int64_t>()),
                             Money::from_cents(c.at("amount").get<std::int64_t>()), r.seq, r.t_sim,
                             p.value("attempt", 0));
    }
    return ledger.to_csv();
}

std::string decisions_jsonl(const std::vector<engine::JournalRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        if (r.kind != "replan") continue;
        json line{{"seq", r.seq}, {"t_sim", r.t_sim}};
        line.update(r.payload);
        out += line.dump();
        out += '\n';
    }
    return out;
}

}  // namespace gridfarm::service
