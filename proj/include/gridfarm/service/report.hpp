#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridfarm/core/money.hpp"
#include "gridfarm/engine/journal.hpp"

namespace gridfarm::service {

using json = nlohmann::json;

struct UsagePoint {
    double t_sim = 0.0;
    int in_flight = 0;
    Money charged;  // cumulative
};

struct ResourceUsage {
    std::string resource_id;
    int dispatched = 0;
    int completed = 0;
    double cpu_hours = 0.0;  // charged hours only
    Money charged;
    std::vector<UsagePoint> series;  // one point per change
};

/// Overall in-use step function: value holds from t_sim until the next point.
struct InUsePoint {
    double t_sim = 0.0;
    int resources = 0;  // resources holding at least one job
    int jobs = 0;
    Money committed;
};

/// Per-resource usage and cost rebuilt from journal records alone.
struct UsageReport {
    std::map<std::string, ResourceUsage> resources;
    std::vector<InUsePoint> in_use;
    Money committed;
    double start = 0.0;
    double end = 0.0;

    /// Time-weighted mean of resources in use between start and end.
    double mean_resources_in_use() const;
    /// One row per `bucket` seconds: hour, mean resources in use, jobs in
    /// flight and jobs done at the bucket's end, cumulative cost.
    std::string table_csv(double bucket = 3600.0) const;
    json to_json() const;
};

UsageReport usage_report(const std::vector<engine::JournalRecord>& records);

/// The ledger CSV rebuilt from the charges in the journal.
std::string ledger_csv(const std::vector<engine::JournalRecord>& records);

/// The journal's replan records, one JSON object per line.
std::string decisions_jsonl(const std::vector<engine::JournalRecord>& records);

}  // namespace gridfarm::service
