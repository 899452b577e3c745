#pragma once

#include <memory>
#include <string>
#include <vector>

#include "gridfarm/core/time.hpp"
#include "gridfarm/economy/cost_schedule.hpp"

namespace gridfarm::scheduler {

enum class QueueType { interactive, batch };
enum class ResourceStatus { up, down };

const char* to_string(QueueType q);
const char* to_string(ResourceStatus s);

/// What the scheduler knows about one machine at one instant.
struct ResourceView {
    std::string id;
    bool authorized = true;
    double capability = 1.0;  // speed relative to the reference machine
    int slots = 1;
    QueueType queue_type = QueueType::interactive;
    int queue_length = 0;  // other users' jobs ahead on a batch queue
    double load = 0.0;
    double reliability = 1.0;
    double bandwidth_mb_s = 100.0;
    std::shared_ptr<const economy::CostSchedule> schedule;
    ResourceStatus status = ResourceStatus::up;
};

/// The grid information service as seen by the scheduler.
class ResourceDirectory {
public:
    virtual ~ResourceDirectory() = default;
    /// Every registered resource, `authorized` set for this user.
    virtual std::vector<ResourceView> query(const std::string& user_id) const = 0;
};

/// Authorized, registered resources with fresh status. Down resources stay
/// in the list with status=down.
std::vector<ResourceView> discover(const ResourceDirectory& directory, const std::string& user_id);

}  // namespace gridfarm::scheduler
