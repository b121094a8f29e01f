#pragma once

#include <cstdint>
#include <vector>

namespace quietroom {

/// A person entering (+1) or leaving (-1) the room.
struct EntryExitEvent {
    double timestamp = 0.0;  // seconds since stream start
    int delta = +1;
    std::uint64_t person_id = 0;

    friend bool operator==(const EntryExitEvent&, const EntryExitEvent&) = default;
};

/// Per-second head count; counts[s] is the occupancy at second start_time + s.
struct OccupancySeries {
    std::int64_t start_time = 0;
    std::vector<int> counts;

    std::size_t size() const { return counts.size(); }
};

}  // namespace quietroom
