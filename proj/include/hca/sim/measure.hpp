#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hca/sim/engine.hpp"

namespace hca::sim {

// Pure functions over a finished trace.

// Net stored socket files per machine (stores minus evictions/deletions),
// from the node machines' store/evict notes.
std::map<MachineId, int64_t> socket_file_load(const std::vector<TraceRecord>& trace);

struct Delivery {
    size_t row = 0;          // index of the delivering record
    uint64_t journey = 0;
    MachineId origin = 0;
    MachineId destination = 0;
    SimTime origin_time = 0;
    SimTime delivered_time = 0;
    uint32_t hop = 0;             // machine-to-machine sends from the origin
    size_t nodes_visited = 0;     // intermediate machines on the chain
    double route_distance = 0.0;  // sum of per-hop link distances
    SimTime route_latency = 0;    // sum of per-hop latencies
};

// Reconstructs the chain of frame records ending at `row` by walking hop
// indices backwards through the journey's fan-out tree.
std::vector<size_t> journey_chain(const std::vector<TraceRecord>& trace, size_t row);

// Delivered frames of the given message types into the given machines, with
// the journey chain folded into hop/distance numbers.
std::vector<Delivery> deliveries(const std::vector<TraceRecord>& trace, const LinkModel& link,
                                 const std::set<std::string>& message_types,
                                 const std::set<MachineId>& destinations);

// delivered / lost per journey for the given types: a journey counts as lost
// when no record of it reaches any of the destinations.
struct DeliveryCounts {
    size_t delivered = 0;
    size_t lost = 0;
};
DeliveryCounts delivery_counts(const std::vector<TraceRecord>& trace,
                               const std::set<std::string>& message_types,
                               const std::set<MachineId>& destinations);

// Bytes per (source, destination) link per fixed window.
std::map<std::pair<MachineId, MachineId>, std::vector<size_t>> bandwidth_windows(
    const std::vector<TraceRecord>& trace, SimTime window_ms);

// CSV rendering of the load and delivery metrics (documented columns).
std::string metrics_csv(const std::vector<TraceRecord>& trace, const LinkModel& link);

}  // namespace hca::sim
