#include "hca/sim/measure.hpp"

#include <algorithm>
#include <sstream>

namespace hca::sim {

std::map<MachineId, int64_t> socket_file_load(const std::vector<TraceRecord>& trace) {
    std::map<MachineId, int64_t> load;
    for (const auto& r : trace) {
        if (r.kind != "note") continue;
        if (r.type == "socket_file_stored") ++load[r.source];
        if (r.type == "socket_file_evicted" || r.type == "socket_file_deleted") --load[r.source];
    }
    return load;
}

std::vector<size_t> journey_chain(const std::vector<TraceRecord>& trace, size_t row) {
    std::vector<size_t> chain{row};
    const TraceRecord* current = &trace[row];
    while (current->hop > 1) {
        // latest earlier record of the same journey arriving at our source
        bool found = false;
        for (size_t i = chain.back(); i-- > 0;) {
            const TraceRecord& r = trace[i];
            if (r.kind == "frame" && r.journey == current->journey &&
                r.hop == current->hop - 1 && r.destination == current->source &&
                r.time <= current->time) {
                chain.push_back(i);
                current = &r;
                found = true;
                break;
            }
        }
        if (!found) break;
    }
    std::reverse(chain.begin(), chain.end());
    return chain;
}

std::vector<Delivery> deliveries(const std::vector<TraceRecord>& trace, const LinkModel& link,
                                 const std::set<std::string>& message_types,
                                 const std::set<MachineId>& destinations) {
    std::vector<Delivery> out;
    for (size_t i = 0; i < trace.size(); ++i) {
        const TraceRecord& r = trace[i];
        if (r.kind != "frame" || r.outcome != "delivered") continue;
        if (!message_types.empty() && !message_types.count(r.type)) continue;
        if (!destinations.empty() && !destinations.count(r.destination)) continue;
        Delivery d;
        d.row = i;
        d.journey = r.journey;
        d.destination = r.destination;
        d.delivered_time = r.time;
        d.hop = r.hop;
        auto chain = journey_chain(trace, i);
        d.origin = trace[chain.front()].source;
        d.origin_time = trace[chain.front()].time - trace[chain.front()].latency;
        for (size_t idx : chain) {
            const TraceRecord& step = trace[idx];
            d.route_latency += step.latency;
            d.route_distance += link.distance(step.source, step.destination);
        }
        d.nodes_visited = chain.size() - 1;  // every intermediate machine forwarded once
        out.push_back(d);
    }
    return out;
}

DeliveryCounts delivery_counts(const std::vector<TraceRecord>& trace,
                               const std::set<std::string>& message_types,
                               const std::set<MachineId>& destinations) {
    std::set<uint64_t> seen, delivered;
    for (const auto& r : trace) {
        if (r.kind != "frame") continue;
        if (!message_types.empty() && !message_types.count(r.type)) continue;
        seen.insert(r.journey);
        if (r.outcome == "delivered" &&
            (destinations.empty() || destinations.count(r.destination)))
            delivered.insert(r.journey);
    }
    DeliveryCounts counts;
    counts.delivered = delivered.size();
    counts.lost = seen.size() - delivered.size();
    return counts;
}

std::map<std::pair<MachineId, MachineId>, std::vector<size_t>> bandwidth_windows(
    const std::vector<TraceRecord>& trace, SimTime window_ms) {
    std::map<std::pair<MachineId, MachineId>, std::vector<size_t>> out;
    for (const auto& r : trace) {
        if (r.kind != "frame") continue;
        auto& windows = out[{r.source, r.destination}];
        size_t idx = static_cast<size_t>(r.time / window_ms);
        if (windows.size() <= idx) windows.resize(idx + 1, 0);
        windows[idx] += r.size;
    }
    return out;
}

std::string metrics_csv(const std::vector<TraceRecord>& trace, const LinkModel& link) {
    std::ostringstream out;
    out << "metric,machine,journey,value\n";
    for (const auto& [machine, count] : socket_file_load(trace))
        out << "socket_file_load," << machine << ",," << count << "\n";
    auto all = deliveries(trace, link, {}, {});
    for (const auto& d : all) {
        out << "delivery_hops," << d.destination << "," << d.journey << "," << d.hop << "\n";
        out << "delivery_latency_ms," << d.destination << "," << d.journey << ","
            << (d.delivered_time - d.origin_time) << "\n";
        out << "delivery_distance," << d.destination << "," << d.journey << ","
            << d.route_distance << "\n";
    }
    return out.str();
}

}  // namespace hca::sim
