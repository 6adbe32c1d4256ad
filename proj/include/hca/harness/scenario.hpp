#pragma once

#include <memory>
#include <nlohmann/json_fwd.hpp>

#include "hca/client/session.hpp"
#include "hca/dom/topology_io.hpp"
#include "hca/node/node.hpp"
#include "hca/ps/server.hpp"
#include "hca/sim/measure.hpp"

namespace hca::harness {

using sim::SimTime;

// A socket that exists when the simulation starts, hosted on one of the
// persistence servers with its reference handed to named clients.
struct HostedSocket {
    std::string alias;
    std::string pserver;
    size_t socket_type = wire::socket_type::SharedVector;
    std::vector<std::string> boundaries;
    uint32_t min_replicas = 1;
    uint32_t max_replicas = 1;
    size_t contact_count = 1;
    int64_t max_message_length = -1;
    std::string buffer_alias;  // message sinks: co-hosted buffer socket
    std::vector<std::string> give_ref_to;  // client names; empty = all clients
};

struct PServerSpec {
    std::string name;
    dom::NodeId leaf_node = 0;
    uint64_t capacity = 1 << 20;
    SimTime poll_interval_ms = 2000;
};

struct ClientSpec {
    std::string name;
    dom::NodeId leaf_node = 0;
    bool auto_reconnect = false;
    bool auto_next_state = false;
    size_t reader_queue_capacity = 16;
    std::vector<client::Command> script;
};

struct FaultSpec {
    SimTime at = 0;
    std::string kind;  // crash | restore | partition | heal | drop
    std::string target;  // node id text, client/pserver name
    std::vector<std::string> side_a;  // partition: machines on one side
    std::string link_a, link_b;       // drop
    double probability = 0.0;
};

struct Scenario {
    dom::DomainSpec topology;
    double diameter = 16.0;
    std::string embedding = "segment-endpoints";  // segment-uniform | quadtree
    double ms_per_unit = 1.0;
    double hop_cost_ms = 1.0;
    node::NodeTuning tuning;
    std::vector<PServerSpec> pservers;
    std::vector<ClientSpec> clients;
    std::vector<HostedSocket> sockets;
    std::vector<FaultSpec> faults;
    SimTime horizon_ms = 60000;
};

Scenario scenario_from_json(const nlohmann::json& j, std::mt19937_64& rng);
Scenario scenario_from_file(const std::string& path, std::mt19937_64& rng);

// A built simulation: engine plus name resolution for checks.
struct Runtime {
    std::unique_ptr<sim::Engine> engine;
    dom::DomainTree tree;
    std::map<std::string, sim::MachineId> machines_by_name;  // clients + pservers
    std::map<dom::NodeId, sim::MachineId> node_machines;
    std::map<std::string, proto::SocketRef> socket_refs;     // hosted sockets
    std::map<std::string, uint64_t> socket_ids;
    SimTime horizon = 0;

    void run() { engine->run(horizon); }
    const std::vector<sim::TraceRecord>& trace() const { return engine->trace(); }
    sim::MachineId machine(const std::string& name) const;
    std::set<sim::MachineId> client_machines() const;
};

Runtime build_runtime(const Scenario& scenario, uint64_t seed);

// Writes the trace as line-delimited JSON; byte-stable for a given run.
void write_trace_jsonl(const std::vector<sim::TraceRecord>& trace, const std::string& path);

}  // namespace hca::harness
