#include "hca/harness/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

namespace hca::harness {

using dom::DomainTree;
using dom::NodeId;
using sim::MachineId;

sim::MachineId Runtime::machine(const std::string& name) const {
    auto it = machines_by_name.find(name);
    if (it != machines_by_name.end()) return it->second;
    // node ids are given as plain numbers
    NodeId id = static_cast<NodeId>(std::stoul(name));
    return node_machines.at(id);
}

std::set<MachineId> Runtime::client_machines() const {
    std::set<MachineId> out;
    for (const auto& [name, id] : machines_by_name)
        if (name.rfind("ps:", 0) != 0) out.insert(id);
    return out;
}

namespace {

// Dyadic 1-D embedding: each domain owns a sub-segment of [0, D); nodes sit
// at their domain's segment boundaries so hop distances average half the
// segment length, matching the halving-distance latency model.
void embed_segment(const DomainTree& tree, double diameter, bool endpoints,
                   std::mt19937_64& rng, const std::map<NodeId, MachineId>& machines,
                   sim::LinkModel& link) {
    std::vector<std::pair<double, double>> spans(tree.domains().size());
    for (size_t i = 0; i < tree.domains().size(); ++i) {
        const auto& d = tree.domains()[i];
        if (d.parent < 0) {
            spans[i] = {0.0, diameter};
        } else {
            const auto& parent_span = spans[static_cast<size_t>(d.parent)];
            const auto& siblings = tree.domains()[static_cast<size_t>(d.parent)].children;
            size_t position = 0;
            for (size_t c = 0; c < siblings.size(); ++c)
                if (siblings[c] == static_cast<int>(i)) position = c;
            double width = (parent_span.second - parent_span.first) /
                           static_cast<double>(siblings.size());
            spans[i] = {parent_span.first + width * static_cast<double>(position),
                        parent_span.first + width * static_cast<double>(position + 1)};
        }
    }
    for (const auto& [id, info] : tree.nodes()) {
        const auto& span = spans[static_cast<size_t>(info.domain)];
        double x;
        if (endpoints) {
            x = (rng() & 1) ? span.second : span.first;
        } else {
            x = span.first + (span.second - span.first) *
                                 (static_cast<double>(rng()) / static_cast<double>(UINT64_MAX));
        }
        link.coord_x[machines.at(id)] = x;
    }
}

void embed_quadtree(const DomainTree& tree, double diameter, std::mt19937_64& rng,
                    const std::map<NodeId, MachineId>& machines, sim::LinkModel& link) {
    struct Box {
        double x0, y0, x1, y1;
    };
    double side = diameter / std::sqrt(2.0);
    std::vector<Box> boxes(tree.domains().size());
    for (size_t i = 0; i < tree.domains().size(); ++i) {
        const auto& d = tree.domains()[i];
        if (d.parent < 0) {
            boxes[i] = {0, 0, side, side};
            continue;
        }
        const Box& pb = boxes[static_cast<size_t>(d.parent)];
        const auto& siblings = tree.domains()[static_cast<size_t>(d.parent)].children;
        size_t position = 0;
        for (size_t c = 0; c < siblings.size(); ++c)
            if (siblings[c] == static_cast<int>(i)) position = c;
        double mx = (pb.x0 + pb.x1) / 2, my = (pb.y0 + pb.y1) / 2;
        switch (position % 4) {
            case 0: boxes[i] = {pb.x0, pb.y0, mx, my}; break;
            case 1: boxes[i] = {mx, pb.y0, pb.x1, my}; break;
            case 2: boxes[i] = {pb.x0, my, mx, pb.y1}; break;
            default: boxes[i] = {mx, my, pb.x1, pb.y1}; break;
        }
    }
    for (const auto& [id, info] : tree.nodes()) {
        const Box& b = boxes[static_cast<size_t>(info.domain)];
        double u = static_cast<double>(rng()) / static_cast<double>(UINT64_MAX);
        double v = static_cast<double>(rng()) / static_cast<double>(UINT64_MAX);
        link.coord_x[machines.at(id)] = b.x0 + (b.x1 - b.x0) * u;
        link.coord_y[machines.at(id)] = b.y0 + (b.y1 - b.y0) * v;
    }
}

struct SocketMaterials {
    ps::StoredSocket socket;
    std::vector<uint64_t> prefixes;
    proto::SocketRef ref;
};

SocketMaterials make_hosted_socket(const HostedSocket& spec, std::mt19937_64& rng) {
    SocketMaterials m;
    ps::StoredSocket& s = m.socket;
    s.name = spec.alias;
    s.record.socket_id = rng() >> 1;
    auto [identity, keys] = ident::generate_identity(rng, {"mock"});
    s.record.pub_key = identity;
    s.record.socket_type = spec.socket_type;
    s.record.boundaries = spec.boundaries;
    s.record.min_replicas = spec.min_replicas;
    s.record.max_replicas = spec.max_replicas;
    s.max_message_length = spec.max_message_length;
    // default rights: readable/writable by anyone holding the lock
    s.record.reader_role.id = s.record.socket_id;
    s.record.writer_role.id = s.record.socket_id;
    s.record.owner_role.id = s.record.socket_id;
    s.record.lock_right.id = s.record.socket_id;
    s.record.force_lock_right.id = s.record.socket_id;
    s.record.change_boundaries_right.id = s.record.socket_id;
    s.record.destroy_right.id = s.record.socket_id;
    s.access.mode = ps::AccessVector::GrantedAll;
    for (size_t i = 0; i < std::max<size_t>(1, spec.contact_count); ++i)
        m.prefixes.push_back(rng());
    m.ref.id = s.record.socket_id;
    m.ref.contact_prefixes = m.prefixes;
    return m;
}

}  // namespace

Runtime build_runtime(const Scenario& scenario, uint64_t seed) {
    Runtime rt;
    rt.horizon = scenario.horizon_ms;
    rt.tree = DomainTree::build(scenario.topology);
    const DomainTree& tree = rt.tree;
    rt.engine = std::make_unique<sim::Engine>(seed);

    std::mt19937_64 build_rng(seed ^ 0x9e3779b97f4a7c15ull);

    // machine ids: nodes use their configured net addresses; edges follow
    MachineId next_machine = 1;
    for (const auto& [id, info] : tree.nodes()) {
        rt.node_machines[id] = info.spec.net_address;
        next_machine = std::max(next_machine, info.spec.net_address + 1);
    }

    // identities for every node, shared via peer_identities
    std::map<NodeId, std::pair<ident::Identity, ident::PrincipalKeys>> node_idents;
    for (const auto& [id, info] : tree.nodes()) {
        std::mt19937_64 ident_rng(seed ^ (0xabcdull + id * 1315423911ull));
        node_idents[id] = ident::generate_identity(ident_rng, {"mock"});
    }
    std::map<NodeId, std::pair<ident::Identity, ident::PrincipalKeys>> domain_idents;

    // edge machines
    std::map<std::string, MachineId> pserver_machines;
    for (const auto& p : scenario.pservers) {
        pserver_machines[p.name] = next_machine;
        rt.machines_by_name["ps:" + p.name] = next_machine;
        ++next_machine;
    }
    std::map<std::string, MachineId> client_machines;
    for (const auto& c : scenario.clients) {
        client_machines[c.name] = next_machine;
        rt.machines_by_name[c.name] = next_machine;
        ++next_machine;
    }

    // link model + embedding
    sim::LinkModel link;
    link.ms_per_unit = scenario.ms_per_unit;
    link.hop_cost_ms = scenario.hop_cost_ms;
    {
        std::mt19937_64 embed_rng(seed ^ 0x5151515151ull);
        if (scenario.embedding == "quadtree")
            embed_quadtree(tree, scenario.diameter, embed_rng, rt.node_machines, link);
        else
            embed_segment(tree, scenario.diameter, scenario.embedding != "segment-uniform",
                          embed_rng, rt.node_machines, link);
    }
    // clients and persistence servers sit at their leaf node's coordinate
    auto leaf_coord = [&](NodeId leaf) {
        return link.coord_x.count(rt.node_machines.at(leaf))
                   ? link.coord_x[rt.node_machines.at(leaf)]
                   : 0.0;
    };
    for (const auto& p : scenario.pservers)
        link.coord_x[pserver_machines[p.name]] = leaf_coord(p.leaf_node);
    for (const auto& c : scenario.clients)
        link.coord_x[client_machines[c.name]] = leaf_coord(c.leaf_node);
    rt.engine->set_link_model(std::move(link));

    // hosted sockets
    std::map<std::string, std::vector<ps::StoredSocket>> initial_sockets;
    std::map<std::string, std::map<uint64_t, std::vector<uint64_t>>> initial_prefixes;
    std::map<std::string, uint64_t> buffer_ids;
    for (const auto& spec : scenario.sockets) {
        SocketMaterials m = make_hosted_socket(spec, build_rng);
        if (!spec.buffer_alias.empty()) {
            // co-hosted durable buffer for a message sink
            HostedSocket buffer_spec;
            buffer_spec.alias = spec.buffer_alias;
            buffer_spec.pserver = spec.pserver;
            buffer_spec.socket_type = wire::socket_type::MessageBuffer;
            SocketMaterials buffer = make_hosted_socket(buffer_spec, build_rng);
            m.socket.buffer_socket = buffer.socket.record.socket_id;
            rt.socket_refs[buffer_spec.alias] = buffer.ref;
            rt.socket_ids[buffer_spec.alias] = buffer.socket.record.socket_id;
            initial_prefixes[spec.pserver][buffer.socket.record.socket_id] = buffer.prefixes;
            initial_sockets[spec.pserver].push_back(std::move(buffer.socket));
        }
        rt.socket_refs[spec.alias] = m.ref;
        rt.socket_ids[spec.alias] = m.socket.record.socket_id;
        initial_prefixes[spec.pserver][m.socket.record.socket_id] = m.prefixes;
        initial_sockets[spec.pserver].push_back(std::move(m.socket));
    }

    // node machines
    for (const auto& [node_id, info] : tree.nodes()) {
        node::NodeConfig cfg;
        cfg.node_id = node_id;
        cfg.node_identity = node_idents[node_id].first;
        cfg.node_keys = node_idents[node_id].second;
        cfg.tuning = scenario.tuning;
        const auto& domain = tree.domain(info.domain);
        cfg.domain_name = domain.name;
        cfg.assigned_range = info.range;
        cfg.standby = !info.is_primary;
        for (int d = info.domain; d >= 0; d = tree.domain(d).parent) {
            cfg.location.insert(cfg.location.begin(), tree.domain(d).name);
            cfg.path_boundaries.insert(cfg.path_boundaries.begin(), tree.domain(d).boundaries);
        }
        // own-domain member table for answering AccessPoints
        for (size_t g = 0; g < domain.primaries.size(); ++g) {
            node::DomainMember member;
            NodeId primary = domain.primaries[g];
            member.machine = rt.node_machines[primary];
            member.identity = node_idents[primary].first;
            member.range = tree.node(primary).range;
            for (NodeId replica : domain.replica_groups[g]) {
                if (replica == primary) continue;
                member.replicas.push_back({rt.node_machines[replica],
                                           node_idents[replica].first});
            }
            cfg.domain_members.push_back(std::move(member));
        }
        // parent bootstrap contacts, with replicas for failover
        if (domain.parent >= 0) {
            const auto& parent_domain = tree.domain(domain.parent);
            for (auto& [pid, overlap] : tree.parent_contacts(
                     info.is_primary ? node_id : domain.primaries[info.group])) {
                node::ParentContactConfig contact;
                contact.machine = rt.node_machines[pid];
                contact.identity = node_idents[pid].first;
                contact.range = overlap;
                const auto& pinfo = tree.node(pid);
                for (NodeId replica : parent_domain.replica_groups[pinfo.group]) {
                    if (replica == pid) continue;
                    contact.replicas.push_back({rt.node_machines[replica],
                                                node_idents[replica].first});
                }
                cfg.parents.push_back(std::move(contact));
                cfg.peer_identities[rt.node_machines[pid]] = node_idents[pid].first;
                for (auto& [rm, rid] : cfg.parents.back().replicas)
                    cfg.peer_identities[rm] = rid;
            }
        }
        // child domains: weights proportional to subtree node counts
        for (int child : domain.children) {
            const auto& child_domain = tree.domain(child);
            node::ChildDomainConfig cd;
            cd.domain_name = child_domain.name;
            cd.priority_weight = static_cast<double>(child_domain.subtree_nodes);
            cfg.accepted_children.push_back(std::move(cd));
            for (const auto& group : child_domain.replica_groups) {
                for (NodeId member : group) {
                    cfg.child_domain_of[rt.node_machines[member]] = child_domain.name;
                    cfg.peer_identities[rt.node_machines[member]] =
                        node_idents[member].first;
                }
            }
        }
        // attachments
        for (const auto& p : scenario.pservers) {
            if (p.leaf_node == node_id)
                cfg.attached.push_back({pserver_machines[p.name], p.name,
                                        node::AttachedMachine::PersistenceServer});
        }
        for (const auto& c : scenario.clients) {
            if (c.leaf_node == node_id)
                cfg.attached.push_back({client_machines[c.name], c.name,
                                        node::AttachedMachine::Client});
        }
        rt.engine->add_machine(rt.node_machines[node_id],
                               std::make_shared<node::NodeMachine>(std::move(cfg)));
    }

    // persistence servers
    for (const auto& p : scenario.pservers) {
        ps::PersistenceConfig cfg;
        cfg.name = p.name;
        cfg.leaf_node = rt.node_machines.at(p.leaf_node);
        const auto& leaf_info = tree.node(p.leaf_node);
        for (int d = leaf_info.domain; d >= 0; d = tree.domain(d).parent)
            cfg.location.insert(cfg.location.begin(), tree.domain(d).name);
        std::mt19937_64 ident_rng(seed ^ (0xeeff00ull + pserver_machines[p.name]));
        auto [identity, keys] = ident::generate_identity(ident_rng, {"mock"});
        cfg.server_identity = identity;
        cfg.server_keys = keys;
        cfg.capacity = p.capacity;
        cfg.poll_interval_ms = p.poll_interval_ms;
        if (initial_sockets.count(p.name)) {
            cfg.initial_sockets = initial_sockets[p.name];
            cfg.initial_prefixes = initial_prefixes[p.name];
        }
        rt.engine->add_machine(pserver_machines[p.name],
                               std::make_shared<ps::PersistenceServer>(std::move(cfg)));
    }

    // clients
    for (const auto& c : scenario.clients) {
        client::SessionConfig cfg;
        cfg.name = c.name;
        cfg.leaf_node = rt.node_machines.at(c.leaf_node);
        std::mt19937_64 ident_rng(seed ^ (0xccdd00ull + client_machines[c.name]));
        auto [identity, keys] = ident::generate_identity(ident_rng, {"mock"});
        cfg.identity = identity;
        cfg.keys = keys;
        cfg.auto_reconnect = c.auto_reconnect;
        cfg.auto_next_state = c.auto_next_state;
        cfg.reader_queue_capacity = c.reader_queue_capacity;
        cfg.script = c.script;
        for (const auto& spec : scenario.sockets) {
            bool wanted = spec.give_ref_to.empty() ||
                          std::find(spec.give_ref_to.begin(), spec.give_ref_to.end(), c.name) !=
                              spec.give_ref_to.end();
            if (!wanted) continue;
            cfg.initial_refs[spec.alias] = rt.socket_refs[spec.alias];
            if (!spec.buffer_alias.empty())
                cfg.initial_refs[spec.buffer_alias] = rt.socket_refs[spec.buffer_alias];
        }
        rt.engine->add_machine(client_machines[c.name],
                               std::make_shared<client::ClientSession>(std::move(cfg)));
    }

    // faults
    for (const auto& f : scenario.faults) {
        sim::FaultAction action;
        action.at = f.at;
        auto resolve = [&](const std::string& name) -> MachineId {
            if (rt.machines_by_name.count(name)) return rt.machines_by_name.at(name);
            if (rt.machines_by_name.count("ps:" + name))
                return rt.machines_by_name.at("ps:" + name);
            return rt.node_machines.at(static_cast<NodeId>(std::stoul(name)));
        };
        if (f.kind == "crash") {
            action.kind = sim::FaultAction::Crash;
            action.machine = resolve(f.target);
        } else if (f.kind == "restore") {
            action.kind = sim::FaultAction::Restore;
            action.machine = resolve(f.target);
        } else if (f.kind == "partition") {
            action.kind = sim::FaultAction::Partition;
            for (const auto& name : f.side_a) action.side_a.insert(resolve(name));
        } else if (f.kind == "heal") {
            action.kind = sim::FaultAction::Heal;
        } else if (f.kind == "drop") {
            action.kind = sim::FaultAction::Drop;
            action.link_a = resolve(f.link_a);
            action.link_b = resolve(f.link_b);
            action.drop_probability = f.probability;
        }
        rt.engine->add_fault(std::move(action));
    }
    return rt;
}

Scenario scenario_from_json(const nlohmann::json& j, std::mt19937_64& rng) {
    Scenario s;
    if (j.contains("topology_file")) {
        s.topology = dom::topology_from_file(j.at("topology_file").get<std::string>(), rng);
    } else if (j.contains("topology")) {
        const auto& t = j.at("topology");
        if (t.is_object() && t.contains("generator")) {
            std::string kind = t.at("generator").get<std::string>();
            if (kind == "balanced_binary")
                s.topology = dom::balanced_binary_tree(t.value("depth", 3), rng,
                                                       t.value("replicas", 0));
            else if (kind == "flat")
                s.topology = dom::flat_domain_with_edge(t.value("nodes", 4), rng);
            else if (kind == "chain")
                s.topology = dom::replicated_chain(t.value("depth", 3),
                                                   t.value("replicas", 1), rng);
            else
                throw std::runtime_error("unknown topology generator: " + kind);
        } else {
            s.topology = dom::topology_from_json(t, rng);
        }
    } else {
        throw std::runtime_error("scenario: missing topology");
    }
    s.diameter = j.value("diameter", 16.0);
    s.embedding = j.value("embedding", std::string{"segment-endpoints"});
    s.ms_per_unit = j.value("ms_per_unit", 1.0);
    s.hop_cost_ms = j.value("hop_cost_ms", 1.0);
    s.horizon_ms = j.value("horizon_ms", 60000);
    if (j.contains("tuning")) {
        const auto& t = j.at("tuning");
        s.tuning.keepalive_period_ms = t.value("keepalive_period_ms",
                                               s.tuning.keepalive_period_ms);
        s.tuning.keepalive_threshold_ms = t.value("keepalive_threshold_ms",
                                                  s.tuning.keepalive_threshold_ms);
        s.tuning.shortcuts_enabled = t.value("shortcuts_enabled", s.tuning.shortcuts_enabled);
        s.tuning.socket_files_per_child = t.value("socket_files_per_child",
                                                  s.tuning.socket_files_per_child);
        s.tuning.creation_rate_per_window = t.value("creation_rate_per_window",
                                                    s.tuning.creation_rate_per_window);
    }
    for (const auto& p : j.value("pservers", nlohmann::json::array())) {
        PServerSpec spec;
        spec.name = p.at("name").get<std::string>();
        spec.leaf_node = p.at("leaf_node").get<dom::NodeId>();
        spec.poll_interval_ms = p.value("poll_interval_ms", spec.poll_interval_ms);
        s.pservers.push_back(std::move(spec));
    }
    for (const auto& c : j.value("clients", nlohmann::json::array())) {
        ClientSpec spec;
        spec.name = c.at("name").get<std::string>();
        spec.leaf_node = c.at("leaf_node").get<dom::NodeId>();
        spec.auto_reconnect = c.value("auto_reconnect", false);
        spec.auto_next_state = c.value("auto_next_state", false);
        spec.reader_queue_capacity = c.value("reader_queue_capacity", 16);
        for (const auto& cmd : c.value("script", nlohmann::json::array())) {
            client::Command command;
            command.at = cmd.at("at").get<SimTime>();
            command.op = cmd.at("op").get<std::string>();
            command.target = cmd.value("target", std::string{});
            command.args = cmd.value("args", nlohmann::json::object());
            spec.script.push_back(std::move(command));
        }
        s.clients.push_back(std::move(spec));
    }
    for (const auto& sock : j.value("sockets", nlohmann::json::array())) {
        HostedSocket spec;
        spec.alias = sock.at("alias").get<std::string>();
        spec.pserver = sock.at("pserver").get<std::string>();
        std::string type = sock.value("type", std::string{"shared_vector"});
        if (type == "message_sink") spec.socket_type = wire::socket_type::MessageSink;
        if (type == "container") spec.socket_type = wire::socket_type::Container;
        spec.boundaries = sock.value("boundaries", std::vector<std::string>{});
        spec.min_replicas = sock.value("min_replicas", 1u);
        spec.max_replicas = sock.value("max_replicas", 1u);
        spec.contact_count = sock.value("contact_count", size_t{1});
        spec.max_message_length = sock.value("max_message_length", int64_t{-1});
        spec.buffer_alias = sock.value("buffer", std::string{});
        s.sockets.push_back(std::move(spec));
    }
    for (const auto& f : j.value("faults", nlohmann::json::array())) {
        FaultSpec spec;
        spec.at = f.at("at").get<SimTime>();
        spec.kind = f.at("kind").get<std::string>();
        spec.target = f.value("target", std::string{});
        spec.side_a = f.value("side_a", std::vector<std::string>{});
        spec.link_a = f.value("link_a", std::string{});
        spec.link_b = f.value("link_b", std::string{});
        spec.probability = f.value("probability", 0.0);
        s.faults.push_back(std::move(spec));
    }
    return s;
}

Scenario scenario_from_file(const std::string& path, std::mt19937_64& rng) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario file: " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    return scenario_from_json(j, rng);
}

void write_trace_jsonl(const std::vector<sim::TraceRecord>& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write trace file: " + path);
    for (const auto& r : trace) out << r.to_json().dump() << "\n";
}

}  // namespace hca::harness
