#include "hca/dom/topology_io.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

namespace hca::dom {

using nlohmann::json;

namespace {

ident::Identity node_identity(std::mt19937_64& rng) {
    auto [id, keys] = ident::generate_identity(rng, {"mock"});
    return id;
}

DomainSpec parse_domain(const json& j, std::mt19937_64& rng, NodeId& next_auto_id) {
    DomainSpec d;
    d.name = j.at("name").get<std::string>();
    d.identity = node_identity(rng);
    if (j.contains("boundaries"))
        d.boundaries = j.at("boundaries").get<std::vector<std::string>>();
    if (j.contains("nodes")) {
        for (const auto& n : j.at("nodes")) {
            NodeSpec ns;
            ns.id = n.contains("id") ? n.at("id").get<NodeId>() : next_auto_id++;
            ns.replica_priority = n.value("priority", 0);
            ns.net_address = n.value("address", ns.id);
            ns.identity = node_identity(rng);
            d.nodes.push_back(std::move(ns));
        }
    }
    if (j.contains("children")) {
        for (const auto& c : j.at("children")) d.children.push_back(parse_domain(c, rng, next_auto_id));
    }
    return d;
}

}  // namespace

DomainSpec topology_from_json(const json& j, std::mt19937_64& rng) {
    NodeId next_auto_id = 1;
    return parse_domain(j, rng, next_auto_id);
}

DomainSpec topology_from_file(const std::string& path, std::mt19937_64& rng) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open topology file: " + path);
    json j = json::parse(in);
    return topology_from_json(j, rng);
}

json topology_to_json(const DomainSpec& spec) {
    json j;
    j["name"] = spec.name;
    if (!spec.boundaries.empty()) j["boundaries"] = spec.boundaries;
    j["nodes"] = json::array();
    for (const auto& n : spec.nodes)
        j["nodes"].push_back({{"id", n.id}, {"priority", n.replica_priority}});
    if (!spec.children.empty()) {
        j["children"] = json::array();
        for (const auto& c : spec.children) j["children"].push_back(topology_to_json(c));
    }
    return j;
}

namespace {

void add_nodes(DomainSpec& d, size_t primaries, int replicas_per_node, std::mt19937_64& rng,
               NodeId& next_id) {
    for (size_t i = 0; i < primaries; ++i) {
        for (int r = 0; r <= replicas_per_node; ++r) {
            NodeSpec ns;
            ns.id = next_id++;
            ns.replica_priority = r;
            ns.net_address = ns.id;
            ns.identity = node_identity(rng);
            d.nodes.push_back(std::move(ns));
        }
    }
}

DomainSpec binary_subtree(int depth, int levels_left, std::mt19937_64& rng, NodeId& next_id,
                          int replicas_per_node, std::string name) {
    DomainSpec d;
    d.name = std::move(name);
    d.identity = node_identity(rng);
    size_t leaves_below = size_t{1} << levels_left;
    add_nodes(d, leaves_below, replicas_per_node, rng, next_id);
    if (levels_left > 0) {
        d.children.push_back(binary_subtree(depth, levels_left - 1, rng, next_id,
                                            replicas_per_node, d.name + "0"));
        d.children.push_back(binary_subtree(depth, levels_left - 1, rng, next_id,
                                            replicas_per_node, d.name + "1"));
    }
    return d;
}

}  // namespace

DomainSpec balanced_binary_tree(int depth, std::mt19937_64& rng, int replicas_per_node) {
    NodeId next_id = 1;
    return binary_subtree(depth, depth, rng, next_id, replicas_per_node, "d");
}

DomainSpec flat_domain_with_edge(size_t n, std::mt19937_64& rng) {
    NodeId next_id = 1;
    DomainSpec root;
    root.name = "root";
    root.identity = node_identity(rng);
    add_nodes(root, n, 0, rng, next_id);
    DomainSpec edge;
    edge.name = "edge";
    edge.identity = node_identity(rng);
    add_nodes(edge, 1, 0, rng, next_id);
    root.children.push_back(std::move(edge));
    return root;
}

DomainSpec replicated_chain(int depth, int replicas, std::mt19937_64& rng) {
    NodeId next_id = 1;
    DomainSpec root;
    root.name = "c0";
    root.identity = node_identity(rng);
    add_nodes(root, 1, replicas - 1, rng, next_id);
    DomainSpec* tail = &root;
    for (int i = 1; i < depth; ++i) {
        DomainSpec d;
        d.name = "c" + std::to_string(i);
        d.identity = node_identity(rng);
        add_nodes(d, 1, replicas - 1, rng, next_id);
        tail->children.push_back(std::move(d));
        tail = &tail->children.back();
    }
    return root;
}

}  // namespace hca::dom
