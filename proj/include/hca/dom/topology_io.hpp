#pragma once

#include <nlohmann/json_fwd.hpp>
#include <random>
#include <string>

#include "hca/dom/tree.hpp"

namespace hca::dom {

// JSON topology format, one object per domain:
//   { "name": "root", "boundaries": ["Root"],
//     "nodes": [ {"id": 1, "priority": 0}, {"id": 2, "priority": 1} ],
//     "children": [ ... ] }
// Node identities are derived from the seed; "priority" defaults to 0 and
// marks replicas of the preceding primary when positive. Machine addresses
// default to the node id.
DomainSpec topology_from_json(const nlohmann::json& j, std::mt19937_64& rng);
DomainSpec topology_from_file(const std::string& path, std::mt19937_64& rng);
nlohmann::json topology_to_json(const DomainSpec& spec);

// Generators used by scenarios and tests.

// Complete binary tree of the given depth; leaf domains hold one node each,
// every inner domain holds as many nodes as there are leaves below it, and
// `replicas_per_node` extra standby nodes follow each primary.
DomainSpec balanced_binary_tree(int depth, std::mt19937_64& rng, int replicas_per_node = 0);

// Single n-node domain with one single-node leaf child used as the access
// edge for clients and persistence servers.
DomainSpec flat_domain_with_edge(size_t n, std::mt19937_64& rng);

// Chain of `depth` single-position domains, each position carrying `replicas`
// nodes total (primary + standbys).
DomainSpec replicated_chain(int depth, int replicas, std::mt19937_64& rng);

}  // namespace hca::dom
