#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hca/ident/identity.hpp"

namespace hca::dom {

// Inclusive range of 64-bit routing prefixes.
struct PrefixRange {
    uint64_t start = 0;
    uint64_t end = 0;

    bool contains(uint64_t prefix) const { return prefix >= start && prefix <= end; }
    bool overlaps(const PrefixRange& o) const { return start <= o.end && o.start <= end; }
    bool operator==(const PrefixRange&) const = default;
};

inline constexpr const char* kStandardBoundaries[] = {
    "Local machine", "Local network", "Intranet", "Service provider",
    "Country",       "Continent",     "Root",
};

using NodeId = uint32_t;

// priority 0 entries are primaries and receive address ranges; higher
// priorities are standby replicas of the nearest preceding primary.
struct NodeSpec {
    NodeId id = 0;
    ident::Identity identity;
    int replica_priority = 0;
    uint32_t net_address = 0;  // simulated machine id
};

struct DomainSpec {
    std::string name;
    ident::Identity identity;
    std::vector<std::string> boundaries;
    std::vector<NodeSpec> nodes;
    std::vector<DomainSpec> children;
};

struct TopologyViolation {
    std::string domain_path;  // "/root/a/b"
    std::string rule;
    std::string detail;
};

struct TopologyReport {
    std::vector<TopologyViolation> violations;
    bool ok() const { return violations.empty(); }
};

// Indexed, immutable view over a DomainSpec with assigned address ranges.
class DomainTree {
public:
    struct DomainInfo {
        std::string name;
        std::string path;  // "/" separated from root
        int depth = 0;     // root = 0
        ident::Identity identity;
        std::vector<std::string> boundaries;
        int parent = -1;              // index into domains()
        std::vector<int> children;    // indices into domains()
        std::vector<NodeId> primaries;  // in listed order
        std::vector<std::vector<NodeId>> replica_groups;  // per primary, priority order
        size_t node_count = 0;     // all nodes in this domain
        size_t subtree_nodes = 0;  // nodes in this domain and below
    };

    struct NodeInfo {
        NodeSpec spec;
        int domain = -1;  // index into domains()
        int group = -1;   // primary position within the domain
        PrefixRange range;  // meaningful for primaries
        bool is_primary = false;
    };

    static DomainTree build(const DomainSpec& root);

    const std::vector<DomainInfo>& domains() const { return domains_; }
    const DomainInfo& domain(int index) const { return domains_.at(static_cast<size_t>(index)); }
    const NodeInfo& node(NodeId id) const;
    bool has_node(NodeId id) const { return nodes_.count(id) != 0; }
    const std::map<NodeId, NodeInfo>& nodes() const { return nodes_; }
    int root_index() const { return 0; }

    // Primary in `domain` whose range contains the prefix.
    NodeId responsible_node(int domain_index, uint64_t prefix) const;

    // Parent-domain primaries overlapping this node's range, with the exact
    // overlap. Empty for nodes of the root domain.
    std::vector<std::pair<NodeId, PrefixRange>> parent_contacts(NodeId id) const;

    // Child-domain primaries overlapping this node's range, grouped by child
    // domain index.
    std::vector<std::pair<NodeId, PrefixRange>> child_contacts(NodeId id, int child_domain) const;

    // Innermost domain on the root-to-`domain_index` path carrying any of the
    // given boundary tags. Empty tag list means the root domain; nullopt means
    // the socket is not visible anywhere on this path.
    std::optional<int> smallest_boundary_domain(int domain_index,
                                                const std::vector<std::string>& tags) const;

    // Root-to-domain list of domain names.
    std::vector<std::string> location_of(int domain_index) const;
    std::optional<int> domain_by_location(const std::vector<std::string>& location) const;

private:
    std::vector<DomainInfo> domains_;
    std::map<NodeId, NodeInfo> nodes_;
};

// Splits the full 64-bit space into n contiguous blocks whose sizes differ by
// at most one, in node order.
std::vector<PrefixRange> assign_address_ranges(size_t n);

TopologyReport validate_topology(const DomainTree& tree, size_t branching_cap = 16,
                                 double balance_factor = 4.0);

}  // namespace hca::dom
