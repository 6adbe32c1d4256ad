#include "hca/dom/tree.hpp"

#include <algorithm>
#include <stdexcept>

namespace hca::dom {

std::vector<PrefixRange> assign_address_ranges(size_t n) {
    if (n == 0) throw std::invalid_argument("domain must have at least one node");
    std::vector<PrefixRange> ranges;
    ranges.reserve(n);
    const unsigned __int128 space = (unsigned __int128)1 << 64;
    unsigned __int128 cursor = 0;
    for (size_t i = 0; i < n; ++i) {
        unsigned __int128 next = space * (i + 1) / n;
        ranges.push_back({static_cast<uint64_t>(cursor), static_cast<uint64_t>(next - 1)});
        cursor = next;
    }
    return ranges;
}

DomainTree DomainTree::build(const DomainSpec& root) {
    DomainTree tree;

    struct Frame {
        const DomainSpec* spec;
        int parent;
        std::string path;
        int depth;
    };
    std::vector<Frame> stack{{&root, -1, "/" + root.name, 0}};
    // depth-first, children in declaration order, so indices are stable for a
    // given spec
    while (!stack.empty()) {
        Frame f = stack.back();
        stack.pop_back();
        int index = static_cast<int>(tree.domains_.size());
        DomainInfo info;
        info.name = f.spec->name;
        info.path = f.path;
        info.depth = f.depth;
        info.identity = f.spec->identity;
        info.boundaries = f.spec->boundaries;
        info.parent = f.parent;
        info.node_count = f.spec->nodes.size();
        if (f.parent >= 0) tree.domains_[static_cast<size_t>(f.parent)].children.push_back(index);

        // group nodes: each priority-0 entry opens a replica group
        std::vector<std::vector<const NodeSpec*>> groups;
        for (const NodeSpec& ns : f.spec->nodes) {
            if (ns.replica_priority == 0 || groups.empty()) groups.emplace_back();
            groups.back().push_back(&ns);
        }
        if (groups.empty()) {
            tree.domains_.push_back(std::move(info));
        } else {
            auto ranges = assign_address_ranges(groups.size());
            for (size_t g = 0; g < groups.size(); ++g) {
                auto& group = groups[g];
                std::sort(group.begin(), group.end(), [](const NodeSpec* a, const NodeSpec* b) {
                    return a->replica_priority < b->replica_priority;
                });
                info.primaries.push_back(group.front()->id);
                std::vector<NodeId> member_ids;
                for (const NodeSpec* ns : group) {
                    member_ids.push_back(ns->id);
                    NodeInfo ni;
                    ni.spec = *ns;
                    ni.domain = index;
                    ni.group = static_cast<int>(g);
                    ni.range = ranges[g];
                    ni.is_primary = ns == group.front();
                    if (!tree.nodes_.emplace(ns->id, std::move(ni)).second)
                        throw std::invalid_argument("duplicate node id in topology");
                }
                info.replica_groups.push_back(std::move(member_ids));
            }
            tree.domains_.push_back(std::move(info));
        }

        // push children reversed so they pop in declaration order
        for (auto it = f.spec->children.rbegin(); it != f.spec->children.rend(); ++it)
            stack.push_back({&*it, index, f.path + "/" + it->name, f.depth + 1});
    }

    // subtree node counts, children are always after their parent in the vector
    for (int i = static_cast<int>(tree.domains_.size()) - 1; i >= 0; --i) {
        auto& d = tree.domains_[static_cast<size_t>(i)];
        d.subtree_nodes = d.node_count;
        for (int c : d.children) d.subtree_nodes += tree.domains_[static_cast<size_t>(c)].subtree_nodes;
    }
    return tree;
}

const DomainTree::NodeInfo& DomainTree::node(NodeId id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw std::out_of_range("unknown node id");
    return it->second;
}

NodeId DomainTree::responsible_node(int domain_index, uint64_t prefix) const {
    const DomainInfo& d = domain(domain_index);
    for (NodeId id : d.primaries) {
        if (node(id).range.contains(prefix)) return id;
    }
    throw std::logic_error("prefix space not fully covered");  // partition invariant
}

std::vector<std::pair<NodeId, PrefixRange>> DomainTree::parent_contacts(NodeId id) const {
    const NodeInfo& n = node(id);
    const DomainInfo& d = domain(n.domain);
    std::vector<std::pair<NodeId, PrefixRange>> contacts;
    if (d.parent < 0) return contacts;
    const DomainInfo& p = domain(d.parent);
    for (NodeId pid : p.primaries) {
        const PrefixRange& pr = node(pid).range;
        if (pr.overlaps(n.range))
            contacts.push_back({pid, {std::max(pr.start, n.range.start),
                                      std::min(pr.end, n.range.end)}});
    }
    return contacts;
}

std::vector<std::pair<NodeId, PrefixRange>> DomainTree::child_contacts(NodeId id,
                                                                       int child_domain) const {
    const NodeInfo& n = node(id);
    std::vector<std::pair<NodeId, PrefixRange>> contacts;
    for (NodeId cid : domain(child_domain).primaries) {
        const PrefixRange& cr = node(cid).range;
        if (cr.overlaps(n.range))
            contacts.push_back({cid, {std::max(cr.start, n.range.start),
                                      std::min(cr.end, n.range.end)}});
    }
    return contacts;
}

std::optional<int> DomainTree::smallest_boundary_domain(
    int domain_index, const std::vector<std::string>& tags) const {
    if (tags.empty()) return root_index();  // global socket by default
    for (int i = domain_index; i >= 0; i = domain(i).parent) {
        for (const auto& b : domain(i).boundaries) {
            for (const auto& t : tags) {
                if (b == t) return i;
            }
        }
    }
    return std::nullopt;  // not visible at all
}

std::vector<std::string> DomainTree::location_of(int domain_index) const {
    std::vector<std::string> names;
    for (int i = domain_index; i >= 0; i = domain(i).parent) names.push_back(domain(i).name);
    std::reverse(names.begin(), names.end());
    return names;
}

std::optional<int> DomainTree::domain_by_location(const std::vector<std::string>& location) const {
    if (location.empty() || location[0] != domains_[0].name) return std::nullopt;
    int current = 0;
    for (size_t i = 1; i < location.size(); ++i) {
        int next = -1;
        for (int c : domain(current).children) {
            if (domain(c).name == location[i]) {
                next = c;
                break;
            }
        }
        if (next < 0) return std::nullopt;
        current = next;
    }
    return current;
}

TopologyReport validate_topology(const DomainTree& tree, size_t branching_cap,
                                 double balance_factor) {
    TopologyReport report;
    auto violation = [&](const DomainTree::DomainInfo& d, std::string rule, std::string detail) {
        report.violations.push_back({d.path, std::move(rule), std::move(detail)});
    };
    auto within_factor = [&](size_t a, size_t b) {
        if (a == 0 || b == 0) return a == b;
        double hi = static_cast<double>(std::max(a, b));
        double lo = static_cast<double>(std::min(a, b));
        return hi <= balance_factor * lo;
    };

    for (const auto& d : tree.domains()) {
        if (d.node_count == 0) violation(d, "no-nodes", "domain has no nodes");
        if (d.children.size() > branching_cap)
            violation(d, "branching-cap",
                      std::to_string(d.children.size()) + " children > cap " +
                          std::to_string(branching_cap));
        // sibling balance over node counts and subtree sizes
        for (size_t i = 0; i < d.children.size(); ++i) {
            for (size_t j = i + 1; j < d.children.size(); ++j) {
                const auto& a = tree.domain(d.children[i]);
                const auto& b = tree.domain(d.children[j]);
                if (!within_factor(a.node_count, b.node_count))
                    violation(d, "sibling-node-balance",
                              a.path + " has " + std::to_string(a.node_count) + " nodes vs " +
                                  b.path + " with " + std::to_string(b.node_count));
                if (!within_factor(a.subtree_nodes, b.subtree_nodes))
                    violation(d, "sibling-subtree-balance",
                              a.path + " subtree " + std::to_string(a.subtree_nodes) + " vs " +
                                  b.path + " subtree " + std::to_string(b.subtree_nodes));
            }
        }
        if (!d.children.empty()) {
            size_t child_sum = 0;
            for (int c : d.children) child_sum += tree.domain(c).node_count;
            if (!within_factor(d.node_count, child_sum))
                violation(d, "layer-balance",
                          std::to_string(d.node_count) + " nodes vs child sum " +
                              std::to_string(child_sum));
        }
    }
    return report;
}

}  // namespace hca::dom
