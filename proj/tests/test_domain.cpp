#include <nlohmann/json.hpp>
#include <random>
#include <set>

#include "doctest.h"
#include "hca/dom/topology_io.hpp"
#include "hca/dom/tree.hpp"

using namespace hca;
using namespace hca::dom;

TEST_CASE("address range assignment splits the space evenly") {
    auto one = assign_address_ranges(1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].start == 0);
    CHECK(one[0].end == UINT64_MAX);

    auto two = assign_address_ranges(2);
    CHECK(two[0] == PrefixRange{0, (uint64_t{1} << 63) - 1});
    CHECK(two[1] == PrefixRange{uint64_t{1} << 63, UINT64_MAX});

    // uneven split: block sizes differ by at most one
    for (size_t n : {3u, 7u, 100u}) {
        auto ranges = assign_address_ranges(n);
        REQUIRE(ranges.size() == n);
        CHECK(ranges.front().start == 0);
        CHECK(ranges.back().end == UINT64_MAX);
        unsigned __int128 min_size = ~(unsigned __int128)0, max_size = 0;
        for (size_t i = 0; i < n; ++i) {
            if (i) CHECK(ranges[i].start == ranges[i - 1].end + 1);
            unsigned __int128 size =
                (unsigned __int128)(ranges[i].end - ranges[i].start) + 1;
            min_size = std::min(min_size, size);
            max_size = std::max(max_size, size);
        }
        CHECK(max_size - min_size <= 1);
    }
}

TEST_CASE("responsible node is total over the prefix space") {
    std::mt19937_64 rng(1);
    auto spec = flat_domain_with_edge(10, rng);
    auto tree = DomainTree::build(spec);

    std::set<NodeId> seen;
    for (uint64_t prefix : {uint64_t{0}, uint64_t{1} << 63, UINT64_MAX}) {
        NodeId id = tree.responsible_node(0, prefix);
        CHECK(tree.node(id).range.contains(prefix));
        seen.insert(id);
    }
    // sampled prefixes always land on exactly one node
    for (int i = 0; i < 1000; ++i) {
        uint64_t prefix = rng();
        NodeId id = tree.responsible_node(0, prefix);
        int owners = 0;
        for (NodeId p : tree.domain(0).primaries)
            if (tree.node(p).range.contains(prefix)) ++owners;
        CHECK(owners == 1);
        CHECK(tree.node(id).range.contains(prefix));
    }

    // single-node domain owns everything
    NodeId edge = tree.domain(1).primaries[0];
    CHECK(tree.node(edge).range == PrefixRange{0, UINT64_MAX});
}

TEST_CASE("responsible node split points for two nodes") {
    std::mt19937_64 rng(4);
    auto spec = flat_domain_with_edge(2, rng);
    auto tree = DomainTree::build(spec);
    CHECK(tree.responsible_node(0, 0) == tree.domain(0).primaries[0]);
    CHECK(tree.responsible_node(0, uint64_t{1} << 63) == tree.domain(0).primaries[1]);
}

TEST_CASE("parent contacts cover exactly the node range") {
    std::mt19937_64 rng(2);
    auto spec = flat_domain_with_edge(2, rng);
    auto tree = DomainTree::build(spec);

    // edge node covers the full space, parent domain has two nodes
    NodeId edge = tree.domain(1).primaries[0];
    auto contacts = tree.parent_contacts(edge);
    REQUIRE(contacts.size() == 2);
    CHECK(contacts[0].second == PrefixRange{0, (uint64_t{1} << 63) - 1});
    CHECK(contacts[1].second == PrefixRange{uint64_t{1} << 63, UINT64_MAX});

    // a narrower child range selects a single contact
    auto spec2 = balanced_binary_tree(2, rng);
    auto tree2 = DomainTree::build(spec2);
    for (const auto& [id, info] : tree2.nodes()) {
        if (tree2.domain(info.domain).depth == 0) continue;
        auto cs = tree2.parent_contacts(id);
        CHECK(!cs.empty());
        // overlaps are exact and within both ranges
        uint64_t covered = 0;
        for (auto& [pid, overlap] : cs) {
            CHECK(tree2.node(pid).range.contains(overlap.start));
            CHECK(info.range.contains(overlap.start));
            covered += overlap.end - overlap.start + 1;  // no wrap in these trees
        }
        CHECK(covered == info.range.end - info.range.start + 1);
    }
}

TEST_CASE("contact count stays small over balanced binary trees") {
    std::mt19937_64 rng(3);
    for (int depth = 1; depth <= 10; ++depth) {
        auto tree = DomainTree::build(balanced_binary_tree(depth, rng));
        size_t worst = 0;
        for (const auto& [id, info] : tree.nodes()) {
            if (tree.domain(info.domain).depth == 0) continue;
            worst = std::max(worst, tree.parent_contacts(id).size());
        }
        CHECK(worst <= 3);
    }
}

TEST_CASE("topology validation flags the spec'd violations") {
    std::mt19937_64 rng(9);

    // balanced binary tree passes
    auto good = DomainTree::build(balanced_binary_tree(3, rng));
    CHECK(validate_topology(good).ok());

    // empty domain
    DomainSpec root;
    root.name = "r";
    NodeSpec n1{1, {}, 0, 1};
    root.nodes.push_back(n1);
    DomainSpec empty;
    empty.name = "hollow";
    root.children.push_back(empty);
    auto report = validate_topology(DomainTree::build(root));
    REQUIRE_FALSE(report.ok());
    bool saw_empty = false;
    for (auto& v : report.violations) saw_empty |= v.rule == "no-nodes";
    CHECK(saw_empty);

    // 10 vs 1000 sibling imbalance at factor 4
    DomainSpec big;
    big.name = "r";
    for (NodeId i = 1; i <= 4; ++i) big.nodes.push_back({i, {}, 0, i});
    DomainSpec a, c;
    a.name = "a";
    c.name = "b";
    for (NodeId i = 100; i < 110; ++i) a.nodes.push_back({i, {}, 0, i});
    for (NodeId i = 1000; i < 2000; ++i) c.nodes.push_back({i, {}, 0, i});
    big.children.push_back(a);
    big.children.push_back(c);
    auto report2 = validate_topology(DomainTree::build(big));
    bool saw_balance = false;
    for (auto& v : report2.violations) saw_balance |= v.rule == "sibling-node-balance";
    CHECK(saw_balance);

    // branching cap
    DomainSpec wide;
    wide.name = "r";
    wide.nodes.push_back({1, {}, 0, 1});
    for (int i = 0; i < 20; ++i) {
        DomainSpec ch;
        ch.name = "c" + std::to_string(i);
        ch.nodes.push_back({static_cast<NodeId>(10 + i), {}, 0, 0});
        wide.children.push_back(ch);
    }
    auto report3 = validate_topology(DomainTree::build(wide), 16, 4.0);
    bool saw_cap = false;
    for (auto& v : report3.violations) saw_cap |= v.rule == "branching-cap";
    CHECK(saw_cap);
}

TEST_CASE("smallest boundary domain selection") {
    std::mt19937_64 rng(10);
    // root(Root) -> mid(Intranet) -> leaf()
    DomainSpec root;
    root.name = "root";
    root.boundaries = {"Root"};
    root.nodes.push_back({1, {}, 0, 1});
    DomainSpec mid;
    mid.name = "mid";
    mid.boundaries = {"Intranet"};
    mid.nodes.push_back({2, {}, 0, 2});
    DomainSpec leaf;
    leaf.name = "leaf";
    leaf.nodes.push_back({3, {}, 0, 3});
    mid.children.push_back(leaf);
    root.children.push_back(mid);
    auto tree = DomainTree::build(root);
    (void)rng;

    int leaf_index = 2;  // depth-first order: root=0, mid=1, leaf=2
    REQUIRE(tree.domain(leaf_index).name == "leaf");

    // empty boundary list means a global socket
    CHECK(tree.smallest_boundary_domain(leaf_index, {}) == 0);
    CHECK(tree.smallest_boundary_domain(leaf_index, {"Intranet"}) == 1);
    CHECK(tree.smallest_boundary_domain(leaf_index, {"Root"}) == 0);
    CHECK_FALSE(tree.smallest_boundary_domain(leaf_index, {"Nonexistent"}).has_value());
}

TEST_CASE("deterministic rebuild from identical specs") {
    std::mt19937_64 rng1(77), rng2(77);
    auto a = DomainTree::build(balanced_binary_tree(4, rng1));
    auto c = DomainTree::build(balanced_binary_tree(4, rng2));
    REQUIRE(a.nodes().size() == c.nodes().size());
    for (const auto& [id, info] : a.nodes()) {
        CHECK(c.node(id).range == info.range);
        CHECK(c.node(id).domain == info.domain);
    }
}

TEST_CASE("topology json round-trip preserves structure") {
    std::mt19937_64 rng(12);
    auto spec = balanced_binary_tree(2, rng, 1);
    auto j = topology_to_json(spec);
    std::mt19937_64 rng2(12);
    auto back = topology_from_json(j, rng2);
    auto t1 = DomainTree::build(spec);
    auto t2 = DomainTree::build(back);
    REQUIRE(t1.domains().size() == t2.domains().size());
    for (size_t i = 0; i < t1.domains().size(); ++i) {
        CHECK(t1.domains()[i].path == t2.domains()[i].path);
        CHECK(t1.domains()[i].primaries == t2.domains()[i].primaries);
        CHECK(t1.domains()[i].replica_groups == t2.domains()[i].replica_groups);
    }
}
