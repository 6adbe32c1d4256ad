#include <nlohmann/json.hpp>

#include "doctest.h"
#include "hca/harness/scenario.hpp"
#include "hca/sim/measure.hpp"

using namespace hca;
using namespace hca::harness;
using nlohmann::json;

namespace {

// note rows of a given type for a given session
std::vector<json> notes_of(const Runtime& rt, const std::string& type,
                           const std::string& session = {}) {
    std::vector<json> out;
    for (const auto& r : rt.trace()) {
        if (r.kind != "note" || r.type != type) continue;
        if (!session.empty() &&
            (!r.detail.contains("session") || r.detail["session"] != session))
            continue;
        out.push_back(r.detail);
    }
    return out;
}

Scenario writer_reader_scenario(std::mt19937_64& rng, int commits) {
    Scenario s;
    s.topology = dom::balanced_binary_tree(2, rng);  // 4 leaves, nodes 1..14
    s.tuning.keepalive_period_ms = 0;                // quiet network for the test
    s.horizon_ms = 30000;

    // leaves in depth-first order: find two distinct leaf node ids
    auto tree = dom::DomainTree::build(s.topology);
    std::vector<dom::NodeId> leaves;
    for (const auto& d : tree.domains())
        if (d.children.empty()) leaves.push_back(d.primaries[0]);
    REQUIRE(leaves.size() == 4);

    s.pservers.push_back({"store", leaves[0], 1 << 20, 2000});

    HostedSocket vec;
    vec.alias = "vec";
    vec.pserver = "store";
    s.sockets.push_back(vec);

    ClientSpec writer;
    writer.name = "writer";
    writer.leaf_node = leaves[0];
    writer.script = {
        {100, "open", "vec", {}},
        {400, "lock", "vec", {{"mode", "force"}}},
    };
    for (int i = 0; i < commits; ++i) {
        writer.script.push_back({700 + i * 100, "edit", "vec",
                                 {{"edits", json::array({{{"op", "append"},
                                                          {"data", "v" + std::to_string(i)}}})}}});
        writer.script.push_back({720 + i * 100, "commit", "vec", {}});
    }
    s.clients.push_back(writer);

    ClientSpec reader;
    reader.name = "reader";
    reader.leaf_node = leaves[3];
    reader.auto_next_state = true;
    reader.script = {
        {100, "open", "vec", {}},
        {500, "subscribe", "vec", {{"all", true}}},
    };
    s.clients.push_back(reader);
    return s;
}

}  // namespace

TEST_CASE("end to end: open, lock, commit, push delivery across the tree") {
    std::mt19937_64 rng(42);
    Scenario s = writer_reader_scenario(rng, 5);
    Runtime rt = build_runtime(s, 42);
    rt.run();

    // both sessions opened the socket
    CHECK(notes_of(rt, "open_ok", "writer").size() == 1);
    CHECK(notes_of(rt, "open_ok", "reader").size() == 1);
    CHECK(notes_of(rt, "lock_ok", "writer").size() == 1);

    // reader observed states 1..5 in order with no gaps
    auto delivered = notes_of(rt, "state_delivered", "reader");
    REQUIRE(delivered.size() >= 5);
    uint64_t expect = 1;
    for (const auto& d : delivered) {
        CHECK(d["state"] == expect);
        ++expect;
    }

    // the writer saw commit confirmations (persistence quorum of one)
    CHECK(!notes_of(rt, "state_committed", "writer").empty());
}

TEST_CASE("same-leaf delivery turns at the shared leaf") {
    std::mt19937_64 rng(43);
    Scenario s = writer_reader_scenario(rng, 3);
    s.clients[1].leaf_node = s.clients[0].leaf_node;  // reader beside the writer
    Runtime rt = build_runtime(s, 43);
    rt.run();

    auto delivered = notes_of(rt, "state_delivered", "reader");
    CHECK(delivered.size() >= 3);

    // every Update delivery into the reader's machine visited only the leaf
    auto reader_machine = rt.machine("reader");
    auto updates = sim::deliveries(rt.trace(), rt.engine->link_model(), {"Update"},
                                   {reader_machine});
    REQUIRE(!updates.empty());
    for (const auto& d : updates) {
        CHECK(d.nodes_visited == 1);  // writer -> leaf -> reader
    }
}

TEST_CASE("snapshot pull observes the latest state only") {
    std::mt19937_64 rng(44);
    Scenario s = writer_reader_scenario(rng, 5);
    // replace the reader's push subscription with two snapshots around the stream
    s.clients[1].auto_next_state = true;
    s.clients[1].script = {
        {100, "open", "vec", {}},
        {300, "snapshot", "vec", {}},
        {2000, "snapshot", "vec", {}},
    };
    Runtime rt = build_runtime(s, 44);
    rt.run();

    auto snapshots = notes_of(rt, "snapshot_state", "reader");
    CHECK(snapshots.size() <= 2);
    REQUIRE(!snapshots.empty());
    // the late snapshot sees the final state, not the intermediate ones
    CHECK(snapshots.back()["state"] == 5);
}

TEST_CASE("message sink lifecycle: send, receive, consume") {
    std::mt19937_64 rng(45);
    Scenario s;
    s.topology = dom::balanced_binary_tree(2, rng);
    s.tuning.keepalive_period_ms = 0;
    s.horizon_ms = 30000;
    auto tree = dom::DomainTree::build(s.topology);
    std::vector<dom::NodeId> leaves;
    for (const auto& d : tree.domains())
        if (d.children.empty()) leaves.push_back(d.primaries[0]);

    s.pservers.push_back({"store", leaves[1], 1 << 20, 2000});
    HostedSocket sink;
    sink.alias = "sink";
    sink.pserver = "store";
    sink.socket_type = wire::socket_type::MessageSink;
    sink.buffer_alias = "buf";
    s.sockets.push_back(sink);

    ClientSpec receiver;
    receiver.name = "rx";
    receiver.leaf_node = leaves[2];
    receiver.script = {
        {100, "open", "sink", {}},
        {400, "lock", "sink", {{"mode", "force"}}},
        {600, "start_receiving", "sink", {}},
        {3000, "consume", "sink", {}},
        {3500, "consume", "sink", {}},
    };
    s.clients.push_back(receiver);

    ClientSpec sender;
    sender.name = "tx";
    sender.leaf_node = leaves[0];
    sender.script = {
        {100, "open", "sink", {}},
        {1200, "send_message", "sink",
         {{"data", "hello"}, {"buffer", "buf"}, {"max_time_ms", 20000}}},
        {1400, "send_message", "sink",
         {{"data", "world"}, {"buffer", "buf"}, {"max_time_ms", 20000}}},
    };
    s.clients.push_back(sender);

    Runtime rt = build_runtime(s, 45);
    rt.run();

    CHECK(notes_of(rt, "message_stored", "tx").size() == 2);
    auto received = notes_of(rt, "message_received", "rx");
    REQUIRE(received.size() == 2);
    auto consumed = notes_of(rt, "message_consumed", "rx");
    CHECK(consumed.size() == 2);
    for (const auto& c : consumed) CHECK(c["ok"] == true);
}

TEST_CASE("open on deleted socket is dangling; unreachable is distinct") {
    std::mt19937_64 rng(46);
    Scenario s;
    s.topology = dom::balanced_binary_tree(1, rng);
    s.tuning.keepalive_period_ms = 0;
    s.horizon_ms = 20000;
    auto tree = dom::DomainTree::build(s.topology);
    std::vector<dom::NodeId> leaves;
    for (const auto& d : tree.domains())
        if (d.children.empty()) leaves.push_back(d.primaries[0]);

    s.pservers.push_back({"store", leaves[0], 1 << 20, 0});

    ClientSpec prober;
    prober.name = "prober";
    prober.leaf_node = leaves[1];
    prober.script = {{500, "open", "ghost", {}}};
    s.clients.push_back(prober);

    // a reference to a socket that never existed: dangling, not unreachable
    Runtime rt = build_runtime(s, 46);
    {
        proto::SocketRef ghost;
        ghost.id = 1234567;
        ghost.contact_prefixes = {42, 43};
        rt.engine->schedule_gift(100, rt.machine("prober"), "ghost",
                                 proto::serialize_reference(ghost));
    }
    rt.run();
    CHECK(notes_of(rt, "open_dangling", "prober").size() == 1);
    CHECK(notes_of(rt, "open_unreachable", "prober").empty());
}
