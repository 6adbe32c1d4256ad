#include <nlohmann/json.hpp>

#include "doctest.h"
#include "hca/harness/scenario.hpp"
#include "hca/sim/measure.hpp"

using namespace hca;
using namespace hca::sim;

namespace {

// Minimal machine that answers every frame with a KeepAlive.
class Echo : public Machine {
public:
    std::string kind() const override { return "echo"; }
    void on_frame(Context& ctx, const FrameEvent& ev) override {
        ++received;
        if (reply_to == 0) return;
        const auto& d = wire::MessageRegistry::instance().at(wire::msg::KeepAlive);
        FrameMeta meta;
        meta.type_id = wire::msg::KeepAlive;
        ctx.send(reply_to, wire::frame_message(d, 0, wire::WireValue::record({})), meta);
    }
    MachineId reply_to = 0;
    int received = 0;
};

Bytes keepalive_frame() {
    const auto& d = wire::MessageRegistry::instance().at(wire::msg::KeepAlive);
    return wire::frame_message(d, 0, wire::WireValue::record({}));
}

class Pinger : public Machine {
public:
    explicit Pinger(MachineId target) : target_(target) {}
    std::string kind() const override { return "pinger"; }
    void on_start(Context& ctx) override {
        FrameMeta meta;
        meta.type_id = wire::msg::KeepAlive;
        ctx.send(target_, keepalive_frame(), meta);
    }
    void on_frame(Context&, const FrameEvent&) override { ++replies; }
    int replies = 0;

private:
    MachineId target_;
};

}  // namespace

TEST_CASE("frames are delivered at link latency and recorded") {
    Engine engine(1);
    LinkModel link;
    link.coord_x[1] = 0.0;
    link.coord_x[2] = 10.0;
    link.ms_per_unit = 1.0;
    link.hop_cost_ms = 1.0;
    engine.set_link_model(link);

    auto echo = std::make_shared<Echo>();
    auto pinger = std::make_shared<Pinger>(2);
    engine.add_machine(1, pinger);
    engine.add_machine(2, echo);
    echo->reply_to = 1;
    engine.run();

    CHECK(echo->received == 1);
    CHECK(pinger->replies == 1);
    REQUIRE(engine.trace().size() >= 2);
    const auto& first = engine.trace()[0];
    CHECK(first.kind == "frame");
    CHECK(first.time == 11);  // distance 10 + hop cost 1
    CHECK(first.latency == 11);
    CHECK(first.outcome == "delivered");
}

TEST_CASE("crash drops deliveries and suppresses timers; restore revives") {
    Engine engine(2);
    auto echo = std::make_shared<Echo>();
    auto pinger = std::make_shared<Pinger>(2);
    engine.add_machine(2, echo);
    engine.add_machine(1, pinger);

    FaultAction crash;
    crash.kind = FaultAction::Crash;
    crash.machine = 2;
    crash.at = 0;  // applied before the ping arrives
    engine.add_fault(crash);
    engine.run();

    CHECK(echo->received == 0);
    bool saw_crashed_outcome = false;
    for (const auto& r : engine.trace())
        saw_crashed_outcome |= r.kind == "frame" && r.outcome == "crashed";
    CHECK(saw_crashed_outcome);
}

TEST_CASE("partitions block frames across the cut until healed") {
    Engine engine(3);
    auto echo = std::make_shared<Echo>();
    auto pinger = std::make_shared<Pinger>(2);
    engine.add_machine(2, echo);
    engine.add_machine(1, pinger);

    FaultAction part;
    part.kind = FaultAction::Partition;
    part.side_a = {1};
    part.at = 0;
    engine.add_fault(part);
    engine.run();
    CHECK(echo->received == 0);

    bool saw_partitioned = false;
    for (const auto& r : engine.trace()) saw_partitioned |= r.outcome == "partitioned";
    CHECK(saw_partitioned);
}

TEST_CASE("drop probability 1 behaves like a severed edge") {
    Engine engine(4);
    auto echo = std::make_shared<Echo>();
    auto pinger = std::make_shared<Pinger>(2);
    engine.add_machine(2, echo);
    engine.add_machine(1, pinger);
    FaultAction drop;
    drop.kind = FaultAction::Drop;
    drop.link_a = 1;
    drop.link_b = 2;
    drop.drop_probability = 1.0;
    drop.at = 0;
    engine.add_fault(drop);
    engine.run();
    CHECK(echo->received == 0);
}

TEST_CASE("identical seeds produce byte-identical traces") {
    auto run_once = [](uint64_t seed) {
        std::mt19937_64 rng(seed);
        harness::Scenario s;
        s.topology = dom::balanced_binary_tree(2, rng);
        s.tuning.keepalive_period_ms = 500;
        s.horizon_ms = 3000;
        harness::Runtime rt = harness::build_runtime(s, seed);
        rt.run();
        std::string dump;
        for (const auto& r : rt.trace()) dump += r.to_json().dump() + "\n";
        return dump;
    };
    std::string a = run_once(7);
    std::string b = run_once(7);
    std::string c = run_once(8);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(!a.empty());
}

TEST_CASE("empty scenario yields an empty trace") {
    Engine engine(5);
    engine.run();
    CHECK(engine.trace().empty());
}

TEST_CASE("metric sanity: recorded latency equals the sum of per-hop latencies") {
    std::mt19937_64 rng(11);
    harness::Scenario s;
    s.topology = dom::balanced_binary_tree(2, rng);
    s.tuning.keepalive_period_ms = 0;
    s.horizon_ms = 2000;
    harness::Runtime rt = harness::build_runtime(s, 11);
    rt.run();
    const auto& link = rt.engine->link_model();
    auto all = deliveries(rt.trace(), link, {}, {});
    for (const auto& d : all) {
        auto chain = journey_chain(rt.trace(), d.row);
        SimTime sum = 0;
        for (size_t idx : chain) sum += rt.trace()[idx].latency;
        CHECK(sum == d.route_latency);
        CHECK(d.delivered_time - d.origin_time == d.route_latency);
    }
}
