#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "hca/bytes.hpp"

namespace hca::sim {

using MachineId = uint32_t;
using SimTime = int64_t;  // simulated milliseconds

// Per-frame observability metadata; travels alongside the wire bytes, never
// inside them.
struct FrameMeta {
    uint32_t type_id = 0;
    std::optional<uint64_t> prefix;     // routing prefix when known
    std::optional<uint64_t> socket_id;  // socket the frame concerns
    uint64_t journey = 0;               // origin-assigned id propagated on forward
    uint32_t hop = 0;                   // 0 at origin, +1 per machine-to-machine send
    // Delivery context standing in for per-connection protocol state real
    // deployments would keep (which subscription stream a Commit answers,
    // whether an Update is a snapshot response). Never wire bytes.
    uint8_t context = 0;  // 0 none, 1 snapshot response
};

struct FrameEvent {
    MachineId from = 0;
    Bytes bytes;
    FrameMeta meta;
};

struct TimerEvent {
    uint64_t id = 0;
    std::string tag;
};

struct StartEvent {};
struct RestoreEvent {};
// Out-of-band handoff used by scenarios ("send the reference by any channel").
struct GiftEvent {
    std::string tag;
    Bytes payload;
};

using EventPayload = std::variant<FrameEvent, TimerEvent, StartEvent, RestoreEvent, GiftEvent>;

struct TraceRecord {
    SimTime time = 0;
    MachineId source = 0;
    MachineId destination = 0;
    std::string kind;   // "frame" | "note"
    std::string type;   // message name or note kind
    std::optional<uint64_t> prefix;
    std::optional<uint64_t> socket_id;
    uint64_t journey = 0;
    uint32_t hop = 0;
    std::string outcome;  // delivered | crashed | partitioned | dropped | note
    SimTime latency = 0;  // per-hop link latency for frame records
    size_t size = 0;      // frame bytes on the wire
    nlohmann::json detail;  // note payload

    nlohmann::json to_json() const;
};

class Engine;

// One machine's view of the engine while it handles an event.
class Context {
public:
    Context(Engine& engine, MachineId self, SimTime now, uint64_t origin_journey,
            uint32_t origin_hop)
        : engine_(engine), self_(self), now_(now), journey_(origin_journey), hop_(origin_hop) {}

    MachineId self() const { return self_; }
    SimTime now() const { return now_; }
    std::mt19937_64& rng();

    // Sends a frame; hop/journey default to continuing the event being
    // handled (a forward). fresh_journey() starts a new one.
    void send(MachineId to, Bytes bytes, FrameMeta meta);
    uint64_t fresh_journey();

    void set_timer(SimTime delay, uint64_t id, std::string tag);
    void note(const std::string& kind, nlohmann::json detail);

    uint64_t current_journey() const { return journey_; }
    uint32_t current_hop() const { return hop_; }

private:
    Engine& engine_;
    MachineId self_;
    SimTime now_;
    uint64_t journey_;
    uint32_t hop_;
};

// Event-driven state machine: consumes (time, event) pairs, emits sends,
// timers, and notes through the Context. No internal threads or clocks.
class Machine {
public:
    virtual ~Machine() = default;
    virtual void on_start(Context&) {}
    virtual void on_frame(Context&, const FrameEvent&) = 0;
    virtual void on_timer(Context&, const TimerEvent&) {}
    virtual void on_gift(Context&, const GiftEvent&) {}
    // Crash wipes volatile state; restore may re-run joins etc.
    virtual void on_crash() {}
    virtual void on_restore(Context&) {}
    virtual bool durable() const { return false; }
    virtual std::string kind() const = 0;
};

// Metric latency model over a 1-D (or planar) embedding. Latency between two
// machines = distance * ms_per_unit + fixed hop cost.
struct LinkModel {
    std::map<MachineId, double> coord_x;
    std::map<MachineId, double> coord_y;  // zero for the 1-D embedding
    double ms_per_unit = 1.0;
    double hop_cost_ms = 1.0;

    SimTime latency(MachineId a, MachineId b) const;
    double distance(MachineId a, MachineId b) const;
};

struct FaultAction {
    SimTime at = 0;
    enum Kind { Crash, Restore, Partition, Heal, Drop } kind = Crash;
    MachineId machine = 0;                  // Crash/Restore
    std::set<MachineId> side_a;             // Partition
    MachineId link_a = 0, link_b = 0;       // Drop
    double drop_probability = 0.0;          // Drop
};

class Engine {
public:
    explicit Engine(uint64_t seed);

    void add_machine(MachineId id, std::shared_ptr<Machine> machine);
    Machine* machine(MachineId id);
    void set_link_model(LinkModel model) { link_ = std::move(model); }
    const LinkModel& link_model() const { return link_; }
    void add_fault(FaultAction action) { faults_.push_back(std::move(action)); }
    void schedule_gift(SimTime at, MachineId to, std::string tag, Bytes payload);

    // Runs every event up to the horizon (or to quiescence).
    void run(SimTime horizon = INT64_MAX);

    SimTime now() const { return now_; }
    std::mt19937_64& rng() { return rng_; }
    const std::vector<TraceRecord>& trace() const { return trace_; }
    std::vector<TraceRecord>& trace_mut() { return trace_; }
    bool crashed(MachineId id) const { return crashed_.count(id) != 0; }

    // used by Context
    void do_send(MachineId from, MachineId to, Bytes bytes, FrameMeta meta, SimTime at);
    void do_set_timer(MachineId machine, SimTime at, uint64_t id, std::string tag);
    void do_note(MachineId machine, const std::string& kind, nlohmann::json detail);
    uint64_t next_journey() { return ++journey_counter_; }

private:
    struct Scheduled {
        SimTime time;
        uint64_t seq;
        MachineId target;
        EventPayload payload;
        MachineId source = 0;
        bool operator>(const Scheduled& o) const {
            return std::tie(time, seq) > std::tie(o.time, o.seq);
        }
    };

    void apply_fault(const FaultAction& f);
    bool blocked(MachineId a, MachineId b) const;
    void dispatch(const Scheduled& ev);

    std::mt19937_64 rng_;
    SimTime now_ = 0;
    uint64_t seq_counter_ = 0;
    uint64_t journey_counter_ = 0;
    std::map<MachineId, std::shared_ptr<Machine>> machines_;
    LinkModel link_;
    std::priority_queue<Scheduled, std::vector<Scheduled>, std::greater<>> queue_;
    std::vector<FaultAction> faults_;
    std::set<MachineId> crashed_;
    std::vector<std::set<MachineId>> partitions_;  // active cuts (side A sets)
    std::map<std::pair<MachineId, MachineId>, double> lossy_links_;
    std::vector<TraceRecord> trace_;
    // timers cancelled by crash
    std::map<MachineId, uint64_t> crash_epoch_;
    std::map<uint64_t, uint64_t> timer_epoch_;  // seq -> machine crash epoch at schedule
};

}  // namespace hca::sim
