#pragma once

#include <deque>
#include <map>
#include <optional>
#include <set>

#include "hca/dom/tree.hpp"
#include "hca/proto/values.hpp"
#include "hca/sim/engine.hpp"

namespace hca::node {

using sim::MachineId;
using sim::SimTime;

// Tunables with the defaults the protocol leaves open.
struct NodeTuning {
    SimTime keepalive_period_ms = 1000;   // 0 disables keep-alives
    SimTime keepalive_threshold_ms = 3000;  // base; jittered x[0.5, 1.5] per connection
    SimTime reconnect_retry_ms = 2000;      // primary-recovery probing, jittered
    SimTime migrate_step_ms = 50;           // gradual subscription move-back
    size_t socket_files_per_child = 1000;   // storage quota per child link
    size_t max_total_files = 1 << 20;       // global pressure bound
    size_t creation_rate_per_window = 64;   // NewSocketFile floods beyond this
    SimTime creation_window_ms = 1000;
    SimTime bandwidth_window_ms = 200;
    size_t content_cache_bytes = 1 << 20;
    SimTime cache_half_life_ms = 10000;
    bool shortcuts_enabled = false;
    size_t shortcut_relay_threshold = 3;  // single-path frames before breaking out
    SimTime shortcut_idle_timeout_ms = 4000;
    SimTime pending_ttl_ms = 60000;  // reverse-path response bookkeeping
};

struct ParentContactConfig {
    MachineId machine = 0;
    ident::Identity identity;
    dom::PrefixRange range;           // the contact's announced range
    std::vector<std::pair<MachineId, ident::Identity>> replicas;  // standby ranks in priority order
};

// Static intra-domain coordination: each node knows its own domain's member
// assignment (the intra-domain protocol proper is out of scope).
struct DomainMember {
    MachineId machine = 0;
    ident::Identity identity;
    dom::PrefixRange range;
    std::vector<std::pair<MachineId, ident::Identity>> replicas;
};

struct ChildDomainConfig {
    std::string domain_name;
    double priority_weight = 1.0;  // proportional to child domain node count
    std::vector<ident::Identity> accepted_identities;
    std::string minimum_method = "mock";
};

struct AttachedMachine {
    MachineId machine = 0;
    std::string name;  // last element of the HCALocation for persistence servers
    enum Kind { Client, PersistenceServer } kind = Client;
};

// Per Ch-style node configuration plus the static simulation wiring.
struct NodeConfig {
    dom::NodeId node_id = 0;
    ident::Identity node_identity;
    ident::PrincipalKeys node_keys;
    ident::Identity domain_identity;
    std::string domain_name;
    std::vector<std::string> accepted_methods{"mock"};
    std::vector<ParentContactConfig> parents;
    std::vector<ChildDomainConfig> accepted_children;
    bool multicast_optimization = false;  // parsed, ignored

    dom::PrefixRange assigned_range{0, UINT64_MAX};
    std::vector<std::string> location;               // domain names root..own
    std::vector<std::vector<std::string>> path_boundaries;  // per location entry
    std::vector<DomainMember> domain_members;        // own domain, for AccessPoints
    // static wiring: known peers in child domains (activated by Connect)
    std::map<MachineId, std::string> child_domain_of;  // child node machine -> domain name
    std::map<MachineId, ident::Identity> peer_identities;  // for signature checks
    std::vector<AttachedMachine> attached;
    bool standby = false;  // replica waits for ActivateReplica before joining
    NodeTuning tuning;
};

// Water-filling bandwidth allocation: budgets proportional to weights,
// unused budget redistributed to saturated links.
struct LinkDemand {
    double weight = 1.0;
    size_t demand = 0;
};
std::map<MachineId, size_t> allocate_bandwidth(size_t window_capacity,
                                               const std::map<MachineId, LinkDemand>& links);

class NodeMachine : public sim::Machine {
public:
    explicit NodeMachine(NodeConfig config);

    std::string kind() const override { return "node"; }
    void on_start(sim::Context& ctx) override;
    void on_frame(sim::Context& ctx, const sim::FrameEvent& ev) override;
    void on_timer(sim::Context& ctx, const sim::TimerEvent& ev) override;
    void on_crash() override;
    void on_restore(sim::Context& ctx) override;

    // introspection for tests and metrics
    const NodeConfig& config() const { return config_; }
    size_t stored_file_count() const;
    bool has_file(const proto::SocketKey& key) const;
    bool connected_to(MachineId peer) const { return connections_.count(peer) != 0; }
    bool shortcut_active_for(uint64_t socket_id) const;
    const std::map<MachineId, size_t>& last_budgets() const { return last_budgets_; }

private:
    struct Connection {
        enum Direction { Up, Down, Edge } direction = Edge;
        ident::Identity peer_identity;
        std::string child_domain;      // Down connections
        dom::PrefixRange range{0, 0};  // peer's covered range
        Bytes shared_key;              // empty until ConnectAck
        uint64_t counter_out = 0;
        std::optional<uint64_t> counter_in;
        SimTime last_heard = 0;
        SimTime keepalive_threshold = 0;  // jittered accepted silence
        bool established = false;
    };

    struct FileEntry {
        proto::SocketData data;
        std::set<uint64_t> prefixes;  // contact addresses stored at this node
        MachineId charged_child = 0;  // quota accounting
        SimTime stored_at = 0;
    };

    struct ContentState {
        uint64_t state = 0;  // highest contiguous state applied
        bool have_state = false;
        std::map<int64_t, Bytes> contents;
        proto::RangeSet complete;  // ranges where contents are authoritative at `state`
        std::map<uint64_t, std::vector<proto::ChangedElement>> history;  // state -> diff
        std::map<uint64_t, std::set<std::string>> commits;  // state -> storage server labels
        size_t bytes = 0;
        size_t hits = 0;
        SimTime last_used = 0;
    };

    struct Subscription {
        proto::SocketFileAddr addr;
        std::map<MachineId, proto::RangeSet> file_down;     // socket-file subscribers
        std::map<MachineId, proto::RangeSet> content_down;  // vector/sink stream subscribers
        proto::RangeSet file_up, content_up;                // what we asked upstream
        std::optional<MachineId> up_link;
        SimTime last_relay_reset = 0;
        size_t single_path_frames = 0;  // relay counter for shortcut detection
        std::optional<MachineId> relay_in, relay_out;
    };

    struct ShortcutState {
        enum Role { Source, Middle, Target } role = Source;
        enum Phase { Pending, Active, Terminating } phase = Pending;
        uint64_t request_id = 0;
        proto::SocketKey socket;
        ident::SingleIdentity socket_pub;
        uint64_t com_address = 0;
        MachineId target = 0;        // source role: direct peer
        MachineId replaced_link = 0;  // source role: bandwidth charge + revert
        MachineId source = 0;        // target/middle role
        Bytes shared_key;
        SimTime last_activity = 0;
    };

    struct PendingRequest {
        MachineId from = 0;
        SimTime at = 0;
    };

    // --- plumbing
    Connection* connection(MachineId peer);
    void send_frame(sim::Context& ctx, MachineId to, uint32_t type_id,
                    const wire::WireValue& payload, std::optional<uint64_t> prefix,
                    std::optional<uint64_t> socket_id, bool fresh_journey = false);
    std::optional<MachineId> up_link_for(uint64_t prefix) const;
    std::optional<MachineId> down_link_for_location(const std::vector<std::string>& location,
                                                    uint64_t prefix) const;
    std::optional<MachineId> edge_machine(const std::string& name) const;
    bool is_root() const { return config_.parents.empty(); }

    // --- join / failover
    void start_join(sim::Context& ctx);
    void join_parent(sim::Context& ctx, size_t parent_index);
    void handle_request_connection(sim::Context& ctx, MachineId from,
                                   const wire::WireValue& payload);
    void handle_connect(sim::Context& ctx, MachineId from, const wire::WireValue& payload);
    void handle_connect_ack(sim::Context& ctx, MachineId from, const wire::WireValue& payload);
    void keepalive_tick(sim::Context& ctx);
    void declare_peer_dead(sim::Context& ctx, MachineId peer);
    void try_failover(sim::Context& ctx, size_t parent_index);
    void migrate_tick(sim::Context& ctx);

    // --- socket files
    void handle_new_socket_file(sim::Context& ctx, MachineId from, const wire::WireValue& payload);
    void store_file(sim::Context& ctx, MachineId from, uint64_t prefix,
                    const proto::SocketData& data, const wire::WireValue& auth_payload);
    void evict_if_needed(sim::Context& ctx, MachineId charged_child);
    void delete_file(sim::Context& ctx, const proto::SocketKey& key, bool notify_pservers,
                     const char* note);
    void handle_file_update(sim::Context& ctx, MachineId from, const wire::WireValue& payload);
    void handle_check_socket_file(sim::Context& ctx, MachineId from, uint64_t counter,
                                  const wire::WireValue& payload);
    void handle_add_to_subscription(sim::Context& ctx, MachineId from,
                                    const wire::WireValue& payload);
    void serve_file_subscription(sim::Context& ctx, MachineId to,
                                 const proto::SocketFileAddr& addr,
                                 const proto::RangeSubscription& ranges);

    // --- content streaming
    void handle_change_subscription(sim::Context& ctx, MachineId from,
                                    const wire::WireValue& payload);
    void handle_update(sim::Context& ctx, MachineId from, const wire::WireValue& payload,
                       const Bytes& raw_frame);
    void handle_commit(sim::Context& ctx, MachineId from, const sim::FrameEvent& ev);
    void handle_snapshot(sim::Context& ctx, MachineId from, const wire::WireValue& payload);
    void handle_subscription_error(sim::Context& ctx, MachineId from,
                                   const wire::WireValue& payload);
    void serve_content_subscription(sim::Context& ctx, MachineId to,
                                    const proto::SocketFileAddr& addr,
                                    const proto::RangeSubscription& ranges);
    void apply_content_update(sim::Context& ctx, const proto::SocketKey& key, uint64_t new_state,
                              const std::vector<proto::ChangedElement>& changed);
    void invalidate_content(sim::Context& ctx, const proto::SocketKey& key);
    void prune_content_cache(sim::Context& ctx);

    // --- server requests and responses
    void forward_server_request(sim::Context& ctx, MachineId from, uint32_t type_id,
                                uint64_t request_id, const proto::SocketFileAddr& addr,
                                const wire::WireValue& payload);
    void forward_response(sim::Context& ctx, uint32_t type_id, uint64_t request_id,
                          const proto::SocketFileAddr& addr, const wire::WireValue& payload);
    void remember_pending(const proto::SocketKey& key, uint64_t request_id, MachineId from,
                          SimTime at);

    // --- shortcuts
    void maybe_initiate_shortcut(sim::Context& ctx, Subscription& sub);
    void handle_shortcut_frame(sim::Context& ctx, MachineId from, uint32_t type,
                               const wire::WireValue& payload);
    void terminate_shortcut(sim::Context& ctx, ShortcutState& sc, const char* reason);
    ShortcutState* shortcut_by_request(uint64_t request_id);
    ShortcutState* shortcut_for_socket(const proto::SocketKey& key,
                                       ShortcutState::Role role);

    // --- misc
    void handle_slowdown(sim::Context& ctx, MachineId from);
    void bandwidth_tick(sim::Context& ctx);
    void charge_bytes(MachineId link, size_t bytes);

    NodeConfig config_;
    std::map<MachineId, Connection> connections_;
    std::map<proto::SocketKey, FileEntry> files_;
    std::map<proto::SocketKey, ContentState> content_;
    std::map<proto::SocketKey, Subscription> subs_;
    std::vector<ShortcutState> shortcuts_;
    std::map<std::pair<proto::SocketKey, uint64_t>, PendingRequest> pending_;
    std::map<proto::SocketKey, std::deque<MachineId>> pending_message_acks_;
    std::map<proto::SocketKey, std::set<MachineId>> pending_snapshots_;
    std::map<MachineId, size_t> creations_in_window_;
    SimTime creation_window_start_ = 0;
    SimTime slowdown_until_ = 0;
    std::map<MachineId, size_t> bytes_in_window_;
    std::map<MachineId, size_t> last_budgets_;
    std::map<size_t, size_t> active_parent_choice_;  // parent index -> replica rank in use
    std::map<size_t, MachineId> standby_in_use_;     // parent index -> activated standby
    std::set<size_t> recovering_parents_;
    std::deque<proto::SocketKey> migrate_queue_;
    bool joined_ = false;
    bool active_ = true;  // standby replicas start passive
    uint64_t next_request_id_ = 1;
    uint64_t timer_seq_ = 0;
};

}  // namespace hca::node
