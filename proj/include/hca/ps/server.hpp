#pragma once

#include <deque>
#include <map>
#include <optional>
#include <set>

#include "hca/proto/socket_file.hpp"
#include "hca/sim/engine.hpp"

namespace hca::ps {

using sim::MachineId;
using sim::SimTime;

// Directed grant arcs from rights through roles and groups to principals,
// with the wire-visible LIST vector encoding.
struct AccessVector {
    enum Mode { GrantedAll, List, None } mode = List;
    std::vector<uint64_t> groups;            // socket ids of granted role/group sockets
    std::vector<ident::Identity> granted;    // kept sorted for faster lookup

    void grant(const ident::Identity& id);
    void deny(const ident::Identity& id);
    bool lists(const ident::Identity& id) const;
    // sparse-vector cells: 0 mode, 1 group count, 2..n+1 group refs, n+2.. identities
    std::vector<proto::ChangedElement> encode() const;
};

// Reachability: allowed iff every required right reaches the principal.
// `vectors` maps an access socket id to its vector; group cells point at
// further access sockets.
bool check_access(const std::map<uint64_t, AccessVector>& vectors,
                  const std::vector<uint64_t>& required_rights, const ident::Identity& principal);

struct LockState {
    std::optional<std::string> holder;  // client id text

    struct Waiter {
        std::string client_id;
        uint64_t request_id = 0;
        MachineId from = 0;
        SimTime deadline = 0;  // 0 = wait forever
    };
    std::deque<Waiter> queue;  // FIFO
};

// The lock transition shared by the server and the model checker.
enum class LockOp { Force, Try, Release };
bool lock_apply(std::optional<std::string>& holder, LockOp op, const std::string& client_id);

struct BufferedMessage {
    Bytes data;
    ident::SingleIdentity sender;
    proto::SocketRef fallback;
    bool has_fallback = false;
    SimTime stored_at = 0;
    SimTime deadline = 0;
    uint64_t id = 0;
    bool delivered = false;
};

struct StoredSocket {
    proto::SocketData record;
    uint64_t quota = 0;
    std::string name;
    uint64_t container_id = 0;  // 0 for root containers

    // SharedVector payload
    std::map<int64_t, Bytes> vector_contents;
    uint64_t vector_state = 0;
    std::map<uint64_t, std::vector<proto::ChangedElement>> history;

    // Container payload
    std::map<std::string, uint64_t> children;  // name -> socket id
    uint64_t resources_used = 0;
    uint64_t resources_available = 0;
    int64_t min_replicas_setting = -1;  // NOVALUE inherits from the parent
    int64_t max_replicas_setting = -1;

    // MessageSink / MessageBuffer payload
    bool is_receiving = false;
    int64_t max_message_length = -1;  // negative: no limit
    uint64_t buffer_socket = 0;       // sink's designated buffer
    std::deque<BufferedMessage> buffered;

    // Access sockets (role/group/right)
    AccessVector access;

    LockState lock;
    bool preliminary = false;  // two-phase creation, not yet durable
    SimTime preliminary_at = 0;
};

struct PersistenceConfig {
    std::string name;          // last element of this server's HCALocation
    MachineId leaf_node = 0;   // attachment point
    std::vector<std::string> location;  // domain path root..leaf (without name)
    ident::PrincipalKeys server_keys;
    ident::Identity server_identity;
    uint64_t capacity = 1 << 20;
    size_t contact_replicas = 1;     // random prefixes per published file
    SimTime poll_interval_ms = 2000;  // socket-file health polling; 0 disables
    SimTime reaper_timeout_ms = 60000;  // abandoned preliminary containers
    SimTime initial_publish_delay_ms = 50;  // let the overlay join first

    // sockets hosted here from the start, with pre-drawn contact prefixes
    std::vector<StoredSocket> initial_sockets;
    std::map<uint64_t, std::vector<uint64_t>> initial_prefixes;
};

// Persistence-server state machine: durable socket storage, socket-file
// publication, replication commits, locks, access rights, containers,
// message buffering.
class PersistenceServer : public sim::Machine {
public:
    explicit PersistenceServer(PersistenceConfig config);

    std::string kind() const override { return "pserver"; }
    bool durable() const override { return true; }
    void on_start(sim::Context& ctx) override;
    void on_frame(sim::Context& ctx, const sim::FrameEvent& ev) override;
    void on_timer(sim::Context& ctx, const sim::TimerEvent& ev) override;
    void on_crash() override;
    void on_restore(sim::Context& ctx) override;

    const PersistenceConfig& config() const { return config_; }
    const std::map<uint64_t, StoredSocket>& sockets() const { return sockets_; }
    StoredSocket* socket(uint64_t id);
    std::vector<std::string> my_location() const;

    // scenario-facing: create a socket hosted here and publish its file
    proto::SocketRef host_socket(sim::Context& ctx, StoredSocket socket,
                                 std::mt19937_64& prefix_rng);

private:
    void publish_socket_file(sim::Context& ctx, StoredSocket& socket,
                             const std::vector<uint64_t>& prefixes);
    void publish_file_update(sim::Context& ctx, StoredSocket& socket,
                             std::vector<proto::ChangedElement> changed);
    void send_up(sim::Context& ctx, uint32_t type_id, const wire::WireValue& payload,
                 std::optional<uint64_t> prefix, std::optional<uint64_t> socket_id,
                 bool fresh = true);
    void respond(sim::Context& ctx, uint32_t type_id, const wire::WireValue& payload,
                 const proto::SocketFileAddr& addr);

    void handle_server_request(sim::Context& ctx, uint32_t type, const sim::FrameEvent& ev,
                               const wire::WireValue& payload);
    void handle_update(sim::Context& ctx, const sim::FrameEvent& ev,
                       const wire::WireValue& payload);
    void handle_message(sim::Context& ctx, const sim::FrameEvent& ev,
                        const wire::WireValue& payload);
    void handle_new_root_container(sim::Context& ctx, const sim::FrameEvent& ev,
                                   const wire::WireValue& payload);
    void dispatch_buffered(sim::Context& ctx, StoredSocket& sink);
    void deliver_or_expire(sim::Context& ctx, uint64_t sink_id);

    bool client_allowed(const StoredSocket& socket, const std::vector<uint64_t>& rights,
                        const ident::SingleIdentity& client) const;
    uint64_t effective_min_replicas(const StoredSocket& socket) const;
    uint64_t effective_max_replicas(const StoredSocket& socket) const;

    PersistenceConfig config_;
    std::map<uint64_t, StoredSocket> sockets_;
    std::map<uint64_t, std::vector<uint64_t>> published_prefixes_;  // socket -> contacts
    uint64_t used_ = 0;
    uint64_t next_message_id_ = 1;
    uint64_t next_poll_request_ = 1;
    std::set<uint64_t> resyncing_;  // sockets pulling a full state after a gap
    uint64_t timer_seq_ = 0;
    std::mt19937_64 publish_rng_{0};  // seeded at start from engine rng
};

}  // namespace hca::ps
