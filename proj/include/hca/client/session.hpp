#pragma once

#include <deque>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>

#include "hca/proto/socket_file.hpp"
#include "hca/sim/engine.hpp"

namespace hca::client {

using sim::MachineId;
using sim::SimTime;

// Sparse vector with the client-interface edit semantics: adds shift later
// indices up, removes shift them down, adds past the end imply empties.
class SparseVector {
public:
    void add(int64_t index, Bytes data);
    void append(Bytes data);
    void remove(int64_t index);  // throws std::out_of_range past the end
    void remove_all();
    void set(int64_t index, Bytes data);
    void set_size(int64_t new_size);
    int64_t size() const { return size_; }
    const Bytes* get(int64_t index) const;  // null = empty element
    const std::map<int64_t, Bytes>& cells() const { return cells_; }

    // indices whose value differs from `base` (including emptied cells)
    std::vector<proto::ChangedElement> diff_from(const SparseVector& base) const;
    void apply(const std::vector<proto::ChangedElement>& changed);

private:
    std::map<int64_t, Bytes> cells_;
    int64_t size_ = 0;
};

// One scripted action; args are op-specific.
struct Command {
    SimTime at = 0;
    std::string op;
    std::string target;  // proxy alias
    nlohmann::json args;
};

struct SessionConfig {
    std::string name;
    MachineId leaf_node = 0;
    ident::Identity identity;
    ident::PrincipalKeys keys;
    size_t reader_queue_capacity = 16;
    bool auto_reconnect = false;
    bool auto_next_state = false;  // streaming readers consume as states land
    SimTime open_timeout_ms = 4000;
    SimTime reconnect_delay_ms = 200;
    std::vector<Command> script;
    std::map<std::string, proto::SocketRef> initial_refs;
};

// Client-session facade: command/event pairs against the simulated edge
// node; every callback lands in the trace as a note.
class ClientSession : public sim::Machine {
public:
    explicit ClientSession(SessionConfig config);

    std::string kind() const override { return "client"; }
    void on_start(sim::Context& ctx) override;
    void on_frame(sim::Context& ctx, const sim::FrameEvent& ev) override;
    void on_timer(sim::Context& ctx, const sim::TimerEvent& ev) override;
    void on_gift(sim::Context& ctx, const sim::GiftEvent& ev) override;
    void on_crash() override;

    const SessionConfig& config() const { return config_; }

    struct Proxy {
        proto::SocketRef ref;
        proto::SocketFileAddr addr;  // currently used contact
        size_t try_index = 0;
        bool open_pending = false;
        bool open_ok = false;
        bool dangling = false;
        proto::SocketData file;
        uint64_t file_version = 0;

        // vector view
        proto::RangeSet window;
        struct Loaded {
            uint64_t state = 0;
            std::vector<proto::ChangedElement> changed;
            bool full = false;
        };
        std::deque<Loaded> queue;
        SparseVector model;        // active state
        uint64_t active_state = 0;
        bool has_active = false;
        std::optional<uint64_t> last_enqueued;
        std::map<uint64_t, std::set<std::string>> commits;
        bool push_connected = false;
        int epoch = 0;

        // writer view
        SparseVector pending;  // edits staged on top of the active state
        bool lock_held = false;
        uint64_t next_commit_state = 1;

        // sink view
        std::deque<Bytes> receive_buffer;
        bool receiving = false;
    };

    const Proxy* proxy(const std::string& alias) const;

private:
    void run_command(sim::Context& ctx, const Command& cmd);
    void send_to_leaf(sim::Context& ctx, uint32_t type_id, const wire::WireValue& payload,
                      std::optional<uint64_t> prefix, std::optional<uint64_t> socket_id);
    void try_open(sim::Context& ctx, const std::string& alias);
    void subscribe(sim::Context& ctx, const std::string& alias, const proto::RangeSet& window,
                   uint64_t has_version);
    void enqueue_state(sim::Context& ctx, const std::string& alias, Proxy& p, uint64_t state,
                       std::vector<proto::ChangedElement> changed, bool full);
    void pop_state(sim::Context& ctx, const std::string& alias, Proxy& p, bool volatile_ok);
    void disconnect_push(sim::Context& ctx, const std::string& alias, Proxy& p,
                         const std::string& reason);
    std::string alias_for_socket(uint64_t socket_id) const;
    ident::PrincipalKeys socket_principal(const Proxy& p) const;

    SessionConfig config_;
    std::map<std::string, Proxy> proxies_;
    std::map<std::string, proto::SocketRef> refs_;
    uint64_t next_request_ = 1;
    uint64_t counter_ = 0;
    uint64_t timer_seq_ = 0;
    size_t next_command_ = 0;
    std::map<uint64_t, std::string> request_alias_;  // request id -> proxy alias
    std::map<uint64_t, std::string> request_op_;
};

}  // namespace hca::client
