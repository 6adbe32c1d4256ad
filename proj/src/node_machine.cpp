#include "hca/node/node.hpp"

#include <algorithm>
#include <cmath>

#include "hca/proto/socket_file.hpp"

namespace hca::node {

using proto::ChangedElement;
using proto::IndexRange;
using proto::RangeSet;
using proto::RangeSubscription;
using proto::SocketData;
using proto::SocketFileAddr;
using proto::SocketKey;
using sim::Context;
using wire::MessageRegistry;
using wire::WireValue;
namespace msg = wire::msg;
namespace fi = proto::file_index;

namespace {

const MessageRegistry& reg() { return MessageRegistry::instance(); }
const ident::ProviderRegistry& providers() { return ident::ProviderRegistry::default_instance(); }

uint64_t jitter(std::mt19937_64& rng, uint64_t base) {
    // uniform in [0.5, 1.5] x base
    return base / 2 + rng() % (base + 1);
}

WireValue addr_record(const SocketFileAddr& addr) { return addr.to_wire(); }

}  // namespace

std::map<MachineId, size_t> allocate_bandwidth(size_t window_capacity,
                                               const std::map<MachineId, LinkDemand>& links) {
    std::map<MachineId, size_t> budgets;
    if (links.empty()) return budgets;
    double total_weight = 0;
    for (const auto& [id, l] : links) total_weight += l.weight;
    if (total_weight <= 0) total_weight = 1;

    // start proportional to weights, then pour each link's unused share into
    // the still-hungry ones, repeating until stable
    std::map<MachineId, double> share;
    for (const auto& [id, l] : links)
        share[id] = window_capacity * l.weight / total_weight;
    for (int round = 0; round < 16; ++round) {
        double surplus = 0;
        double hungry_weight = 0;
        for (const auto& [id, l] : links) {
            if (share[id] > static_cast<double>(l.demand)) {
                surplus += share[id] - static_cast<double>(l.demand);
                share[id] = static_cast<double>(l.demand);
            } else {
                hungry_weight += l.weight;
            }
        }
        if (surplus < 1.0 || hungry_weight <= 0) break;
        for (const auto& [id, l] : links) {
            if (share[id] < static_cast<double>(l.demand))
                share[id] += surplus * l.weight / hungry_weight;
        }
    }
    for (const auto& [id, l] : links) {
        budgets[id] = static_cast<size_t>(share[id]);
    }
    return budgets;
}

NodeMachine::NodeMachine(NodeConfig config) : config_(std::move(config)) {
    active_ = !config_.standby;
}

size_t NodeMachine::stored_file_count() const { return files_.size(); }

bool NodeMachine::has_file(const SocketKey& key) const { return files_.count(key) != 0; }

bool NodeMachine::shortcut_active_for(uint64_t socket_id) const {
    for (const auto& sc : shortcuts_)
        if (sc.socket.socket_id == socket_id && sc.phase == ShortcutState::Active) return true;
    return false;
}

NodeMachine::Connection* NodeMachine::connection(MachineId peer) {
    auto it = connections_.find(peer);
    return it == connections_.end() ? nullptr : &it->second;
}

void NodeMachine::send_frame(Context& ctx, MachineId to, uint32_t type_id,
                             const WireValue& payload, std::optional<uint64_t> prefix,
                             std::optional<uint64_t> socket_id, bool fresh_journey) {
    Connection* conn = connection(to);
    wire::ChannelCipher cipher;
    const wire::ChannelCipher* cipher_ptr = nullptr;
    uint64_t counter = 0;
    if (conn) {
        counter = conn->counter_out++;
        if (!conn->shared_key.empty()) {
            cipher = ident::channel_cipher(providers(), "mock", conn->shared_key);
            cipher_ptr = &cipher;
        }
    }
    Bytes frame = wire::frame_message(reg().at(type_id), counter, payload, cipher_ptr);
    charge_bytes(to, frame.size());
    sim::FrameMeta meta;
    meta.type_id = type_id;
    meta.prefix = prefix;
    meta.socket_id = socket_id;
    if (fresh_journey) {
        meta.journey = ctx.fresh_journey();
        meta.hop = 1;
    }
    ctx.send(to, std::move(frame), std::move(meta));
}

std::optional<MachineId> NodeMachine::up_link_for(uint64_t prefix) const {
    for (const auto& [peer, conn] : connections_) {
        if (conn.direction == Connection::Up && conn.established &&
            conn.range.contains(prefix))
            return peer;
    }
    return std::nullopt;
}

std::optional<MachineId> NodeMachine::down_link_for_location(
    const std::vector<std::string>& location, uint64_t prefix) const {
    size_t depth = config_.location.size();
    // location must extend our own path
    if (location.size() <= depth) return std::nullopt;
    for (size_t i = 0; i < depth; ++i)
        if (location[i] != config_.location[i]) return std::nullopt;
    const std::string& next = location[depth];
    // child domain hop responsible for the prefix, if the name matches one
    for (const auto& [peer, conn] : connections_) {
        if (conn.direction == Connection::Down && conn.established &&
            conn.child_domain == next && conn.range.contains(prefix))
            return peer;
    }
    // otherwise an attached machine at this leaf
    return edge_machine(next);
}

std::optional<MachineId> NodeMachine::edge_machine(const std::string& name) const {
    for (const auto& a : config_.attached)
        if (a.name == name) return a.machine;
    return std::nullopt;
}

// ---------------------------------------------------------------- lifecycle

void NodeMachine::on_start(Context& ctx) {
    for (const auto& a : config_.attached) {
        Connection conn;
        conn.direction = Connection::Edge;
        conn.last_heard = ctx.now();
        connections_.emplace(a.machine, std::move(conn));
    }
    if (active_) start_join(ctx);
    if (config_.tuning.keepalive_period_ms > 0)
        ctx.set_timer(config_.tuning.keepalive_period_ms, ++timer_seq_, "keepalive");
    ctx.set_timer(config_.tuning.bandwidth_window_ms, ++timer_seq_, "bandwidth");
}

void NodeMachine::on_crash() {
    // communication nodes hold no durable state
    connections_.clear();
    files_.clear();
    content_.clear();
    subs_.clear();
    shortcuts_.clear();
    pending_.clear();
    pending_message_acks_.clear();
    pending_snapshots_.clear();
    creations_in_window_.clear();
    bytes_in_window_.clear();
    active_parent_choice_.clear();
    recovering_parents_.clear();
    migrate_queue_.clear();
    joined_ = false;
}

void NodeMachine::on_restore(Context& ctx) {
    active_ = !config_.standby;
    on_start(ctx);
}

void NodeMachine::start_join(Context& ctx) {
    if (is_root()) {
        joined_ = true;
        return;
    }
    join_parent(ctx, 0);
}

void NodeMachine::join_parent(Context& ctx, size_t parent_index) {
    if (parent_index >= config_.parents.size()) return;
    const auto& bootstrap = config_.parents[parent_index];
    WireValue range_record = WireValue::record({
        WireValue::integer(config_.assigned_range.start),
        WireValue::integer(config_.assigned_range.end),
    });
    WireValue payload = ident::seal_signed(providers(),
                                           reg().at(msg::RequestConnection).payload_schema->inner,
                                           range_record, config_.node_keys, "mock");
    send_frame(ctx, bootstrap.machine, msg::RequestConnection, payload, std::nullopt,
               std::nullopt, true);
}

void NodeMachine::handle_request_connection(Context& ctx, MachineId from,
                                            const WireValue& payload) {
    // signature must verify under the configured identity of that peer
    const auto& inner_schema = reg().at(msg::RequestConnection).payload_schema->inner;
    auto idit = config_.peer_identities.find(from);
    bool verified = false;
    if (idit != config_.peer_identities.end()) {
        if (const auto* key = providers().preferred(idit->second))
            verified = ident::verify_signed(providers(), inner_schema, payload, *key);
    }
    if (!verified) {
        ctx.note("auth_failure", {{"from", from}});
        return;
    }
    uint64_t start = payload.as_signed().inner->field(0).as_integer();
    uint64_t end = payload.as_signed().inner->field(1).as_integer();
    dom::PrefixRange asked{start, end};
    if (!asked.overlaps(config_.assigned_range)) {
        ctx.note("range_mismatch", {{"from", from}});
        return;
    }

    // answer with every member of our domain overlapping the child's range
    wire::ValueList entries;
    for (const auto& member : config_.domain_members) {
        if (!member.range.overlaps(asked)) continue;
        WireValue node_ad = WireValue::record({
            ident::identity_to_wire(member.identity),
            proto::NetAddress{"sim", member.machine}.to_wire(),
            WireValue::integer(member.range.start),
            WireValue::integer(member.range.end),
        });
        wire::ValueList replicas;
        for (const auto& [rm, rid] : member.replicas)
            replicas.push_back(WireValue::record({
                ident::identity_to_wire(rid),
                proto::NetAddress{"sim", rm}.to_wire(),
            }));
        entries.push_back(WireValue::record({node_ad, WireValue::list(std::move(replicas))}));
    }
    WireValue body = WireValue::list(std::move(entries));
    WireValue sealed = ident::seal_signed(providers(),
                                          reg().at(msg::AccessPoints).payload_schema->inner,
                                          body, config_.node_keys, "mock");
    send_frame(ctx, from, msg::AccessPoints, sealed, std::nullopt, std::nullopt);
}

void NodeMachine::handle_connect(Context& ctx, MachineId from, const WireValue& payload) {
    auto it = config_.child_domain_of.find(from);
    if (it == config_.child_domain_of.end()) {
        ctx.note("auth_failure", {{"from", from}});
        return;
    }
    uint64_t start = payload.as_signed().inner->field(0).as_integer();
    uint64_t end = payload.as_signed().inner->field(1).as_integer();

    Connection conn;
    conn.direction = Connection::Down;
    conn.child_domain = it->second;
    if (auto idit = config_.peer_identities.find(from); idit != config_.peer_identities.end())
        conn.peer_identity = idit->second;
    conn.range = {std::max(start, config_.assigned_range.start),
                  std::min(end, config_.assigned_range.end)};
    conn.shared_key = providers().at("mock").generate_shared_key(ctx.rng());
    conn.last_heard = ctx.now();
    conn.keepalive_threshold =
        static_cast<SimTime>(jitter(ctx.rng(), config_.tuning.keepalive_threshold_ms));

    // ConnectAck carries the shared key and the domain structure above us
    wire::ValueList domain_list;
    for (size_t i = 0; i < config_.location.size(); ++i) {
        WireValue dd_body = WireValue::record({
            WireValue::text(config_.location[i]),
            [&] {
                wire::ValueList bs;
                if (i < config_.path_boundaries.size())
                    for (const auto& b : config_.path_boundaries[i])
                        bs.push_back(WireValue::text(b));
                return WireValue::list(std::move(bs));
            }(),
        });
        const auto& dd_schema = reg().common().domain_description;
        WireValue sealed_body = ident::seal_signed(providers(), dd_schema->fields[1].schema->inner,
                                                   dd_body, config_.node_keys, "mock");
        domain_list.push_back(WireValue::record({
            ident::identity_to_wire(config_.domain_identity),
            sealed_body,
        }));
    }
    WireValue ack_record = WireValue::record({
        WireValue::raw(conn.shared_key),
        WireValue::integer(conn.range.start),
        WireValue::integer(conn.range.end),
        WireValue::list(std::move(domain_list)),
    });
    const auto& ack_schema = reg().at(msg::ConnectAck).payload_schema;  // signed<encrypted<..>>
    WireValue encrypted = ident::seal_encrypted(providers(), ack_schema->inner->inner, ack_record,
                                                "mock", Bytes{});  // keyed to the child; mock
    WireValue sealed = ident::seal_signed(providers(), ack_schema->inner, encrypted,
                                          config_.node_keys, "mock");
    // register the connection before sending so the ack is the last clear frame
    Connection& stored = connections_[from] = std::move(conn);
    Bytes key_copy = stored.shared_key;
    stored.shared_key.clear();  // ack itself goes unencrypted
    send_frame(ctx, from, msg::ConnectAck, sealed, std::nullopt, std::nullopt);
    stored.shared_key = std::move(key_copy);
    stored.established = true;
    ctx.note("child_connected", {{"child", from}, {"domain", stored.child_domain}});
}

void NodeMachine::handle_connect_ack(Context& ctx, MachineId from, const WireValue& payload) {
    const auto& ack_schema = reg().at(msg::ConnectAck).payload_schema;
    WireValue record = ident::open_encrypted(providers(), ack_schema->inner->inner,
                                             *payload.as_signed().inner, "mock", Bytes{});
    Connection& conn = connections_[from];
    conn.direction = Connection::Up;
    conn.shared_key = record.field(0).as_raw();
    conn.range = {record.field(1).as_integer(), record.field(2).as_integer()};
    conn.established = true;
    conn.last_heard = ctx.now();
    conn.counter_out = 0;
    conn.counter_in.reset();
    conn.keepalive_threshold =
        static_cast<SimTime>(jitter(ctx.rng(), config_.tuning.keepalive_threshold_ms));
    if (auto idit = config_.peer_identities.find(from); idit != config_.peer_identities.end())
        conn.peer_identity = idit->second;
    joined_ = true;
    ctx.note("joined_parent", {{"parent", from}});

    // recovered primary: move subscriptions back gradually, one per tick
    for (size_t i = 0; i < config_.parents.size(); ++i) {
        if (config_.parents[i].machine != from || !recovering_parents_.count(i)) continue;
        active_parent_choice_[i] = 0;  // route new traffic via the primary again
        for (auto& [key, sub] : subs_) {
            if (conn.range.contains(sub.addr.com_address)) migrate_queue_.push_back(key);
        }
        ctx.set_timer(config_.tuning.migrate_step_ms, ++timer_seq_, "migrate");
        return;
    }

    // re-subscribe everything that used to flow through this range
    for (auto& [key, sub] : subs_) {
        uint64_t prefix = sub.addr.com_address;
        if (!conn.range.contains(prefix)) continue;
        sub.up_link = from;
        if (!sub.file_up.empty()) {
            RangeSubscription rs;
            for (const auto& r : sub.file_up.ranges()) rs.entries.push_back({r, 0});
            if (sub.file_up.covers_all()) rs.entries.push_back({{0, int64_t{1} << 40}, 0});
            WireValue body = WireValue::record({addr_record(sub.addr), rs.to_wire()});
            send_frame(ctx, from, msg::AddtoSubscription, body, prefix, sub.addr.socket_id, true);
        }
        if (!sub.content_up.empty()) {
            auto* cs = content_.count(key) ? &content_[key] : nullptr;
            uint64_t has = cs && cs->have_state ? cs->state : 0;
            WireValue body = WireValue::record({
                addr_record(sub.addr),
                WireValue::variant(1, [&] {
                    RangeSubscription rs;
                    if (sub.content_up.covers_all())
                        rs.entries.push_back({{0, int64_t{1} << 40}, has});
                    else
                        for (const auto& r : sub.content_up.ranges())
                            rs.entries.push_back({r, has});
                    return rs.to_wire();
                }()),
                WireValue::variant(0),
            });
            send_frame(ctx, from, msg::ChangeSubscription, body, prefix, sub.addr.socket_id,
                       true);
        }
    }
}

// ------------------------------------------------------------ keepalive

void NodeMachine::keepalive_tick(Context& ctx) {
    for (auto& [peer, conn] : connections_) {
        if (conn.direction == Connection::Edge || !conn.established) continue;
        send_frame(ctx, peer, msg::KeepAlive, WireValue::record({}), std::nullopt, std::nullopt,
                   true);
    }
    // detect silent peers
    std::vector<MachineId> dead;
    for (auto& [peer, conn] : connections_) {
        if (conn.direction == Connection::Edge || !conn.established) continue;
        if (ctx.now() - conn.last_heard > conn.keepalive_threshold) dead.push_back(peer);
    }
    for (MachineId peer : dead) declare_peer_dead(ctx, peer);
    ctx.set_timer(config_.tuning.keepalive_period_ms, ++timer_seq_, "keepalive");
}

void NodeMachine::declare_peer_dead(Context& ctx, MachineId peer) {
    auto it = connections_.find(peer);
    if (it == connections_.end()) return;
    Connection conn = it->second;
    connections_.erase(it);
    ctx.note("peer_dead", {{"peer", peer}});

    if (conn.direction == Connection::Up) {
        // explicit disconnects for everything subscribed through that link
        for (auto& [key, sub] : subs_) {
            if (sub.up_link != peer) continue;
            sub.up_link.reset();
            WireValue err = WireValue::record({
                WireValue::integer(key.socket_id),
                WireValue::raw(sub.addr.pub_key.key),
            });
            for (const auto& [link, ranges] : sub.content_down)
                send_frame(ctx, link, msg::SubscriptionError, err, sub.addr.com_address,
                           key.socket_id, true);
            if (content_.count(key)) content_[key].complete.clear();
        }
        // failover to the replica with highest priority
        for (size_t i = 0; i < config_.parents.size(); ++i) {
            bool mine = config_.parents[i].machine == peer;
            for (const auto& [rm, rid] : config_.parents[i].replicas) mine |= rm == peer;
            if (!mine) continue;
            size_t current = active_parent_choice_.count(i) ? active_parent_choice_[i] : 0;
            active_parent_choice_[i] = current + 1;
            try_failover(ctx, i);
            if (current + 1 > 0) recovering_parents_.insert(i);
            ctx.set_timer(static_cast<SimTime>(jitter(ctx.rng(),
                                                      config_.tuning.reconnect_retry_ms)),
                          ++timer_seq_, "retry:" + std::to_string(i));
        }
    }
    if (conn.direction == Connection::Down) {
        for (auto& [key, sub] : subs_) {
            sub.content_down.erase(peer);
            sub.file_down.erase(peer);
        }
    }
    // shortcuts through the dead peer revert to the normal path
    for (auto& sc : shortcuts_) {
        if (sc.phase == ShortcutState::Active &&
            (sc.target == peer || sc.source == peer || sc.replaced_link == peer))
            terminate_shortcut(ctx, sc, "peer_dead");
    }
}

void NodeMachine::try_failover(Context& ctx, size_t parent_index) {
    const auto& bootstrap = config_.parents[parent_index];
    size_t rank = active_parent_choice_[parent_index];
    // rank 0 is the primary; ranks beyond it walk the replica list
    if (rank == 0) {
        join_parent(ctx, parent_index);
        return;
    }
    if (rank - 1 >= bootstrap.replicas.size()) return;  // all replicas down
    MachineId replica = bootstrap.replicas[rank - 1].first;
    standby_in_use_[parent_index] = replica;
    // tell the replica to take over, then connect to it
    send_frame(ctx, replica, msg::ActivateReplica, WireValue::variant(0), std::nullopt,
               std::nullopt, true);
    WireValue range_record = WireValue::record({
        WireValue::integer(config_.assigned_range.start),
        WireValue::integer(config_.assigned_range.end),
    });
    WireValue payload = ident::seal_signed(providers(),
                                           reg().at(msg::Connect).payload_schema->inner,
                                           range_record, config_.node_keys, "mock");
    send_frame(ctx, replica, msg::Connect, payload, std::nullopt, std::nullopt, true);
    ctx.note("failover_attempt", {{"parent_index", parent_index}, {"replica", replica}});
}

void NodeMachine::migrate_tick(Context& ctx) {
    // move one subscription back per tick toward the recovered parent
    if (migrate_queue_.empty()) {
        for (size_t idx : recovering_parents_) {
            auto sit = standby_in_use_.find(idx);
            if (sit != standby_in_use_.end()) {
                send_frame(ctx, sit->second, msg::ActivateReplica, WireValue::variant(1),
                           std::nullopt, std::nullopt, true);
                connections_.erase(sit->second);
                standby_in_use_.erase(sit);
            }
        }
        recovering_parents_.clear();
        return;
    }
    SocketKey key = migrate_queue_.front();
    migrate_queue_.pop_front();
    auto it = subs_.find(key);
    if (it != subs_.end()) {
        Subscription& sub = it->second;
        auto up = up_link_for(sub.addr.com_address);
        if (up && sub.up_link != *up) {
            sub.up_link = *up;
            auto* cs = content_.count(key) ? &content_[key] : nullptr;
            uint64_t has = cs && cs->have_state ? cs->state : 0;
            if (!sub.file_up.empty()) {
                RangeSubscription rs;
                if (sub.file_up.covers_all()) rs.entries.push_back({{0, int64_t{1} << 40}, has});
                else
                    for (const auto& r : sub.file_up.ranges()) rs.entries.push_back({r, has});
                WireValue body = WireValue::record({addr_record(sub.addr), rs.to_wire()});
                send_frame(ctx, *up, msg::AddtoSubscription, body, sub.addr.com_address,
                           key.socket_id, true);
            }
            if (!sub.content_up.empty()) {
                RangeSubscription rs;
                if (sub.content_up.covers_all())
                    rs.entries.push_back({{0, int64_t{1} << 40}, has});
                else
                    for (const auto& r : sub.content_up.ranges()) rs.entries.push_back({r, has});
                WireValue body = WireValue::record({addr_record(sub.addr),
                                                    WireValue::variant(1, rs.to_wire()),
                                                    WireValue::variant(0)});
                send_frame(ctx, *up, msg::ChangeSubscription, body, sub.addr.com_address,
                           key.socket_id, true);
            }
        }
    }
    ctx.set_timer(config_.tuning.migrate_step_ms, ++timer_seq_, "migrate");
}

// ------------------------------------------------------------ socket files

void NodeMachine::handle_new_socket_file(Context& ctx, MachineId from,
                                         const WireValue& payload) {
    uint64_t prefix = payload.field(0).as_integer();
    const WireValue& auth = payload.field(1);
    SocketData data = SocketData::from_wire(*auth.as_auth().inner);

    // congestion control on file-creation floods
    if (ctx.now() - creation_window_start_ >= config_.tuning.creation_window_ms) {
        creation_window_start_ = ctx.now();
        creations_in_window_.clear();
    }
    size_t count = ++creations_in_window_[from];
    if (count > config_.tuning.creation_rate_per_window) {
        send_frame(ctx, from, msg::SlowdownSocketFileCreation, WireValue::record({}), prefix,
                   data.socket_id, true);
        if (count == config_.tuning.creation_rate_per_window + 1)
            ctx.note("creation_flood", {{"from", from}});
    }

    // first responsible node, walking up, whose domain carries one of the
    // socket's boundaries; unscoped files live in the root domain
    bool match_here = false;
    if (!config_.path_boundaries.empty()) {
        const auto& own = config_.path_boundaries.back();
        for (const auto& b : data.boundaries)
            match_here |= std::find(own.begin(), own.end(), b) != own.end();
    }
    bool store_here = data.boundaries.empty() ? is_root() : match_here;
    if (!store_here) {
        auto up = up_link_for(prefix);
        if (!up) {
            if (!is_root()) {
                ctx.note("no_route", {{"socket", data.socket_id}});
                return;
            }
            // scoped socket whose boundary never matched: not visible at all
            ctx.note("socket_file_unplaceable", {{"socket", data.socket_id}});
            return;
        }
        send_frame(ctx, *up, msg::NewSocketFile, payload, prefix, data.socket_id);
        return;
    }
    store_file(ctx, from, prefix, data, payload);
}

void NodeMachine::store_file(Context& ctx, MachineId from, uint64_t prefix,
                             const SocketData& data, const WireValue&) {
    Connection* conn = connection(from);
    MachineId charged = conn && conn->direction != Connection::Up ? from : 0;

    SocketKey key{data.socket_id};
    ident::SingleIdentity file_pub;
    if (const auto* preferred = providers().preferred(data.pub_key)) file_pub = *preferred;

    if (!files_.count(key)) {
        // per-child quota: reject and throttle the offender
        size_t charged_count = 0;
        for (const auto& [k, f] : files_)
            if (f.charged_child == charged) ++charged_count;
        if (charged_count >= config_.tuning.socket_files_per_child) {
            send_frame(ctx, from, msg::SlowdownSocketFileCreation, WireValue::record({}),
                       prefix, data.socket_id, true);
            ctx.note("socket_file_rejected", {{"socket", data.socket_id}, {"from", from}});
            return;
        }
        // global pressure: make room, prioritized by usage and age
        if (files_.size() >= config_.tuning.max_total_files) evict_if_needed(ctx, charged);
    }

    FileEntry& entry = files_[key];
    bool fresh = entry.prefixes.empty();
    entry.data = data;
    entry.prefixes.insert(prefix);
    entry.charged_child = charged;
    entry.stored_at = ctx.now();

    ContentState& cs = content_[key];
    if (fresh && !cs.have_state) {
        // shared vectors start empty at state 0; the holder is authoritative
        cs.have_state = true;
        cs.state = 0;
        cs.complete = RangeSet::all();
    }
    cs.last_used = ctx.now();

    Subscription& sub = subs_[key];
    sub.addr = SocketFileAddr{prefix, data.socket_id, file_pub};
    if (fresh) ctx.note("socket_file_stored", {{"socket", data.socket_id},
                                               {"prefix", std::to_string(prefix)}});

    // serve subscriptions that arrived before the file
    for (const auto& [link, ranges] : sub.file_down) {
        RangeSubscription rs;
        for (const auto& r : ranges.ranges()) rs.entries.push_back({r, 0});
        serve_file_subscription(ctx, link, sub.addr, rs);
    }
}

void NodeMachine::evict_if_needed(Context& ctx, MachineId) {
    // lowest utility first: hits decayed by age
    const SocketKey* victim = nullptr;
    double worst = 0;
    for (const auto& [key, entry] : files_) {
        const ContentState* cs = content_.count(key) ? &content_.at(key) : nullptr;
        double age = static_cast<double>(ctx.now() - entry.stored_at);
        double hits = cs ? static_cast<double>(cs->hits) : 0;
        double utility = (hits + 1.0) *
                         std::pow(0.5, age / static_cast<double>(config_.tuning.cache_half_life_ms));
        if (!victim || utility < worst) {
            victim = &key;
            worst = utility;
        }
    }
    if (victim) delete_file(ctx, *victim, true, "socket_file_evicted");
}

void NodeMachine::delete_file(Context& ctx, const SocketKey& key, bool notify_pservers,
                              const char* note) {
    auto it = files_.find(key);
    if (it == files_.end()) return;
    FileEntry entry = std::move(it->second);
    files_.erase(it);
    ctx.note(note, {{"socket", key.socket_id}});

    ident::SingleIdentity file_pub;
    if (const auto* preferred = providers().preferred(entry.data.pub_key)) file_pub = *preferred;
    if (notify_pservers) {
        WireValue deleted = WireValue::record({
            WireValue::integer(key.socket_id),
            WireValue::raw(file_pub.key),
        });
        for (const auto& loc : entry.data.persistence_servers) {
            auto down = down_link_for_location(loc, entry.prefixes.empty()
                                                        ? 0
                                                        : *entry.prefixes.begin());
            if (down)
                send_frame(ctx, *down, msg::SocketFileDeleted, deleted,
                           entry.prefixes.empty() ? std::nullopt
                                                  : std::make_optional(*entry.prefixes.begin()),
                           key.socket_id, true);
        }
    }
    // anyone subscribed learns the socket is gone
    auto sit = subs_.find(key);
    if (sit != subs_.end()) {
        WireValue err = WireValue::record({
            WireValue::integer(key.socket_id),
            WireValue::raw(file_pub.key),
        });
        for (const auto& [link, ranges] : sit->second.file_down)
            send_frame(ctx, link, msg::SubscriptionError, err, sit->second.addr.com_address,
                       key.socket_id, true);
        for (const auto& [link, ranges] : sit->second.content_down)
            send_frame(ctx, link, msg::SubscriptionError, err, sit->second.addr.com_address,
                       key.socket_id, true);
        subs_.erase(sit);
    }
    content_.erase(key);
}

void NodeMachine::handle_file_update(Context& ctx, MachineId from, const WireValue& payload) {
    const WireValue& body = *payload.as_signed().inner;
    SocketFileAddr addr = SocketFileAddr::from_wire(body.field(0));
    uint64_t to_version = body.field(2).as_integer();
    auto changed = proto::changed_from_wire(body.field(3));
    SocketKey key = key_of(addr);

    auto fit = files_.find(key);
    if (fit != files_.end()) {
        FileEntry& entry = fit->second;
        if (to_version <= entry.data.version) return;  // duplicate or stale
        for (const auto& el : changed) {
            if (el.index <= fi::LockState) proto::apply_file_element(entry.data, el.index, el.data);
        }
        entry.data.version = to_version;
    } else if (!subs_.count(key)) {
        // not ours and nobody asked; route upward toward the holder
        auto up = up_link_for(addr.com_address);
        if (up) send_frame(ctx, *up, msg::SocketFileUpdate, payload, addr.com_address,
                           addr.socket_id);
        return;
    }

    Subscription& sub = subs_[key];
    if (sub.addr.socket_id == 0) sub.addr = addr;
    for (const auto& [link, ranges] : sub.file_down) {
        if (link == from) continue;
        bool relevant = false;
        for (const auto& el : changed) relevant |= ranges.contains(el.index);
        if (relevant)
            send_frame(ctx, link, msg::SocketFileUpdate, payload, addr.com_address,
                       addr.socket_id);
    }
    // not yet at the holder: keep moving up
    if (fit == files_.end()) {
        auto up = up_link_for(addr.com_address);
        if (up && (!sub.up_link || *sub.up_link != from))
            send_frame(ctx, *up, msg::SocketFileUpdate, payload, addr.com_address,
                       addr.socket_id);
    }
}

void NodeMachine::handle_check_socket_file(Context& ctx, MachineId from, uint64_t,
                                           const WireValue& payload) {
    uint64_t request_id = payload.field(0).as_integer();
    SocketFileAddr addr = SocketFileAddr::from_wire(payload.field(2));
    SocketKey key = key_of(addr);

    auto it = files_.find(key);
    bool here = it != files_.end() && it->second.prefixes.count(addr.com_address) != 0;
    if (here || is_root()) {
        WireValue ack = WireValue::record({
            WireValue::integer(request_id),
            WireValue::boolean(here),
        });
        send_frame(ctx, from, msg::CheckSocketFileAck, ack, addr.com_address, addr.socket_id);
        if (here) {
            content_[key].hits++;
            content_[key].last_used = ctx.now();
        }
        return;
    }
    auto up = up_link_for(addr.com_address);
    if (!up) {
        WireValue ack = WireValue::record({WireValue::integer(request_id),
                                           WireValue::boolean(false)});
        send_frame(ctx, from, msg::CheckSocketFileAck, ack, addr.com_address, addr.socket_id);
        return;
    }
    remember_pending(key, request_id, from, ctx.now());
    send_frame(ctx, *up, msg::CheckSocketFile, payload, addr.com_address, addr.socket_id);
}

void NodeMachine::handle_add_to_subscription(Context& ctx, MachineId from,
                                             const WireValue& payload) {
    SocketFileAddr addr = SocketFileAddr::from_wire(payload.field(0));
    RangeSubscription ranges = RangeSubscription::from_wire(payload.field(1));
    SocketKey key = key_of(addr);

    Subscription& sub = subs_[key];
    sub.addr = addr;
    RangeSet& down = sub.file_down[from];
    down.merge(ranges.to_set());

    if (files_.count(key)) {
        content_[key].hits++;
        content_[key].last_used = ctx.now();
        serve_file_subscription(ctx, from, addr, ranges);
        return;
    }
    if (is_root()) {
        // nothing published under this prefix anywhere on the path
        WireValue err = WireValue::record({WireValue::integer(addr.socket_id),
                                           WireValue::raw(addr.pub_key.key)});
        send_frame(ctx, from, msg::SubscriptionError, err, addr.com_address, addr.socket_id);
        sub.file_down.erase(from);
        return;
    }
    // widen our own upstream subscription minimally
    if (!sub.file_up.covers(ranges.to_set())) {
        sub.file_up.merge(ranges.to_set());
        auto up = up_link_for(addr.com_address);
        if (up) {
            sub.up_link = up;
            send_frame(ctx, *up, msg::AddtoSubscription, payload, addr.com_address,
                       addr.socket_id);
        }
    } else {
        //我们 already have the data flowing; serve from cache when it lands
    }
}

void NodeMachine::serve_file_subscription(Context& ctx, MachineId to,
                                          const SocketFileAddr& addr,
                                          const RangeSubscription& ranges) {
    auto it = files_.find(key_of(addr));
    if (it == files_.end()) return;
    const FileEntry& entry = it->second;

    uint64_t has = UINT64_MAX;
    for (const auto& e : ranges.entries) has = std::min(has, e.has_version);
    if (has != UINT64_MAX && has >= entry.data.version) return;  // registration only

    auto elements = proto::general_block_elements(entry.data, ranges.to_set());
    // type-specific tail mirrors live content state
    const ContentState* cs = content_.count(key_of(addr)) ? &content_.at(key_of(addr)) : nullptr;
    if (cs && cs->have_state) {
        RangeSet set = ranges.to_set();
        if (entry.data.socket_type == wire::socket_type::SharedVector) {
            int64_t size = cs->contents.empty() ? 0 : cs->contents.rbegin()->first + 1;
            if (set.contains(fi::TailBase))
                elements.push_back({fi::TailBase, proto::tail_integer(static_cast<uint64_t>(size))});
            if (set.contains(fi::TailBase + 1))
                elements.push_back({fi::TailBase + 1, proto::tail_integer(cs->state)});
        }
    }
    WireValue body = WireValue::record({
        addr_record(addr),
        WireValue::integer(0),
        WireValue::integer(entry.data.version),
        proto::changed_to_wire(elements),
    });
    // the holder signs file updates it serves from its own store
    WireValue sealed = ident::seal_signed(providers(),
                                          reg().at(msg::SocketFileUpdate).payload_schema->inner,
                                          body, config_.node_keys, "mock");
    send_frame(ctx, to, msg::SocketFileUpdate, sealed, addr.com_address, addr.socket_id);
}

// ------------------------------------------------------------ content

void NodeMachine::handle_change_subscription(Context& ctx, MachineId from,
                                             const WireValue& payload) {
    SocketFileAddr addr = SocketFileAddr::from_wire(payload.field(0));
    SocketKey key = key_of(addr);
    Subscription& sub = subs_[key];
    sub.addr = addr;

    const auto& add = payload.field(1).as_union();
    const auto& remove = payload.field(2).as_union();

    if (remove.index == 0) {
        sub.content_down.erase(from);
    } else if (remove.payload) {
        auto it = sub.content_down.find(from);
        if (it != sub.content_down.end())
            for (const auto& r : remove.payload->items())
                it->second.remove(proto::range_from_wire(r));
    }

    RangeSubscription requested;
    if (add.index == 0) {
        requested.entries.push_back({{0, int64_t{1} << 40}, 0});
    } else if (add.payload) {
        requested = RangeSubscription::from_wire(*add.payload);
    }
    if (!requested.entries.empty()) {
        sub.content_down[from].merge(requested.to_set());
        serve_content_subscription(ctx, from, addr, requested);
    }
    if (sub.content_down.empty() && sub.file_down.empty()) {
        // subscriptions stay alive for the cache until pressure; nothing to do
    }
    maybe_initiate_shortcut(ctx, sub);
}

void NodeMachine::serve_content_subscription(Context& ctx, MachineId to,
                                             const SocketFileAddr& addr,
                                             const RangeSubscription& ranges) {
    SocketKey key = key_of(addr);
    ContentState& cs = content_[key];
    Subscription& sub = subs_[key];
    RangeSet requested = ranges.to_set();
    uint64_t has = UINT64_MAX;
    for (const auto& e : ranges.entries) has = std::min(has, e.has_version);
    if (has == UINT64_MAX) has = 0;

    bool authoritative = cs.have_state && cs.complete.covers(requested);
    if (authoritative && has >= cs.state) return;  // registration only

    if (cs.have_state && has < cs.state) {
        // diffs if the cached history covers the gap
        bool history_covers = true;
        for (uint64_t v = has + 1; v <= cs.state; ++v) history_covers &= cs.history.count(v) != 0;
        if (history_covers) {
            for (uint64_t v = has + 1; v <= cs.state; ++v) {
                WireValue body = WireValue::record({
                    addr_record(addr),
                    WireValue::integer(addr.com_address),
                    WireValue::integer(v),
                    proto::changed_to_wire(cs.history[v]),
                });
                WireValue sealed = ident::seal_signed(
                    providers(), reg().at(msg::Update).payload_schema->inner, body,
                    config_.node_keys, "mock");
                send_frame(ctx, to, msg::Update, sealed, addr.com_address, addr.socket_id);
            }
            cs.hits++;
            cs.last_used = ctx.now();
            return;
        }
        if (authoritative) {
            // full state of the requested ranges in one update
            std::vector<ChangedElement> full;
            for (const auto& [index, bytes] : cs.contents)
                if (requested.contains(index)) full.push_back({index, bytes});
            WireValue body = WireValue::record({
                addr_record(addr),
                WireValue::integer(addr.com_address),
                WireValue::integer(cs.state),
                proto::changed_to_wire(full),
            });
            WireValue sealed = ident::seal_signed(
                providers(), reg().at(msg::Update).payload_schema->inner, body,
                config_.node_keys, "mock");
            send_frame(ctx, to, msg::Update, sealed, addr.com_address, addr.socket_id);
            cs.hits++;
            cs.last_used = ctx.now();
            return;
        }
    }
    // we cannot serve it ourselves: widen upstream
    if (!files_.count(key)) {
        RangeSet want = requested;
        want.merge(sub.content_up);
        auto up = up_link_for(addr.com_address);
        if (up) {
            sub.up_link = up;
            sub.content_up = want;
            RangeSubscription rs;
            uint64_t have = cs.have_state ? cs.state : 0;
            if (want.covers_all())
                rs.entries.push_back({{0, int64_t{1} << 40}, have});
            else
                for (const auto& r : want.ranges()) rs.entries.push_back({r, have});
            WireValue body = WireValue::record({addr_record(addr),
                                                WireValue::variant(1, rs.to_wire()),
                                                WireValue::variant(0)});
            send_frame(ctx, *up, msg::ChangeSubscription, body, addr.com_address,
                       addr.socket_id, true);
        }
    }
}

void NodeMachine::handle_update(Context& ctx, MachineId from, const WireValue& payload,
                                const Bytes&) {
    const WireValue& body = *payload.as_signed().inner;
    SocketFileAddr addr = SocketFileAddr::from_wire(body.field(0));
    uint64_t transfer = body.field(1).as_integer();
    uint64_t new_state = body.field(2).as_integer();
    auto changed = proto::changed_from_wire(body.field(3));
    uint64_t route_prefix = transfer != 0 ? transfer : addr.com_address;
    SocketKey key = key_of(addr);

    ContentState& cs = content_[key];
    Subscription& sub = subs_[key];
    if (sub.addr.socket_id == 0) sub.addr = addr;

    if (cs.have_state && new_state <= cs.state) return;  // duplicate

    bool snapshot_response = ctx.current_hop() > 0 && pending_snapshots_.count(key) &&
                             !pending_snapshots_[key].empty();
    bool contiguous = cs.have_state && new_state == cs.state + 1;
    bool requested_full = !contiguous && !sub.content_up.empty();

    if (contiguous) {
        cs.history[new_state] = changed;
    } else if (requested_full || snapshot_response || !cs.have_state) {
        // deliberate full state for the ranges we asked for
        RangeSet granted = sub.content_up.empty() ? RangeSet::all() : sub.content_up;
        for (auto it = cs.contents.begin(); it != cs.contents.end();) {
            if (granted.contains(it->first)) it = cs.contents.erase(it);
            else ++it;
        }
        cs.complete = granted;
        cs.history.clear();
    } else {
        // a jump we never asked for: our cache is no longer authoritative
        cs.complete.clear();
        cs.history.clear();
    }
    for (const auto& el : changed) {
        auto old = cs.contents.find(el.index);
        if (old != cs.contents.end()) cs.bytes -= old->second.size();
        cs.contents[el.index] = el.data;
        cs.bytes += el.data.size();
    }
    cs.have_state = true;
    cs.state = new_state;
    cs.last_used = ctx.now();

    // fan out: subscribed links whose ranges intersect the changed indices
    for (auto& [link, ranges] : sub.content_down) {
        if (link == from) continue;
        bool relevant = changed.empty();
        for (const auto& el : changed) relevant |= ranges.contains(el.index);
        if (relevant) send_frame(ctx, link, msg::Update, payload, route_prefix, addr.socket_id);
    }
    // active shortcut: bypassed traffic goes straight to the target
    for (auto& sc : shortcuts_) {
        if (sc.phase == ShortcutState::Active && sc.role == ShortcutState::Source &&
            sc.socket == key) {
            send_frame(ctx, sc.target, msg::Update, payload, route_prefix, addr.socket_id);
            sc.last_activity = ctx.now();
            charge_bytes(sc.replaced_link, 64);
        }
    }
    // upward toward the socket file unless we hold it or it came from above
    if (!files_.count(key)) {
        auto up = up_link_for(route_prefix);
        Connection* in = connection(from);
        bool from_above = in && in->direction == Connection::Up;
        if (up && !from_above) send_frame(ctx, *up, msg::Update, payload, route_prefix,
                                          addr.socket_id);
    } else {
        // the holder relays toward every persistence server location
        FileEntry& entry = files_[key];
        for (const auto& loc : entry.data.persistence_servers) {
            auto down = down_link_for_location(loc, route_prefix);
            if (down && *down != from)
                send_frame(ctx, *down, msg::Update, payload, route_prefix, addr.socket_id);
        }
    }
    // snapshot requesters get the running state once we are authoritative
    auto pit = pending_snapshots_.find(key);
    if (pit != pending_snapshots_.end() && cs.complete.covers_all()) {
        std::vector<ChangedElement> full;
        for (const auto& [index, bytes] : cs.contents) full.push_back({index, bytes});
        WireValue full_body = WireValue::record({
            addr_record(addr),
            WireValue::integer(addr.com_address),
            WireValue::integer(cs.state),
            proto::changed_to_wire(full),
        });
        WireValue sealed = ident::seal_signed(providers(),
                                              reg().at(msg::Update).payload_schema->inner,
                                              full_body, config_.node_keys, "mock");
        for (MachineId link : pit->second) {
            Connection* conn = connection(link);
            wire::ChannelCipher cipher;
            const wire::ChannelCipher* cipher_ptr = nullptr;
            uint64_t counter = 0;
            if (conn) {
                counter = conn->counter_out++;
                if (!conn->shared_key.empty()) {
                    cipher = ident::channel_cipher(providers(), "mock", conn->shared_key);
                    cipher_ptr = &cipher;
                }
            }
            Bytes frame = wire::frame_message(reg().at(msg::Update), counter, sealed, cipher_ptr);
            sim::FrameMeta meta;
            meta.type_id = msg::Update;
            meta.prefix = addr.com_address;
            meta.socket_id = addr.socket_id;
            meta.context = 1;  // snapshot response
            meta.journey = ctx.fresh_journey();
            meta.hop = 1;
            ctx.send(link, std::move(frame), std::move(meta));
        }
        pending_snapshots_.erase(pit);
    }

    // shortcut detection bookkeeping: single in, single out, nothing local
    sub.relay_in = from;
    if (sub.content_down.size() == 1 && !files_.count(key)) {
        MachineId only = sub.content_down.begin()->first;
        if (sub.relay_out == only) ++sub.single_path_frames;
        else sub.single_path_frames = 1;
        sub.relay_out = only;
        maybe_initiate_shortcut(ctx, sub);
    } else {
        sub.relay_out.reset();
        sub.single_path_frames = 0;
    }
    prune_content_cache(ctx);
}

void NodeMachine::handle_commit(Context& ctx, MachineId from, const sim::FrameEvent& ev) {
    auto parsed = wire::parse_frame(reg(), ev.bytes, nullptr);
    // commit frames are connection-context routed; meta carries the socket
    if (!ev.meta.socket_id || !ev.meta.prefix) return;
    const auto* known = std::get_if<wire::KnownMessage>(&parsed);
    if (!known) return;
    uint64_t state = known->payload.field(0).as_integer();
    proto::SocketRef server = proto::SocketRef::from_wire(known->payload.field(1));

    // find the socket by id among our subscriptions
    SocketKey key{};
    bool found = false;
    for (const auto& [k, sub] : subs_) {
        if (k.socket_id == *ev.meta.socket_id) {
            key = k;
            found = true;
            break;
        }
    }
    if (!found) return;
    ContentState& cs = content_[key];
    std::string label = std::to_string(server.id);
    if (!cs.commits[state].insert(label).second) return;  // duplicate

    Subscription& sub = subs_[key];
    for (const auto& [link, ranges] : sub.content_down) {
        if (link == from) continue;
        send_frame(ctx, link, msg::Commit, known->payload, *ev.meta.prefix, key.socket_id);
    }
    for (auto& sc : shortcuts_) {
        if (sc.phase == ShortcutState::Active && sc.role == ShortcutState::Source &&
            sc.socket == key)
            send_frame(ctx, sc.target, msg::Commit, known->payload, *ev.meta.prefix,
                       key.socket_id);
    }
    if (!files_.count(key)) {
        auto up = up_link_for(*ev.meta.prefix);
        Connection* in = connection(from);
        bool from_above = in && in->direction == Connection::Up;
        if (up && !from_above)
            send_frame(ctx, *up, msg::Commit, known->payload, *ev.meta.prefix, key.socket_id);
    }
}

void NodeMachine::handle_snapshot(Context& ctx, MachineId from, const WireValue& payload) {
    SocketFileAddr addr = SocketFileAddr::from_wire(payload);
    SocketKey key = key_of(addr);
    ContentState& cs = content_[key];

    if (cs.have_state && cs.complete.covers_all()) {
        std::vector<ChangedElement> full;
        for (const auto& [index, bytes] : cs.contents) full.push_back({index, bytes});
        WireValue body = WireValue::record({
            addr_record(addr),
            WireValue::integer(addr.com_address),
            WireValue::integer(cs.state),
            proto::changed_to_wire(full),
        });
        WireValue sealed = ident::seal_signed(providers(),
                                              reg().at(msg::Update).payload_schema->inner, body,
                                              config_.node_keys, "mock");
        Connection* conn = connection(from);
        wire::ChannelCipher cipher;
        const wire::ChannelCipher* cipher_ptr = nullptr;
        uint64_t counter = 0;
        if (conn) {
            counter = conn->counter_out++;
            if (!conn->shared_key.empty()) {
                cipher = ident::channel_cipher(providers(), "mock", conn->shared_key);
                cipher_ptr = &cipher;
            }
        }
        Bytes frame = wire::frame_message(reg().at(msg::Update), counter, sealed, cipher_ptr);
        sim::FrameMeta meta;
        meta.type_id = msg::Update;
        meta.prefix = addr.com_address;
        meta.socket_id = addr.socket_id;
        meta.context = 1;
        ctx.send(from, std::move(frame), std::move(meta));
        cs.hits++;
        cs.last_used = ctx.now();
        return;
    }
    pending_snapshots_[key].insert(from);
    if (files_.count(key)) {
        // authoritative copy lives with the persistence servers
        FileEntry& entry = files_[key];
        for (const auto& loc : entry.data.persistence_servers) {
            auto down = down_link_for_location(loc, addr.com_address);
            if (down) {
                send_frame(ctx, *down, msg::Snapshot, payload, addr.com_address, addr.socket_id);
                break;
            }
        }
        return;
    }
    auto up = up_link_for(addr.com_address);
    if (up) send_frame(ctx, *up, msg::Snapshot, payload, addr.com_address, addr.socket_id);
}

void NodeMachine::handle_subscription_error(Context& ctx, MachineId from,
                                            const WireValue& payload) {
    uint64_t socket_id = payload.field(0).as_integer();
    for (auto& [key, sub] : subs_) {
        if (key.socket_id != socket_id) continue;
        for (const auto& [link, ranges] : sub.content_down)
            if (link != from)
                send_frame(ctx, link, msg::SubscriptionError, payload, sub.addr.com_address,
                           socket_id);
        for (const auto& [link, ranges] : sub.file_down)
            if (link != from && !sub.content_down.count(link))
                send_frame(ctx, link, msg::SubscriptionError, payload, sub.addr.com_address,
                           socket_id);
        sub.content_down.clear();
        sub.content_up.clear();
        sub.file_down.clear();
        sub.file_up.clear();
        if (content_.count(key)) content_[key].complete.clear();
    }
}

void NodeMachine::invalidate_content(Context&, const SocketKey& key) {
    auto it = content_.find(key);
    if (it != content_.end()) it->second.complete.clear();
}

void NodeMachine::prune_content_cache(Context& ctx) {
    size_t total = 0;
    for (const auto& [key, cs] : content_) total += cs.bytes;
    if (total <= config_.tuning.content_cache_bytes) return;
    // local resources stay in use until pressure; then lowest utility goes
    std::vector<std::pair<double, SocketKey>> order;
    for (const auto& [key, cs] : content_) {
        if (files_.count(key)) continue;  // holders keep their content
        double age = static_cast<double>(ctx.now() - cs.last_used);
        double utility = (static_cast<double>(cs.hits) + 1.0) *
                         std::pow(0.5, age / static_cast<double>(config_.tuning.cache_half_life_ms));
        order.push_back({utility, key});
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        return a.first < b.first;
    });
    for (const auto& [utility, key] : order) {
        if (total <= config_.tuning.content_cache_bytes) break;
        ContentState& cs = content_[key];
        total -= cs.bytes;
        cs.contents.clear();
        cs.history.clear();
        cs.bytes = 0;
        cs.complete.clear();
        ctx.note("content_cache_pruned", {{"socket", key.socket_id}});
    }
}

// ------------------------------------------------------ requests/responses

void NodeMachine::forward_server_request(Context& ctx, MachineId from, uint32_t type_id,
                                         uint64_t request_id, const SocketFileAddr& addr,
                                         const WireValue& payload) {
    SocketKey key = key_of(addr);
    remember_pending(key, request_id, from, ctx.now());

    auto it = files_.find(key);
    if (it == files_.end()) {
        if (is_root()) {
            WireValue err = WireValue::record({WireValue::integer(addr.socket_id),
                                               WireValue::raw(addr.pub_key.key)});
            send_frame(ctx, from, msg::SubscriptionError, err, addr.com_address, addr.socket_id);
            return;
        }
        auto up = up_link_for(addr.com_address);
        if (up) send_frame(ctx, *up, type_id, payload, addr.com_address, addr.socket_id);
        return;
    }
    // turn downward to every persistence server of the socket
    for (const auto& loc : it->second.data.persistence_servers) {
        auto down = down_link_for_location(loc, addr.com_address);
        if (down && *down != from)
            send_frame(ctx, *down, type_id, payload, addr.com_address, addr.socket_id);
    }
    content_[key].hits++;
}

void NodeMachine::forward_response(Context& ctx, uint32_t type_id, uint64_t request_id,
                                   const SocketFileAddr& addr, const WireValue& payload) {
    SocketKey key = key_of(addr);
    auto it = pending_.find({key, request_id});
    if (it == pending_.end()) return;
    MachineId back = it->second.from;
    pending_.erase(it);
    send_frame(ctx, back, type_id, payload, addr.com_address, addr.socket_id);
}

void NodeMachine::remember_pending(const SocketKey& key, uint64_t request_id, MachineId from,
                                   SimTime at) {
    pending_[{key, request_id}] = {from, at};
    if (pending_.size() > 4096) {
        // drop entries past the ttl
        for (auto it = pending_.begin(); it != pending_.end();) {
            if (at - it->second.at > config_.tuning.pending_ttl_ms) it = pending_.erase(it);
            else ++it;
        }
    }
}

void NodeMachine::handle_slowdown(Context& ctx, MachineId from) {
    slowdown_until_ = ctx.now() + config_.tuning.creation_window_ms;
    // pass the signal to whichever child is flooding us
    MachineId worst = 0;
    size_t count = 0;
    for (const auto& [child, n] : creations_in_window_) {
        Connection* conn = connection(child);
        if (conn && conn->direction != Connection::Up && n > count) {
            worst = child;
            count = n;
        }
    }
    if (worst != 0 && worst != from)
        send_frame(ctx, worst, msg::SlowdownSocketFileCreation, WireValue::record({}),
                   std::nullopt, std::nullopt, true);
}

// ------------------------------------------------------------ bandwidth

void NodeMachine::charge_bytes(MachineId link, size_t bytes) {
    bytes_in_window_[link] += bytes;
}

void NodeMachine::bandwidth_tick(Context& ctx) {
    std::map<MachineId, LinkDemand> demands;
    for (const auto& [peer, conn] : connections_) {
        if (conn.direction != Connection::Down) continue;
        double weight = 1.0;
        for (const auto& cd : config_.accepted_children)
            if (cd.domain_name == conn.child_domain) weight = cd.priority_weight;
        demands[peer] = {weight, bytes_in_window_[peer]};
    }
    if (!demands.empty()) {
        size_t capacity = 0;
        for (const auto& [peer, d] : demands) capacity += d.demand;
        last_budgets_ = allocate_bandwidth(std::max<size_t>(capacity, 1), demands);
    }
    bytes_in_window_.clear();
    ctx.set_timer(config_.tuning.bandwidth_window_ms, ++timer_seq_, "bandwidth");
}

// ------------------------------------------------------------ shortcuts

void NodeMachine::maybe_initiate_shortcut(Context& ctx, Subscription& sub) {
    if (!config_.tuning.shortcuts_enabled) return;
    SocketKey key = key_of(sub.addr);
    if (files_.count(key)) return;
    if (sub.content_down.size() != 1 || !sub.relay_in || !sub.relay_out) return;
    if (sub.single_path_frames < config_.tuning.shortcut_relay_threshold) return;
    Connection* out = connection(*sub.relay_out);
    Connection* in = connection(*sub.relay_in);
    if (!out || !in || out->direction == Connection::Edge || in->direction == Connection::Edge)
        return;
    for (const auto& sc : shortcuts_)
        if (sc.socket == key && sc.phase != ShortcutState::Terminating) return;

    ShortcutState sc;
    sc.role = ShortcutState::Middle;
    sc.phase = ShortcutState::Pending;
    sc.request_id = next_request_id_++;
    sc.socket = key;
    sc.socket_pub = sub.addr.pub_key;
    sc.com_address = sub.addr.com_address;
    sc.source = *sub.relay_in;
    sc.target = *sub.relay_out;
    shortcuts_.push_back(sc);

    WireValue body = WireValue::record({
        WireValue::integer(sc.request_id),
        ident::identity_to_wire(out->peer_identity),
        WireValue::integer(key.socket_id),
        WireValue::record({WireValue::text(sub.addr.pub_key.method),
                           WireValue::raw(sub.addr.pub_key.key)}),
        proto::NetAddress{"sim", *sub.relay_in}.to_wire(),
    });
    WireValue sealed = ident::seal_authenticated(
        providers(), reg().at(msg::AuthorizeShortcut).payload_schema->inner, body,
        config_.node_keys, "mock");
    send_frame(ctx, *sub.relay_out, msg::AuthorizeShortcut, sealed, sub.addr.com_address,
               key.socket_id, true);
    ctx.note("shortcut_requested", {{"socket", key.socket_id}});
}

NodeMachine::ShortcutState* NodeMachine::shortcut_by_request(uint64_t request_id) {
    for (auto& sc : shortcuts_)
        if (sc.request_id == request_id) return &sc;
    return nullptr;
}

NodeMachine::ShortcutState* NodeMachine::shortcut_for_socket(const SocketKey& key,
                                                             ShortcutState::Role role) {
    for (auto& sc : shortcuts_)
        if (sc.socket == key && sc.role == role && sc.phase == ShortcutState::Active) return &sc;
    return nullptr;
}

void NodeMachine::handle_shortcut_frame(Context& ctx, MachineId from, uint32_t type,
                                        const WireValue& payload) {
    switch (type) {
        case msg::AuthorizeShortcut: {
            // we are the proposed target
            const WireValue& body = *payload.as_auth().inner;
            uint64_t request_id = body.field(0).as_integer();
            uint64_t socket_id = body.field(2).as_integer();
            ident::SingleIdentity socket_key{body.field(3).field(0).as_text(),
                                             body.field(3).field(1).as_raw()};
            proto::NetAddress source = proto::NetAddress::from_wire(body.field(4));

            ShortcutState sc;
            sc.role = ShortcutState::Target;
            sc.phase = ShortcutState::Pending;
            sc.request_id = request_id;
            sc.socket = {socket_id};
            sc.socket_pub = socket_key;
            sc.source = source.machine;
            sc.replaced_link = from;  // the middle node stepping out
            shortcuts_.push_back(sc);

            WireValue req = WireValue::record({
                payload,  // relay the middle node's authorization
                proto::NetAddress{"sim", ctx.self()}.to_wire(),
            });
            WireValue sealed = ident::seal_authenticated(
                providers(), reg().at(msg::RequestShortcut).payload_schema->inner, req,
                config_.node_keys, "mock");
            send_frame(ctx, source.machine, msg::RequestShortcut, sealed, std::nullopt,
                       socket_id, true);
            return;
        }
        case msg::RequestShortcut: {
            // we are the source; decide and notify the middle node
            const WireValue& body = *payload.as_auth().inner;
            const WireValue& authorization = *body.field(0).as_auth().inner;
            uint64_t request_id = authorization.field(0).as_integer();
            uint64_t socket_id = authorization.field(2).as_integer();
            ident::SingleIdentity socket_key{authorization.field(3).field(0).as_text(),
                                             authorization.field(3).field(1).as_raw()};
            proto::NetAddress target = proto::NetAddress::from_wire(body.field(1));
            SocketKey key{socket_id};

            // accept only when we in fact relay this socket toward the middle
            auto sit = subs_.find(key);
            bool relaying = sit != subs_.end();
            if (!config_.tuning.shortcuts_enabled) relaying = false;
            if (!relaying) {
                ctx.note("shortcut_rejected", {{"socket", socket_id}});
                return;
            }
            ShortcutState sc;
            sc.role = ShortcutState::Source;
            sc.phase = ShortcutState::Pending;
            sc.request_id = request_id;
            sc.socket = key;
            sc.socket_pub = socket_key;
            sc.target = target.machine;
            shortcuts_.push_back(sc);
            send_frame(ctx, from, msg::NewShortcut,
                       WireValue::record({WireValue::integer(request_id)}), std::nullopt,
                       socket_id, true);
            return;
        }
        case msg::NewShortcut: {
            // we are the middle node; source accepted
            uint64_t request_id = payload.field(0).as_integer();
            ShortcutState* sc = shortcut_by_request(request_id);
            if (!sc) return;
            send_frame(ctx, from, msg::NewShortcutAck,
                       WireValue::record({WireValue::integer(request_id)}), std::nullopt,
                       sc->socket.socket_id, true);
            // step out of the path for this socket
            auto sit = subs_.find(sc->socket);
            if (sit != subs_.end()) {
                sit->second.content_down.clear();
                sit->second.content_up.clear();
                sit->second.single_path_frames = 0;
            }
            if (content_.count(sc->socket)) content_[sc->socket].complete.clear();
            sc->phase = ShortcutState::Active;
            ctx.note("shortcut_bypassed", {{"socket", sc->socket.socket_id}});
            return;
        }
        case msg::NewShortcutAck: {
            // we are the source: reroute traffic and key the new connection
            uint64_t request_id = payload.field(0).as_integer();
            ShortcutState* sc = shortcut_by_request(request_id);
            if (!sc) return;
            sc->phase = ShortcutState::Active;
            sc->replaced_link = from;
            sc->last_activity = ctx.now();
            sc->shared_key = providers().at("mock").generate_shared_key(ctx.rng());
            auto sit = subs_.find(sc->socket);
            if (sit != subs_.end()) {
                sit->second.content_down.erase(from);
            }
            WireValue key_record = WireValue::record({
                WireValue::integer(request_id),
                WireValue::raw(sc->shared_key),
            });
            const auto& schema = reg().at(msg::RequestShortcutAck).payload_schema;
            WireValue encrypted = ident::seal_encrypted(providers(), schema->inner->inner,
                                                        key_record, "mock", Bytes{});
            WireValue sealed = ident::seal_authenticated(providers(), schema->inner, encrypted,
                                                         config_.node_keys, "mock");
            send_frame(ctx, sc->target, msg::RequestShortcutAck, sealed, std::nullopt,
                       sc->socket.socket_id, true);
            ctx.note("shortcut_active", {{"socket", sc->socket.socket_id},
                                         {"target", sc->target}});
            return;
        }
        case msg::RequestShortcutAck: {
            // we are the target; shortcut established
            const WireValue& enc = *payload.as_auth().inner;
            const auto& schema = reg().at(msg::RequestShortcutAck).payload_schema;
            WireValue key_record = ident::open_encrypted(providers(), schema->inner->inner, enc,
                                                         "mock", Bytes{});
            uint64_t request_id = key_record.field(0).as_integer();
            ShortcutState* sc = shortcut_by_request(request_id);
            if (!sc) return;
            sc->phase = ShortcutState::Active;
            sc->source = from;
            sc->shared_key = key_record.field(1).as_raw();
            sc->last_activity = ctx.now();
            ctx.note("shortcut_target_ready", {{"socket", sc->socket.socket_id}});
            return;
        }
        case msg::RequestTerminateShortcut: {
            // we are the source control point
            uint64_t request_id = payload.field(0).as_integer();
            uint64_t socket_id = payload.field(1).as_integer();
            ident::SingleIdentity socket_key{payload.field(2).field(0).as_text(),
                                             payload.field(2).field(1).as_raw()};
            SocketKey key{socket_id};
            ShortcutState* sc = shortcut_for_socket(key, ShortcutState::Source);
            if (!sc || sc->phase == ShortcutState::Terminating) {
                // concurrent terminations serialize here; the loser is acked
                WireValue ack = WireValue::record({
                    WireValue::integer(request_id),
                    WireValue::integer(socket_id),
                    WireValue::record({WireValue::text(socket_key.method),
                                       WireValue::raw(socket_key.key)}),
                });
                send_frame(ctx, from, msg::TerminateShortcutAck, ack, std::nullopt, socket_id,
                           true);
                return;
            }
            terminate_shortcut(ctx, *sc, "requested");
            return;
        }
        case msg::TerminateShortcut: {
            // we are the target; revert to the normal path and resubscribe
            uint64_t request_id = payload.field(0).as_integer();
            uint64_t socket_id = payload.field(1).as_integer();
            ident::SingleIdentity socket_key{payload.field(2).field(0).as_text(),
                                             payload.field(2).field(1).as_raw()};
            SocketKey key{socket_id};
            WireValue ack = WireValue::record({
                WireValue::integer(request_id),
                WireValue::integer(socket_id),
                WireValue::record({WireValue::text(socket_key.method),
                                   WireValue::raw(socket_key.key)}),
            });
            send_frame(ctx, from, msg::TerminateShortcutAck, ack, std::nullopt, socket_id, true);
            for (auto& sc : shortcuts_) {
                if (sc.socket == key && sc.role == ShortcutState::Target) {
                    sc.phase = ShortcutState::Terminating;
                }
            }
            // resubscribe through the normal tree with our cached version
            auto sit = subs_.find(key);
            if (sit != subs_.end() && !sit->second.content_down.empty()) {
                Subscription& sub = sit->second;
                auto up = up_link_for(sub.addr.com_address);
                if (up) {
                    ContentState& cs = content_[key];
                    RangeSubscription rs;
                    rs.entries.push_back({{0, int64_t{1} << 40},
                                          cs.have_state ? cs.state : 0});
                    WireValue body = WireValue::record({addr_record(sub.addr),
                                                        WireValue::variant(1, rs.to_wire()),
                                                        WireValue::variant(0)});
                    sub.up_link = up;
                    sub.content_up = RangeSet::all();
                    send_frame(ctx, *up, msg::ChangeSubscription, body, sub.addr.com_address,
                               socket_id, true);
                }
            }
            shortcuts_.erase(std::remove_if(shortcuts_.begin(), shortcuts_.end(),
                                            [&](const ShortcutState& sc) {
                                                return sc.socket == key &&
                                                       sc.role == ShortcutState::Target;
                                            }),
                             shortcuts_.end());
            return;
        }
        case msg::TerminateShortcutAck: {
            uint64_t socket_id = payload.field(1).as_integer();
            ident::SingleIdentity socket_key{payload.field(2).field(0).as_text(),
                                             payload.field(2).field(1).as_raw()};
            SocketKey key{socket_id};
            (void)socket_key;
            shortcuts_.erase(std::remove_if(shortcuts_.begin(), shortcuts_.end(),
                                            [&](const ShortcutState& sc) {
                                                return sc.socket == key;
                                            }),
                             shortcuts_.end());
            ctx.note("shortcut_terminated", {{"socket", socket_id}});
            return;
        }
        default:
            return;
    }
}

void NodeMachine::terminate_shortcut(Context& ctx, ShortcutState& sc, const char* reason) {
    if (sc.role == ShortcutState::Source) {
        sc.phase = ShortcutState::Terminating;
        WireValue term = WireValue::record({
            WireValue::integer(sc.request_id),
            WireValue::integer(sc.socket.socket_id),
            WireValue::record({WireValue::text(sc.socket_pub.method),
                               WireValue::raw(sc.socket_pub.key)}),
        });
        send_frame(ctx, sc.target, msg::TerminateShortcut, term, std::nullopt,
                   sc.socket.socket_id, true);
        // resume the normal path through the middle node immediately
        ctx.note("shortcut_terminating", {{"socket", sc.socket.socket_id},
                                          {"reason", reason}});
        return;
    }
    if (sc.role == ShortcutState::Middle) {
        WireValue term = WireValue::record({
            WireValue::integer(sc.request_id),
            WireValue::integer(sc.socket.socket_id),
            WireValue::record({WireValue::text(sc.socket_pub.method),
                               WireValue::raw(sc.socket_pub.key)}),
            ident::identity_to_wire(config_.node_identity),
            WireValue::variant(0),
        });
        send_frame(ctx, sc.source, msg::RequestTerminateShortcut, term, std::nullopt,
                   sc.socket.socket_id, true);
        sc.phase = ShortcutState::Terminating;
        return;
    }
    // target asks the source to stop
    WireValue term = WireValue::record({
        WireValue::integer(sc.request_id),
        WireValue::integer(sc.socket.socket_id),
        WireValue::record({WireValue::text(sc.socket_pub.method),
                           WireValue::raw(sc.socket_pub.key)}),
        ident::identity_to_wire(config_.node_identity),
        WireValue::variant(0),
    });
    send_frame(ctx, sc.source, msg::RequestTerminateShortcut, term, std::nullopt,
               sc.socket.socket_id, true);
    sc.phase = ShortcutState::Terminating;
}

// ------------------------------------------------------------ dispatch

void NodeMachine::on_timer(Context& ctx, const sim::TimerEvent& ev) {
    if (ev.tag == "keepalive") {
        keepalive_tick(ctx);
        return;
    }
    if (ev.tag == "bandwidth") {
        bandwidth_tick(ctx);
        return;
    }
    if (ev.tag == "migrate") {
        migrate_tick(ctx);
        return;
    }
    if (ev.tag.rfind("retry:", 0) == 0) {
        size_t parent_index = static_cast<size_t>(std::stoul(ev.tag.substr(6)));
        if (!recovering_parents_.count(parent_index)) return;
        // probe the primary again; jittered so bursts cannot synchronize
        join_parent(ctx, parent_index);
        ctx.set_timer(static_cast<SimTime>(jitter(ctx.rng(), config_.tuning.reconnect_retry_ms)),
                      ++timer_seq_, ev.tag);
        return;
    }
}

void NodeMachine::on_frame(Context& ctx, const sim::FrameEvent& ev) {
    Connection* conn = connection(ev.from);
    wire::ChannelCipher cipher;
    const wire::ChannelCipher* cipher_ptr = nullptr;
    if (conn && !conn->shared_key.empty()) {
        cipher = ident::channel_cipher(providers(), "mock", conn->shared_key);
        cipher_ptr = &cipher;
    }
    wire::ParsedFrame parsed;
    try {
        parsed = wire::parse_frame(reg(), ev.bytes, cipher_ptr);
    } catch (const std::exception&) {
        // handshake frames arrive clear even on keyed connections
        try {
            parsed = wire::parse_frame(reg(), ev.bytes, nullptr);
        } catch (const std::exception& e) {
            ctx.note("frame_dropped", {{"from", ev.from}, {"error", e.what()}});
            return;
        }
    }
    if (const auto* unknown = std::get_if<wire::UnknownType>(&parsed)) {
        // forward compatibility: ignore, never abort the connection
        ctx.note("unknown_type_ignored", {{"type", unknown->type_id}});
        return;
    }
    const auto& known = std::get<wire::KnownMessage>(parsed);
    uint32_t type = known.descriptor->type_id;

    // handshake frames manage connections themselves
    bool handshake = type == msg::RequestConnection || type == msg::Connect ||
                     type == msg::ConnectAck || type == msg::AccessPoints ||
                     type == msg::ActivateReplica;
    if (conn && conn->established && !handshake) {
        if (conn->counter_in && known.counter <= *conn->counter_in) {
            ctx.note("counter_regression", {{"from", ev.from}, {"counter", known.counter}});
            return;
        }
        conn->counter_in = known.counter;
        conn->last_heard = ctx.now();
    } else if (conn) {
        conn->last_heard = ctx.now();
    }

    if (!active_ && type != msg::ActivateReplica) return;  // passive standby

    switch (type) {
        case msg::RequestConnection:
            handle_request_connection(ctx, ev.from, known.payload);
            return;
        case msg::AccessPoints: {
            // connect to every advertised contact (and learn the replicas)
            for (const auto& entry : known.payload.as_signed().inner->items()) {
                const WireValue& node_ad = entry.field(0);
                proto::NetAddress contact = proto::NetAddress::from_wire(node_ad.field(1));
                WireValue range_record = WireValue::record({
                    WireValue::integer(config_.assigned_range.start),
                    WireValue::integer(config_.assigned_range.end),
                });
                WireValue sealed = ident::seal_signed(
                    providers(), reg().at(msg::Connect).payload_schema->inner, range_record,
                    config_.node_keys, "mock");
                send_frame(ctx, contact.machine, msg::Connect, sealed, std::nullopt,
                           std::nullopt, true);
            }
            return;
        }
        case msg::Connect:
            handle_connect(ctx, ev.from, known.payload);
            return;
        case msg::ConnectAck:
            handle_connect_ack(ctx, ev.from, known.payload);
            return;
        case msg::KeepAlive:
            return;  // last_heard already refreshed
        case msg::ActivateReplica: {
            bool activate = known.payload.as_union().index == 0;
            if (activate && !active_) {
                active_ = true;
                ctx.note("replica_activated", {{"node", config_.node_id}});
                start_join(ctx);
            } else if (!activate && active_ && config_.standby) {
                active_ = false;
                ctx.note("replica_deactivated", {{"node", config_.node_id}});
            }
            return;
        }
        case msg::ReplicaUpdate:
            return;  // static topologies: replica lists come from config
        case msg::AddressSpaceUpdate:
        case msg::DomainChange:
        case msg::BoundaryChange:
            ctx.note("topology_change_seen", {{"type", known.descriptor->name}});
            return;
        case msg::NewSocketFile:
            handle_new_socket_file(ctx, ev.from, known.payload);
            return;
        case msg::SocketFileUpdate:
            handle_file_update(ctx, ev.from, known.payload);
            return;
        case msg::SlowdownSocketFileCreation:
            handle_slowdown(ctx, ev.from);
            return;
        case msg::AddtoSubscription:
            handle_add_to_subscription(ctx, ev.from, known.payload);
            return;
        case msg::RemoveFromSubscription: {
            SocketFileAddr addr = SocketFileAddr::from_wire(known.payload.field(0));
            auto it = subs_.find(key_of(addr));
            if (it != subs_.end()) {
                auto dit = it->second.file_down.find(ev.from);
                if (dit != it->second.file_down.end()) {
                    for (const auto& r : known.payload.field(1).items())
                        dit->second.remove(proto::range_from_wire(r));
                    if (dit->second.empty()) it->second.file_down.erase(dit);
                }
            }
            return;
        }
        case msg::CheckSocketFile:
            handle_check_socket_file(ctx, ev.from, known.counter, known.payload);
            return;
        case msg::CheckSocketFileAck: {
            uint64_t request_id = known.payload.field(0).as_integer();
            // route back along the pending trail; addr comes from the trail key
            for (auto it = pending_.begin(); it != pending_.end(); ++it) {
                if (it->first.second != request_id) continue;
                MachineId back = it->second.from;
                SocketKey key = it->first.first;
                pending_.erase(it);
                send_frame(ctx, back, msg::CheckSocketFileAck, known.payload,
                           ev.meta.prefix, key.socket_id);
                return;
            }
            return;
        }
        case msg::DeleteSocketFile: {
            const WireValue& body = *known.payload.as_signed().inner;
            SocketFileAddr addr = SocketFileAddr::from_wire(body.field(0));
            SocketKey key = key_of(addr);
            if (files_.count(key)) {
                delete_file(ctx, key, false, "socket_file_deleted");
            } else {
                auto up = up_link_for(addr.com_address);
                if (up) send_frame(ctx, *up, msg::DeleteSocketFile, known.payload,
                                   addr.com_address, addr.socket_id);
            }
            return;
        }
        case msg::SocketFileDeleted: {
            // holder told a persistence server the file is gone; pass it down
            uint64_t socket_id = known.payload.field(0).as_integer();
            for (const auto& a : config_.attached)
                if (a.kind == AttachedMachine::PersistenceServer)
                    send_frame(ctx, a.machine, msg::SocketFileDeleted, known.payload,
                               ev.meta.prefix, socket_id);
            return;
        }
        case msg::ChangeSubscription:
            handle_change_subscription(ctx, ev.from, known.payload);
            return;
        case msg::Update:
            handle_update(ctx, ev.from, known.payload, ev.bytes);
            return;
        case msg::Commit:
            handle_commit(ctx, ev.from, ev);
            return;
        case msg::Snapshot:
            handle_snapshot(ctx, ev.from, known.payload);
            return;
        case msg::SubscriptionError:
            handle_subscription_error(ctx, ev.from, known.payload);
            return;
        case msg::AuthorizeShortcut:
        case msg::RequestShortcut:
        case msg::NewShortcut:
        case msg::NewShortcutAck:
        case msg::RequestShortcutAck:
        case msg::RequestTerminateShortcut:
        case msg::TerminateShortcut:
        case msg::TerminateShortcutAck:
            handle_shortcut_frame(ctx, ev.from, type, known.payload);
            return;
        case msg::NewShortcutTarget:
        case msg::NewShortcutTargetAck:
        case msg::FindNewShortcutSource:
        case msg::NewShortcutSource:
        case msg::NewShortcutSourceAck:
            // chain re-splitting variants; full reversion covers these runs
            ctx.note("shortcut_rechain_ignored", {{"type", known.descriptor->name}});
            return;
        case msg::Message: {
            const WireValue& body = *known.payload.as_auth().inner;
            SocketFileAddr addr = SocketFileAddr::from_wire(body.field(0));
            SocketKey key = key_of(addr);
            pending_message_acks_[key].push_back(ev.from);
            // dispatch leg: any node already carrying the reader's stream
            auto sit = subs_.find(key);
            bool delivered_down = false;
            if (sit != subs_.end()) {
                for (const auto& [link, ranges] : sit->second.content_down) {
                    if (link == ev.from) continue;
                    send_frame(ctx, link, msg::Message, known.payload, addr.com_address,
                               addr.socket_id);
                    delivered_down = true;
                }
            }
            auto fit = files_.find(key);
            if (fit != files_.end()) {
                for (const auto& loc : fit->second.data.persistence_servers) {
                    auto down = down_link_for_location(loc, addr.com_address);
                    if (down && *down != ev.from)
                        send_frame(ctx, *down, msg::Message, known.payload, addr.com_address,
                                   addr.socket_id);
                }
            } else {
                auto up = up_link_for(addr.com_address);
                Connection* in = connection(ev.from);
                bool from_above = in && in->direction == Connection::Up;
                if (up && !from_above)
                    send_frame(ctx, *up, msg::Message, known.payload, addr.com_address,
                               addr.socket_id);
            }
            (void)delivered_down;
            return;
        }
        case msg::MessageBufferResponse:
        case msg::MessageExpired: {
            // FIFO reverse path for sink acks
            if (!ev.meta.socket_id) return;
            for (auto& [key, queue] : pending_message_acks_) {
                if (key.socket_id != *ev.meta.socket_id || queue.empty()) continue;
                MachineId back = queue.front();
                queue.pop_front();
                send_frame(ctx, back, type, known.payload, ev.meta.prefix, key.socket_id);
                return;
            }
            return;
        }
        case msg::Lock:
        case msg::SetBoundaries:
        case msg::CreateSocket:
        case msg::RemoveSocket:
        case msg::SetMinReplicas:
        case msg::SetMaxReplicas:
        case msg::AddStorageBlock:
        case msg::RemoveStorageBlock:
        case msg::ChangeStorageBlockUser:
        case msg::SetQuota:
        case msg::SetMaximumMessageLength:
        case msg::ConsumeMessage:
        case msg::ClearMessage:
        case msg::GrantTo:
        case msg::DenyFrom:
        case msg::ClearRights:
        case msg::GrantToAll: {
            proto::ServerRequest request = proto::parse_server_request(type, known.payload);
            if (!request.signature_ok) {
                ctx.note("auth_failure", {{"from", ev.from}, {"type", known.descriptor->name}});
                return;
            }
            forward_server_request(ctx, ev.from, type, request.request_id, request.addr,
                                   known.payload);
            return;
        }
        case msg::StartReceiving:
        case msg::StopReceiving: {
            SocketFileAddr addr = SocketFileAddr::from_wire(*known.payload.as_auth().inner);
            // receiving toggles ride the server-request path without an id
            forward_server_request(ctx, ev.from, type, 0, addr, known.payload);
            return;
        }
        case msg::AccessRightResponse:
        case msg::ContainerOperationResponse:
        case msg::CreateSocketAck: {
            uint64_t request_id = 0;
            if (type == msg::CreateSocketAck)
                request_id = known.payload.as_auth().inner->field(0).as_integer();
            else
                request_id = known.payload.field(0).as_integer();
            if (!ev.meta.socket_id || !ev.meta.prefix) return;
            SocketFileAddr addr;
            addr.com_address = *ev.meta.prefix;
            addr.socket_id = *ev.meta.socket_id;
            // the pending trail was keyed without the pubkey when relaying
            for (auto it = pending_.begin(); it != pending_.end(); ++it) {
                if (it->first.first.socket_id != addr.socket_id ||
                    it->first.second != request_id)
                    continue;
                MachineId back = it->second.from;
                pending_.erase(it);
                send_frame(ctx, back, type, known.payload, addr.com_address, addr.socket_id);
                return;
            }
            return;
        }
        case msg::NewRootContainer: {
            // routed by the storage-block locations inside the payload
            const WireValue& body = *known.payload.as_auth().inner;
            const auto& blocks = body.field(1).items();
            std::set<MachineId> next_hops;
            for (const auto& block : blocks) {
                std::vector<std::string> loc;
                for (const auto& s : block.items()) loc.push_back(s.as_text());
                auto down = down_link_for_location(loc, 0);
                if (down) next_hops.insert(*down);
                else {
                    auto up = up_link_for(0);
                    for (const auto& [peer, c] : connections_)
                        if (c.direction == Connection::Up && c.established) {
                            up = peer;
                            break;
                        }
                    if (up) next_hops.insert(*up);
                }
            }
            SocketKey trail{0};  // container creation responses share one trail
            pending_message_acks_[trail].push_back(ev.from);
            for (MachineId hop : next_hops)
                send_frame(ctx, hop, msg::NewRootContainer, known.payload, std::nullopt,
                           std::nullopt);
            return;
        }
        case msg::NewRootContainerAck: {
            // reverse along the container-creation trail
            for (auto& [key, queue] : pending_message_acks_) {
                if (key.socket_id != 0 || queue.empty()) continue;
                MachineId back = queue.front();
                queue.pop_front();
                send_frame(ctx, back, type, known.payload, std::nullopt, std::nullopt);
                return;
            }
            return;
        }
        default:
            ctx.note("unhandled_message", {{"type", known.descriptor->name}});
            return;
    }
}

}  // namespace hca::node
