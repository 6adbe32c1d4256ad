#include "hca/ps/server.hpp"

#include <algorithm>

namespace hca::ps {

using proto::ChangedElement;
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

WireValue result_value(uint64_t request_id, bool success) {
    return WireValue::record({
        WireValue::integer(request_id),
        WireValue::variant(success ? 0 : 1),
    });
}
}  // namespace

void AccessVector::grant(const ident::Identity& id) {
    if (lists(id)) return;
    granted.push_back(id);
    std::sort(granted.begin(), granted.end());
}

void AccessVector::deny(const ident::Identity& id) {
    granted.erase(std::remove(granted.begin(), granted.end(), id), granted.end());
}

bool AccessVector::lists(const ident::Identity& id) const {
    return std::binary_search(granted.begin(), granted.end(), id);
}

std::vector<ChangedElement> AccessVector::encode() const {
    std::vector<ChangedElement> out;
    out.push_back({0, wire::encode_varinteger(static_cast<uint64_t>(mode))});
    out.push_back({1, wire::encode_varinteger(groups.size())});
    int64_t index = 2;
    for (uint64_t g : groups) {
        proto::SocketRef ref;
        ref.id = g;
        out.push_back({index++, proto::serialize_reference(ref)});
    }
    const auto& c = reg().common();
    for (const auto& id : granted)
        out.push_back({index++, wire::encode_value(c.identity, ident::identity_to_wire(id))});
    return out;
}

bool check_access(const std::map<uint64_t, AccessVector>& vectors,
                  const std::vector<uint64_t>& required_rights,
                  const ident::Identity& principal) {
    for (uint64_t right : required_rights) {
        // breadth-first walk from the right through roles/groups
        std::set<uint64_t> visited;
        std::deque<uint64_t> frontier{right};
        bool reached = false;
        while (!frontier.empty() && !reached) {
            uint64_t vertex = frontier.front();
            frontier.pop_front();
            if (!visited.insert(vertex).second) continue;
            auto it = vectors.find(vertex);
            if (it == vectors.end()) continue;
            const AccessVector& v = it->second;
            if (v.mode == AccessVector::None) continue;
            if (v.mode == AccessVector::GrantedAll) {
                reached = true;
                break;
            }
            if (v.lists(principal)) {
                reached = true;
                break;
            }
            for (uint64_t g : v.groups) frontier.push_back(g);
        }
        if (!reached) return false;
    }
    return true;
}

bool lock_apply(std::optional<std::string>& holder, LockOp op, const std::string& client_id) {
    switch (op) {
        case LockOp::Force:  // always succeeds
            holder = client_id;
            return true;
        case LockOp::Try:  // free, or re-acquired with the same client id
            if (!holder || *holder == client_id) {
                holder = client_id;
                return true;
            }
            return false;
        case LockOp::Release:  // by the holder only
            if (holder && *holder == client_id) {
                holder.reset();
                return true;
            }
            return false;
    }
    return false;
}

PersistenceServer::PersistenceServer(PersistenceConfig config) : config_(std::move(config)) {}

StoredSocket* PersistenceServer::socket(uint64_t id) {
    auto it = sockets_.find(id);
    return it == sockets_.end() ? nullptr : &it->second;
}

std::vector<std::string> PersistenceServer::my_location() const {
    auto loc = config_.location;
    loc.push_back(config_.name);
    return loc;
}

void PersistenceServer::on_start(Context& ctx) {
    publish_rng_.seed(ctx.rng()());
    for (auto& socket : config_.initial_sockets) {
        uint64_t id = socket.record.socket_id;
        socket.record.persistence_servers = {my_location()};
        sockets_[id] = socket;
        auto pit = config_.initial_prefixes.find(id);
        if (pit != config_.initial_prefixes.end()) published_prefixes_[id] = pit->second;
    }
    if (!config_.initial_sockets.empty())
        ctx.set_timer(config_.initial_publish_delay_ms, ++timer_seq_, "publish_initial");
    if (config_.poll_interval_ms > 0)
        ctx.set_timer(config_.poll_interval_ms, ++timer_seq_, "poll");
    ctx.set_timer(config_.reaper_timeout_ms, ++timer_seq_, "reap");
}

void PersistenceServer::on_crash() {
    // durable: sockets_ survive; in-flight bookkeeping does not
}

void PersistenceServer::on_restore(Context& ctx) {
    on_start(ctx);
    // republish everything we are responsible for
    for (auto& [id, socket] : sockets_) {
        if (socket.preliminary) continue;
        auto pit = published_prefixes_.find(id);
        if (pit != published_prefixes_.end()) publish_socket_file(ctx, socket, pit->second);
    }
}

void PersistenceServer::send_up(Context& ctx, uint32_t type_id, const WireValue& payload,
                                std::optional<uint64_t> prefix,
                                std::optional<uint64_t> socket_id, bool fresh) {
    Bytes frame = wire::frame_message(reg().at(type_id), 0, payload, nullptr);
    sim::FrameMeta meta;
    meta.type_id = type_id;
    meta.prefix = prefix;
    meta.socket_id = socket_id;
    if (fresh) {
        meta.journey = ctx.fresh_journey();
        meta.hop = 1;
    }
    ctx.send(config_.leaf_node, std::move(frame), std::move(meta));
}

void PersistenceServer::respond(Context& ctx, uint32_t type_id, const WireValue& payload,
                                const SocketFileAddr& addr) {
    send_up(ctx, type_id, payload, addr.com_address, addr.socket_id);
}

proto::SocketRef PersistenceServer::host_socket(Context& ctx, StoredSocket socket,
                                                std::mt19937_64& prefix_rng) {
    uint64_t id = socket.record.socket_id;
    socket.record.persistence_servers = {my_location()};
    std::vector<uint64_t> prefixes;
    size_t replicas = std::max<size_t>(1, config_.contact_replicas);
    for (size_t i = 0; i < replicas; ++i) prefixes.push_back(prefix_rng());
    published_prefixes_[id] = prefixes;
    sockets_[id] = std::move(socket);
    publish_socket_file(ctx, sockets_[id], prefixes);

    proto::SocketRef ref;
    ref.id = id;
    ref.contact_prefixes = prefixes;
    return ref;
}

void PersistenceServer::publish_socket_file(Context& ctx, StoredSocket& socket,
                                            const std::vector<uint64_t>& prefixes) {
    const auto& schema = reg().at(msg::NewSocketFile).payload_schema;
    WireValue data = socket.record.to_wire();
    WireValue sealed = ident::seal_authenticated(providers(), schema->fields[1].schema->inner,
                                                 data, config_.server_keys, "mock");
    for (uint64_t prefix : prefixes) {
        WireValue payload = WireValue::record({WireValue::integer(prefix), sealed});
        send_up(ctx, msg::NewSocketFile, payload, prefix, socket.record.socket_id);
    }
}

void PersistenceServer::publish_file_update(Context& ctx, StoredSocket& socket,
                                            std::vector<ChangedElement> changed) {
    // every modification bumps the version by one; the primary server owns it
    uint64_t from_version = socket.record.version;
    socket.record.version += 1;
    changed.push_back({fi::Version, proto::tail_integer(socket.record.version)});

    auto pit = published_prefixes_.find(socket.record.socket_id);
    if (pit == published_prefixes_.end()) return;
    ident::SingleIdentity pub =
        socket.record.pub_key.keys.empty() ? ident::SingleIdentity{} : socket.record.pub_key.keys[0];
    for (uint64_t prefix : pit->second) {
        WireValue body = WireValue::record({
            SocketFileAddr{prefix, socket.record.socket_id, pub}.to_wire(),
            WireValue::integer(from_version),
            WireValue::integer(socket.record.version),
            proto::changed_to_wire(changed),
        });
        WireValue sealed = ident::seal_signed(providers(),
                                              reg().at(msg::SocketFileUpdate).payload_schema->inner,
                                              body, config_.server_keys, "mock");
        send_up(ctx, msg::SocketFileUpdate, sealed, prefix, socket.record.socket_id);
    }
}

uint64_t PersistenceServer::effective_min_replicas(const StoredSocket& socket) const {
    if (socket.min_replicas_setting >= 0)
        return static_cast<uint64_t>(socket.min_replicas_setting);
    const StoredSocket* current = &socket;
    while (current->container_id != 0) {
        auto it = sockets_.find(current->container_id);
        if (it == sockets_.end()) break;
        current = &it->second;
        if (current->min_replicas_setting >= 0)
            return static_cast<uint64_t>(current->min_replicas_setting);
    }
    return 1;
}

uint64_t PersistenceServer::effective_max_replicas(const StoredSocket& socket) const {
    if (socket.max_replicas_setting >= 0)
        return static_cast<uint64_t>(socket.max_replicas_setting);
    const StoredSocket* current = &socket;
    while (current->container_id != 0) {
        auto it = sockets_.find(current->container_id);
        if (it == sockets_.end()) break;
        current = &it->second;
        if (current->max_replicas_setting >= 0)
            return static_cast<uint64_t>(current->max_replicas_setting);
    }
    return 1;
}

bool PersistenceServer::client_allowed(const StoredSocket& socket,
                                       const std::vector<uint64_t>& rights,
                                       const ident::SingleIdentity& client) const {
    std::map<uint64_t, AccessVector> vectors;
    for (const auto& [id, s] : sockets_) vectors[id] = s.access;
    ident::Identity principal;
    principal.keys.push_back(client);
    (void)socket;
    return check_access(vectors, rights, principal);
}

// ------------------------------------------------------------- dispatch

void PersistenceServer::on_frame(Context& ctx, const sim::FrameEvent& ev) {
    wire::ParsedFrame parsed;
    try {
        parsed = wire::parse_frame(reg(), ev.bytes, nullptr);
    } catch (const std::exception& e) {
        ctx.note("frame_dropped", {{"error", e.what()}});
        return;
    }
    if (std::holds_alternative<wire::UnknownType>(parsed)) return;
    const auto& known = std::get<wire::KnownMessage>(parsed);
    uint32_t type = known.descriptor->type_id;

    switch (type) {
        case msg::Update:
            handle_update(ctx, ev, known.payload);
            return;
        case msg::Message:
            handle_message(ctx, ev, known.payload);
            return;
        case msg::NewRootContainer:
            handle_new_root_container(ctx, ev, known.payload);
            return;
        case msg::Snapshot: {
            SocketFileAddr addr = SocketFileAddr::from_wire(known.payload);
            StoredSocket* s = socket(addr.socket_id);
            if (!s) return;
            std::vector<ChangedElement> full;
            for (const auto& [index, data] : s->vector_contents) full.push_back({index, data});
            WireValue body = WireValue::record({
                addr.to_wire(),
                WireValue::integer(addr.com_address),
                WireValue::integer(s->vector_state),
                proto::changed_to_wire(full),
            });
            WireValue sealed = ident::seal_signed(providers(),
                                                  reg().at(msg::Update).payload_schema->inner,
                                                  body, config_.server_keys, "mock");
            send_up(ctx, msg::Update, sealed, addr.com_address, addr.socket_id);
            return;
        }
        case msg::SocketFileDeleted: {
            // a node dropped one of our files; republish at the same contacts
            uint64_t socket_id = known.payload.field(0).as_integer();
            StoredSocket* s = socket(socket_id);
            auto pit = published_prefixes_.find(socket_id);
            if (s && pit != published_prefixes_.end())
                publish_socket_file(ctx, *s, pit->second);
            ctx.note("republish_after_delete", {{"socket", socket_id}});
            return;
        }
        case msg::CheckSocketFileAck: {
            uint64_t success = known.payload.field(1).as_boolean();
            if (!success && ev.meta.socket_id) {
                StoredSocket* s = socket(*ev.meta.socket_id);
                auto pit = published_prefixes_.find(*ev.meta.socket_id);
                if (s && pit != published_prefixes_.end())
                    publish_socket_file(ctx, *s, pit->second);
                ctx.note("republish_after_poll", {{"socket", *ev.meta.socket_id}});
            }
            return;
        }
        case msg::StartReceiving:
        case msg::StopReceiving: {
            SocketFileAddr addr = SocketFileAddr::from_wire(*known.payload.as_auth().inner);
            StoredSocket* s = socket(addr.socket_id);
            if (!s) return;
            bool receiving = type == msg::StartReceiving;
            if (s->is_receiving != receiving) {
                s->is_receiving = receiving;
                publish_file_update(ctx, *s,
                                    {{fi::TailBase, proto::tail_boolean(receiving)}});
            }
            if (receiving) dispatch_buffered(ctx, *s);
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
        case msg::GrantToAll:
            handle_server_request(ctx, type, ev, known.payload);
            return;
        default:
            return;
    }
}

void PersistenceServer::handle_update(Context& ctx, const sim::FrameEvent&,
                                      const WireValue& payload) {
    const WireValue& body = *payload.as_signed().inner;
    SocketFileAddr addr = SocketFileAddr::from_wire(body.field(0));
    uint64_t new_state = body.field(2).as_integer();
    auto changed = proto::changed_from_wire(body.field(3));

    StoredSocket* s = socket(addr.socket_id);
    if (!s) return;
    // the writer must hold the lock and advance the state by exactly one
    if (!s->lock.holder) {
        ctx.note("update_rejected_not_locked", {{"socket", addr.socket_id}});
        return;
    }
    bool resync = resyncing_.count(addr.socket_id) != 0;
    if (new_state <= s->vector_state) return;  // stale duplicate
    if (new_state != s->vector_state + 1 && !resync) {
        ctx.note("update_version_gap",
                 {{"socket", addr.socket_id}, {"have", s->vector_state}, {"got", new_state}});
        // pull the missing states (or a full state) from the overlay cache
        resyncing_.insert(addr.socket_id);
        proto::RangeSubscription rs;
        rs.entries.push_back({{0, int64_t{1} << 40}, s->vector_state});
        WireValue sub = WireValue::record({
            addr.to_wire(),
            WireValue::variant(1, rs.to_wire()),
            WireValue::variant(0),
        });
        send_up(ctx, msg::ChangeSubscription, sub, addr.com_address, addr.socket_id);
        return;
    }
    if (resync && new_state != s->vector_state + 1) {
        // the catch-up arrived as a full state; replace our contents
        s->vector_contents.clear();
        s->history.clear();
    }
    resyncing_.erase(addr.socket_id);
    for (const auto& el : changed) {
        if (el.data.empty()) s->vector_contents.erase(el.index);
        else s->vector_contents[el.index] = el.data;
    }
    s->history[new_state] = changed;
    s->vector_state = new_state;
    int64_t new_size = s->vector_contents.empty() ? 0 : s->vector_contents.rbegin()->first + 1;

    // durable: answer with a Commit naming this storage server
    WireValue commit = WireValue::record({
        WireValue::integer(new_state),
        [&] {
            proto::SocketRef server;
            server.id = static_cast<uint64_t>(config_.leaf_node) << 16 | (ctx.self() & 0xffff);
            return server.to_wire();
        }(),
    });
    send_up(ctx, msg::Commit, commit, addr.com_address, addr.socket_id);

    // the socket file mirrors size and state in its tail
    std::vector<ChangedElement> file_changed;
    file_changed.push_back({fi::TailBase, proto::tail_integer(static_cast<uint64_t>(new_size))});
    file_changed.push_back({fi::TailBase + 1, proto::tail_integer(new_state)});
    publish_file_update(ctx, *s, std::move(file_changed));
}

void PersistenceServer::handle_message(Context& ctx, const sim::FrameEvent&,
                                       const WireValue& payload) {
    auto verified = ident::verify_authenticated(providers(),
                                                reg().at(msg::Message).payload_schema->inner,
                                                payload);
    const WireValue& body = *payload.as_auth().inner;
    SocketFileAddr addr = SocketFileAddr::from_wire(body.field(0));
    Bytes data = body.field(1).as_raw();
    proto::SocketRef buffer = proto::SocketRef::from_wire(body.field(2));
    proto::SocketRef fallback = proto::SocketRef::from_wire(body.field(3));
    int64_t max_time = static_cast<int64_t>(body.field(4).as_integer());

    StoredSocket* sink = socket(addr.socket_id);
    if (!sink) return;
    if (!verified.ok) {
        respond(ctx, msg::MessageBufferResponse, result_value(0, false), addr);
        return;
    }
    // the network filters messages longer than the sink accepts
    if (sink->max_message_length >= 0 &&
        static_cast<int64_t>(data.size()) > sink->max_message_length) {
        respond(ctx, msg::MessageBufferResponse, result_value(0, false), addr);
        ctx.note("message_filtered_too_long", {{"socket", addr.socket_id}});
        return;
    }

    BufferedMessage m;
    m.data = std::move(data);
    m.sender = verified.signer;
    m.fallback = fallback;
    m.has_fallback = !fallback.contact_prefixes.empty();
    m.stored_at = ctx.now();
    m.deadline = max_time > 0 ? ctx.now() + max_time : 0;
    m.id = next_message_id_++;
    SimTime deadline = m.deadline;

    // durable home: the designated buffer socket, co-hosted on this server
    StoredSocket* buf = socket(buffer.id);
    if (buf) {
        buf->buffered.push_back(m);
        buf->resources_used += m.data.size();
        publish_file_update(ctx, *buf,
                            {{fi::TailBase, proto::tail_integer(buf->buffered.size())},
                             {fi::TailBase + 1, proto::tail_integer(buf->resources_used)}});
    }
    sink->buffered.push_back(std::move(m));
    sink->buffer_socket = buffer.id;
    // originator learns the message is stored for dispatching
    respond(ctx, msg::MessageBufferResponse, result_value(0, true), addr);

    if (deadline > 0)
        ctx.set_timer(deadline - ctx.now(), ++timer_seq_,
                      "expire:" + std::to_string(addr.socket_id));
    if (sink->is_receiving) dispatch_buffered(ctx, *sink);
}

void PersistenceServer::dispatch_buffered(Context& ctx, StoredSocket& sink) {
    auto pit = published_prefixes_.find(sink.record.socket_id);
    if (pit == published_prefixes_.end() || pit->second.empty()) return;
    uint64_t prefix = pit->second.front();
    ident::SingleIdentity pub =
        sink.record.pub_key.keys.empty() ? ident::SingleIdentity{} : sink.record.pub_key.keys[0];
    for (auto& m : sink.buffered) {
        if (m.delivered) continue;
        m.delivered = true;
        WireValue body = WireValue::record({
            SocketFileAddr{prefix, sink.record.socket_id, pub}.to_wire(),
            WireValue::raw(m.data),
            [&] {
                proto::SocketRef buffer;
                buffer.id = sink.buffer_socket;
                return buffer.to_wire();
            }(),
            m.fallback.to_wire(),
            WireValue::integer(0),
        });
        WireValue sealed = ident::seal_authenticated(providers(),
                                                     reg().at(msg::Message).payload_schema->inner,
                                                     body, config_.server_keys, "mock");
        send_up(ctx, msg::Message, sealed, prefix, sink.record.socket_id);
    }
}

void PersistenceServer::deliver_or_expire(Context& ctx, uint64_t sink_id) {
    StoredSocket* sink = socket(sink_id);
    if (!sink) return;
    auto now = ctx.now();
    for (auto it = sink->buffered.begin(); it != sink->buffered.end();) {
        if (it->deadline == 0 || it->deadline > now || it->delivered) {
            ++it;
            continue;
        }
        BufferedMessage expired = std::move(*it);
        it = sink->buffered.erase(it);
        StoredSocket* buf = socket(sink->buffer_socket);
        if (buf) {
            for (auto bit = buf->buffered.begin(); bit != buf->buffered.end(); ++bit) {
                if (bit->id == expired.id) {
                    buf->resources_used -= bit->data.size();
                    buf->buffered.erase(bit);
                    break;
                }
            }
            publish_file_update(ctx, *buf,
                                {{fi::TailBase, proto::tail_integer(buf->buffered.size())},
                                 {fi::TailBase + 1, proto::tail_integer(buf->resources_used)}});
        }
        ident::SingleIdentity pub = sink->record.pub_key.keys.empty()
                                        ? ident::SingleIdentity{}
                                        : sink->record.pub_key.keys[0];
        auto pit = published_prefixes_.find(sink_id);
        uint64_t prefix = pit != published_prefixes_.end() && !pit->second.empty()
                              ? pit->second.front()
                              : 0;
        if (expired.has_fallback && !expired.fallback.contact_prefixes.empty()) {
            // reroute to the fallback sink with no further fallback
            WireValue body = WireValue::record({
                SocketFileAddr{expired.fallback.contact_prefixes.front(), expired.fallback.id,
                               pub}
                    .to_wire(),
                WireValue::raw(expired.data),
                [&] {
                    proto::SocketRef none;
                    return none.to_wire();
                }(),
                [&] {
                    proto::SocketRef none;
                    return none.to_wire();
                }(),
                WireValue::integer(0),
            });
            WireValue sealed = ident::seal_authenticated(
                providers(), reg().at(msg::Message).payload_schema->inner, body,
                config_.server_keys, "mock");
            send_up(ctx, msg::Message, sealed, expired.fallback.contact_prefixes.front(),
                    expired.fallback.id);
            ctx.note("message_rerouted_fallback", {{"socket", sink_id}});
        } else {
            // no fallback: expire with a notification to the sender
            WireValue notice = WireValue::record({WireValue::integer(expired.id)});
            respond(ctx, msg::MessageExpired, notice,
                    SocketFileAddr{prefix, sink_id, pub});
            ctx.note("message_expired", {{"socket", sink_id}});
        }
    }
}

void PersistenceServer::handle_new_root_container(Context& ctx, const sim::FrameEvent&,
                                                  const WireValue& payload) {
    auto verified = ident::verify_authenticated(
        providers(), reg().at(msg::NewRootContainer).payload_schema->inner, payload);
    const WireValue& body = *payload.as_auth().inner;
    std::string name = body.field(0).as_text();
    uint32_t min_replicas = static_cast<uint32_t>(body.field(2).as_integer());
    uint32_t max_replicas = static_cast<uint32_t>(body.field(3).as_integer());

    const auto& ack_schema = reg().at(msg::NewRootContainerAck).payload_schema;
    auto nack = [&] {
        WireValue sealed = ident::seal_authenticated(providers(), ack_schema->inner,
                                                     WireValue::variant(0), config_.server_keys,
                                                     "mock");
        send_up(ctx, msg::NewRootContainerAck, sealed, std::nullopt, std::nullopt);
    };
    if (!verified.ok) {
        nack();
        return;
    }

    // second phase: a matching preliminary container becomes durable
    for (auto& [id, s] : sockets_) {
        if (s.name != name || s.container_id != 0 ||
            s.record.socket_type != wire::socket_type::Container)
            continue;
        if (s.preliminary) {
            s.preliminary = false;
            ctx.note("container_committed", {{"socket", id}});
        }
        proto::SocketRef ref;
        ref.id = id;
        ref.contact_prefixes = published_prefixes_.count(id) ? published_prefixes_[id]
                                                             : std::vector<uint64_t>{};
        WireValue sealed = ident::seal_authenticated(providers(), ack_schema->inner,
                                                     WireValue::variant(1, ref.to_wire()),
                                                     config_.server_keys, "mock");
        send_up(ctx, msg::NewRootContainerAck, sealed, std::nullopt, std::nullopt);
        return;
    }

    // first phase: preliminary container, reaped unless committed in time
    std::mt19937_64& rng = publish_rng_;
    StoredSocket container;
    container.name = name;
    container.record.socket_id = rng() >> 1;
    auto [identity, keys] = ident::generate_identity(rng, {"mock"});
    container.record.pub_key = identity;
    container.record.socket_type = wire::socket_type::Container;
    container.record.min_replicas = min_replicas;
    container.record.max_replicas = max_replicas;
    for (const auto& b : body.field(4).items())
        container.record.boundaries.push_back(b.as_text());
    container.resources_available = config_.capacity;
    container.access.mode = AccessVector::List;
    ident::Identity owner;
    owner.keys.push_back(verified.signer);
    container.access.grant(owner);
    container.preliminary = true;
    container.preliminary_at = ctx.now();
    container.min_replicas_setting = min_replicas;
    container.max_replicas_setting = max_replicas;

    uint64_t id = container.record.socket_id;
    proto::SocketRef ref = host_socket(ctx, std::move(container), rng);
    sockets_[id].preliminary = true;  // host_socket stores it durable by default
    sockets_[id].preliminary_at = ctx.now();
    WireValue sealed = ident::seal_authenticated(providers(), ack_schema->inner,
                                                 WireValue::variant(1, ref.to_wire()),
                                                 config_.server_keys, "mock");
    send_up(ctx, msg::NewRootContainerAck, sealed, std::nullopt, std::nullopt);
    ctx.note("container_preliminary", {{"socket", id}});
}

void PersistenceServer::handle_server_request(Context& ctx, uint32_t type,
                                              const sim::FrameEvent&,
                                              const WireValue& payload) {
    proto::ServerRequest request = proto::parse_server_request(type, payload);
    StoredSocket* s = socket(request.addr.socket_id);
    auto deny = [&](uint32_t response_type) {
        respond(ctx, response_type, result_value(request.request_id, false), request.addr);
    };
    auto ok = [&](uint32_t response_type) {
        respond(ctx, response_type, result_value(request.request_id, true), request.addr);
    };
    if (!request.signature_ok) {
        deny(msg::AccessRightResponse);
        return;
    }

    switch (type) {
        case msg::Lock: {
            if (!s) return deny(msg::AccessRightResponse);
            const auto& op = request.message.as_union();
            std::string client_id = request.client.method + ':' + to_hex(request.client.key);
            // union [FORCE, TRY, waitTime, RELEASE]
            std::vector<uint64_t> needed{op.index == 0 ? s->record.force_lock_right.id
                                                       : s->record.lock_right.id};
            if (!client_allowed(*s, needed, request.client)) return deny(msg::AccessRightResponse);
            auto set_holder = [&](const std::string& holder) {
                s->lock.holder = holder;
                s->record.lock_holder = holder;
                publish_file_update(
                    ctx, *s,
                    {{fi::LockState, proto::file_element_bytes(s->record, fi::LockState)}});
            };
            switch (op.index) {
                case 0:  // FORCE
                    lock_apply(s->lock.holder, LockOp::Force, client_id);
                    set_holder(client_id);
                    return ok(msg::AccessRightResponse);
                case 1:  // TRY
                    if (lock_apply(s->lock.holder, LockOp::Try, client_id)) {
                        set_holder(client_id);
                        return ok(msg::AccessRightResponse);
                    }
                    return deny(msg::AccessRightResponse);
                case 2: {  // waitTime: FIFO queue up to the bound
                    if (lock_apply(s->lock.holder, LockOp::Try, client_id)) {
                        set_holder(client_id);
                        return ok(msg::AccessRightResponse);
                    }
                    uint64_t wait = op.payload->as_integer();
                    LockState::Waiter w;
                    w.client_id = client_id;
                    w.request_id = request.request_id;
                    w.deadline = wait == 0 ? 0 : ctx.now() + static_cast<SimTime>(wait);
                    s->lock.queue.push_back(w);
                    if (wait != 0)
                        ctx.set_timer(static_cast<SimTime>(wait), ++timer_seq_,
                                      "lockwait:" + std::to_string(request.addr.socket_id));
                    return;  // response deferred
                }
                case 3:  // RELEASE
                    if (lock_apply(s->lock.holder, LockOp::Release, client_id)) {
                        s->record.lock_holder.reset();
                        publish_file_update(ctx, *s,
                                            {{fi::LockState,
                                              proto::file_element_bytes(s->record,
                                                                        fi::LockState)}});
                        // first waiter wins the freed lock
                        while (!s->lock.queue.empty()) {
                            LockState::Waiter w = s->lock.queue.front();
                            s->lock.queue.pop_front();
                            if (w.deadline != 0 && w.deadline < ctx.now()) continue;
                            set_holder(w.client_id);
                            respond(ctx, msg::AccessRightResponse,
                                    result_value(w.request_id, true), request.addr);
                            break;
                        }
                        return ok(msg::AccessRightResponse);
                    }
                    return deny(msg::AccessRightResponse);
            }
            return;
        }
        case msg::SetBoundaries: {
            if (!s) return deny(msg::AccessRightResponse);
            if (!client_allowed(*s, {s->record.change_boundaries_right.id}, request.client))
                return deny(msg::AccessRightResponse);
            bool remove_all = request.message.field(0).as_boolean();
            if (remove_all) s->record.boundaries.clear();
            for (const auto& b : request.message.field(1).items()) {
                auto& bounds = s->record.boundaries;
                bounds.erase(std::remove(bounds.begin(), bounds.end(), b.as_text()),
                             bounds.end());
            }
            for (const auto& b : request.message.field(2).items())
                s->record.boundaries.push_back(b.as_text());
            publish_file_update(ctx, *s,
                                {{fi::Boundaries,
                                  proto::file_element_bytes(s->record, fi::Boundaries)}});
            return ok(msg::AccessRightResponse);
        }
        case msg::CreateSocket: {
            if (!s) return deny(msg::ContainerOperationResponse);
            // container create: name rules, uniqueness, quota, owner grant
            std::string name = request.message.field(0).as_text();
            uint64_t quota = request.message.field(1).as_integer();
            ident::Identity owner = ident::identity_from_wire(request.message.field(2));
            size_t socket_type = request.message.field(3).as_union().index;

            const auto& ack_schema = reg().at(msg::CreateSocketAck).payload_schema;
            auto ack_with = [&](const WireValue& maybe_ref) {
                WireValue body = WireValue::record({
                    WireValue::integer(request.request_id),
                    maybe_ref,
                });
                WireValue sealed = ident::seal_authenticated(providers(), ack_schema->inner,
                                                             body, config_.server_keys, "mock");
                respond(ctx, msg::CreateSocketAck, sealed, request.addr);
            };
            if (name.empty() || name.size() > 1000 ||
                name.find('/') != std::string::npos ||
                s->children.count(name) != 0 ||
                !client_allowed(*s, {s->record.owner_role.id}, request.client)) {
                ack_with(WireValue::variant(0));
                return;
            }
            if (s->resources_used + quota > s->resources_available) {
                ack_with(WireValue::variant(0));
                ctx.note("quota_exceeded", {{"container", s->record.socket_id}});
                return;
            }
            s->resources_used += quota;

            StoredSocket child;
            child.name = name;
            child.container_id = s->record.socket_id;
            child.quota = quota;
            std::mt19937_64& rng = publish_rng_;
            child.record.socket_id = rng() >> 1;
            auto [identity, keys] = ident::generate_identity(rng, {"mock"});
            child.record.pub_key = identity;
            child.record.socket_type = socket_type;
            child.record.boundaries = s->record.boundaries;
            child.record.container.id = s->record.socket_id;
            child.access.mode = AccessVector::List;
            child.access.grant(owner);
            child.resources_available = quota;
            if (socket_type == wire::socket_type::Container) {
                child.min_replicas_setting = -1;
                child.max_replicas_setting = -1;
            }
            uint64_t child_id = child.record.socket_id;
            proto::SocketRef ref = host_socket(ctx, std::move(child), rng);
            s->children[name] = child_id;
            publish_file_update(ctx, *s, {});
            ack_with(WireValue::variant(1, ref.to_wire()));
            ctx.note("socket_created", {{"socket", child_id},
                                        {"container", s->record.socket_id},
                                        {"name", name}});
            return;
        }
        case msg::RemoveSocket: {
            if (!s) return deny(msg::ContainerOperationResponse);
            if (!client_allowed(*s, {s->record.owner_role.id}, request.client))
                return deny(msg::ContainerOperationResponse);
            const auto& which = request.message.as_union();
            std::vector<std::string> doomed;
            if (which.index == 0) {
                for (const auto& [name, id] : s->children) doomed.push_back(name);
            } else {
                doomed.push_back(which.payload->as_text());
            }
            for (const auto& name : doomed) {
                auto cit = s->children.find(name);
                if (cit == s->children.end()) continue;
                // removing a container removes its contents recursively
                std::deque<uint64_t> queue{cit->second};
                while (!queue.empty()) {
                    uint64_t id = queue.front();
                    queue.pop_front();
                    StoredSocket* victim = socket(id);
                    if (!victim) continue;
                    for (const auto& [cn, cid] : victim->children) queue.push_back(cid);
                    s->resources_used -= std::min(s->resources_used, victim->quota);
                    auto pit = published_prefixes_.find(id);
                    if (pit != published_prefixes_.end()) {
                        ident::SingleIdentity pub = victim->record.pub_key.keys.empty()
                                                        ? ident::SingleIdentity{}
                                                        : victim->record.pub_key.keys[0];
                        const auto& del_schema = reg().at(msg::DeleteSocketFile).payload_schema;
                        for (uint64_t prefix : pit->second) {
                            WireValue body = WireValue::record(
                                {SocketFileAddr{prefix, id, pub}.to_wire()});
                            WireValue sealed = ident::seal_signed(providers(),
                                                                  del_schema->inner, body,
                                                                  config_.server_keys, "mock");
                            send_up(ctx, msg::DeleteSocketFile, sealed, prefix, id);
                        }
                        published_prefixes_.erase(pit);
                    }
                    sockets_.erase(id);
                }
                s->children.erase(cit);
            }
            publish_file_update(ctx, *s, {});
            return ok(msg::ContainerOperationResponse);
        }
        case msg::SetMinReplicas:
        case msg::SetMaxReplicas: {
            if (!s) return deny(msg::ContainerOperationResponse);
            if (!client_allowed(*s, {s->record.owner_role.id}, request.client))
                return deny(msg::ContainerOperationResponse);
            int64_t value = static_cast<int64_t>(request.message.as_integer());
            if (value == static_cast<int64_t>(0xffffffff)) value = -1;  // NOVALUE on the wire
            if (type == msg::SetMinReplicas) s->min_replicas_setting = value;
            else s->max_replicas_setting = value;
            s->record.min_replicas = static_cast<uint32_t>(effective_min_replicas(*s));
            s->record.max_replicas = static_cast<uint32_t>(effective_max_replicas(*s));
            publish_file_update(ctx, *s,
                                {{fi::MinReplicas,
                                  proto::file_element_bytes(s->record, fi::MinReplicas)},
                                 {fi::MaxReplicas,
                                  proto::file_element_bytes(s->record, fi::MaxReplicas)}});
            return ok(msg::ContainerOperationResponse);
        }
        case msg::AddStorageBlock:
        case msg::RemoveStorageBlock:
        case msg::ChangeStorageBlockUser: {
            if (!s) return deny(msg::ContainerOperationResponse);
            if (!client_allowed(*s, {s->record.owner_role.id}, request.client))
                return deny(msg::ContainerOperationResponse);
            // single-server artifact: record the change in the socket file
            publish_file_update(ctx, *s, {});
            return ok(msg::ContainerOperationResponse);
        }
        case msg::SetQuota: {
            if (!s) return deny(msg::ContainerOperationResponse);
            if (!client_allowed(*s, {s->record.owner_role.id}, request.client))
                return deny(msg::ContainerOperationResponse);
            std::string name = request.message.field(0).as_text();
            uint64_t quota = request.message.field(1).as_integer();
            auto cit = s->children.find(name);
            if (cit == s->children.end()) return deny(msg::ContainerOperationResponse);
            StoredSocket* child = socket(cit->second);
            if (!child) return deny(msg::ContainerOperationResponse);
            uint64_t charge_delta = quota > child->quota ? quota - child->quota : 0;
            if (s->resources_used + charge_delta > s->resources_available)
                return deny(msg::ContainerOperationResponse);
            s->resources_used = s->resources_used - child->quota + quota;
            child->quota = quota;
            child->resources_available = quota;
            publish_file_update(ctx, *s, {});
            return ok(msg::ContainerOperationResponse);
        }
        case msg::SetMaximumMessageLength: {
            if (!s) return deny(msg::AccessRightResponse);
            if (!client_allowed(*s, {s->record.owner_role.id}, request.client))
                return deny(msg::AccessRightResponse);
            s->max_message_length = static_cast<int64_t>(request.message.as_integer());
            publish_file_update(ctx, *s, {});
            return ok(msg::AccessRightResponse);
        }
        case msg::ConsumeMessage: {
            if (!s) return deny(msg::MessageBufferResponse);
            // FIFO: the head of the sink's delivered queue is consumed
            if (s->buffered.empty()) return deny(msg::MessageBufferResponse);
            BufferedMessage consumed = std::move(s->buffered.front());
            s->buffered.pop_front();
            StoredSocket* buf = socket(s->buffer_socket);
            if (buf) {
                for (auto bit = buf->buffered.begin(); bit != buf->buffered.end(); ++bit) {
                    if (bit->id == consumed.id) {
                        buf->resources_used -= bit->data.size();
                        buf->buffered.erase(bit);
                        break;
                    }
                }
                publish_file_update(ctx, *buf,
                                    {{fi::TailBase, proto::tail_integer(buf->buffered.size())},
                                     {fi::TailBase + 1,
                                      proto::tail_integer(buf->resources_used)}});
            }
            return ok(msg::MessageBufferResponse);
        }
        case msg::ClearMessage: {
            if (!s) return deny(msg::MessageBufferResponse);
            const auto& which = request.message.as_union();
            if (which.index == 0) {
                for (const auto& m : s->buffered)
                    s->resources_used -= std::min(s->resources_used, (uint64_t)m.data.size());
                s->buffered.clear();
            } else if (which.payload) {
                uint64_t index = which.payload->as_integer();
                if (index < s->buffered.size())
                    s->buffered.erase(s->buffered.begin() + static_cast<int64_t>(index));
            }
            publish_file_update(ctx, *s,
                                {{fi::TailBase, proto::tail_integer(s->buffered.size())}});
            return ok(msg::MessageBufferResponse);
        }
        case msg::GrantTo:
        case msg::DenyFrom: {
            if (!s) return deny(msg::AccessRightResponse);
            if (!client_allowed(*s, {s->record.owner_role.id}, request.client))
                return deny(msg::AccessRightResponse);
            ident::Identity subject = ident::identity_from_wire(request.message);
            if (type == msg::GrantTo) s->access.grant(subject);
            else s->access.deny(subject);
            publish_file_update(ctx, *s, s->access.encode());
            return ok(msg::AccessRightResponse);
        }
        case msg::ClearRights: {
            if (!s) return deny(msg::AccessRightResponse);
            if (!client_allowed(*s, {s->record.owner_role.id}, request.client))
                return deny(msg::AccessRightResponse);
            s->access.granted.clear();
            s->access.groups.clear();
            s->access.mode = AccessVector::None;
            publish_file_update(ctx, *s, s->access.encode());
            return ok(msg::AccessRightResponse);
        }
        case msg::GrantToAll: {
            if (!s) return deny(msg::AccessRightResponse);
            if (!client_allowed(*s, {s->record.owner_role.id}, request.client))
                return deny(msg::AccessRightResponse);
            s->access.mode = AccessVector::GrantedAll;
            publish_file_update(ctx, *s, s->access.encode());
            return ok(msg::AccessRightResponse);
        }
        default:
            return;
    }
}

void PersistenceServer::on_timer(Context& ctx, const sim::TimerEvent& ev) {
    if (ev.tag == "publish_initial") {
        for (auto& [id, prefixes] : published_prefixes_) {
            StoredSocket* s = socket(id);
            if (s) publish_socket_file(ctx, *s, prefixes);
        }
        return;
    }
    if (ev.tag == "poll") {
        // poll the state of every published socket file
        for (const auto& [id, prefixes] : published_prefixes_) {
            StoredSocket* s = socket(id);
            if (!s || s->preliminary) continue;
            ident::SingleIdentity pub = s->record.pub_key.keys.empty()
                                            ? ident::SingleIdentity{}
                                            : s->record.pub_key.keys[0];
            for (uint64_t prefix : prefixes) {
                wire::ValueList loc_items;
                for (const auto& part : my_location())
                    loc_items.push_back(WireValue::text(part));
                WireValue check = WireValue::record({
                    WireValue::integer(next_poll_request_++),
                    WireValue::list(loc_items),
                    SocketFileAddr{prefix, id, pub}.to_wire(),
                });
                send_up(ctx, msg::CheckSocketFile, check, prefix, id);
            }
        }
        ctx.set_timer(config_.poll_interval_ms, ++timer_seq_, "poll");
        return;
    }
    if (ev.tag == "reap") {
        // abandoned two-phase creations disappear
        std::vector<uint64_t> doomed;
        for (const auto& [id, s] : sockets_) {
            if (s.preliminary && ctx.now() - s.preliminary_at >= config_.reaper_timeout_ms)
                doomed.push_back(id);
        }
        for (uint64_t id : doomed) {
            sockets_.erase(id);
            published_prefixes_.erase(id);
            ctx.note("preliminary_reaped", {{"socket", id}});
        }
        ctx.set_timer(config_.reaper_timeout_ms, ++timer_seq_, "reap");
        return;
    }
    if (ev.tag.rfind("expire:", 0) == 0) {
        deliver_or_expire(ctx, std::stoull(ev.tag.substr(7)));
        return;
    }
    if (ev.tag.rfind("lockwait:", 0) == 0) {
        uint64_t socket_id = std::stoull(ev.tag.substr(9));
        StoredSocket* s = socket(socket_id);
        if (!s) return;
        // expired waiters give up with an access response
        auto now = ctx.now();
        for (auto it = s->lock.queue.begin(); it != s->lock.queue.end();) {
            if (it->deadline != 0 && it->deadline <= now) {
                ident::SingleIdentity pub = s->record.pub_key.keys.empty()
                                                ? ident::SingleIdentity{}
                                                : s->record.pub_key.keys[0];
                auto pit = published_prefixes_.find(socket_id);
                uint64_t prefix = pit != published_prefixes_.end() && !pit->second.empty()
                                      ? pit->second.front()
                                      : 0;
                respond(ctx, msg::AccessRightResponse, result_value(it->request_id, false),
                        SocketFileAddr{prefix, socket_id, pub});
                it = s->lock.queue.erase(it);
            } else {
                ++it;
            }
        }
        return;
    }
}

}  // namespace hca::ps
