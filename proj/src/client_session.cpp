#include "hca/client/session.hpp"

#include <algorithm>

namespace hca::client {

using proto::ChangedElement;
using proto::RangeSet;
using proto::SocketFileAddr;
using sim::Context;
using wire::MessageRegistry;
using wire::WireValue;
namespace msg = wire::msg;
namespace fi = proto::file_index;

namespace {
const MessageRegistry& reg() { return MessageRegistry::instance(); }
const ident::ProviderRegistry& providers() { return ident::ProviderRegistry::default_instance(); }

// The whole-vector subscription range scenarios use for "all".
const proto::IndexRange kAllRange{0, int64_t{1} << 40};
}  // namespace

void SparseVector::add(int64_t index, Bytes data) {
    if (index >= size_) {
        // elements between the old end and the new index are empty
        cells_[index] = std::move(data);
        size_ = index + 1;
        return;
    }
    std::map<int64_t, Bytes> shifted;
    for (auto& [i, d] : cells_) shifted[i >= index ? i + 1 : i] = std::move(d);
    cells_ = std::move(shifted);
    cells_[index] = std::move(data);
    size_ += 1;
}

void SparseVector::append(Bytes data) { add(size_, std::move(data)); }

void SparseVector::remove(int64_t index) {
    if (index < 0 || index >= size_) throw std::out_of_range("vector index");
    std::map<int64_t, Bytes> shifted;
    for (auto& [i, d] : cells_) {
        if (i == index) continue;
        shifted[i > index ? i - 1 : i] = std::move(d);
    }
    cells_ = std::move(shifted);
    size_ -= 1;
}

void SparseVector::remove_all() {
    cells_.clear();
    size_ = 0;
}

void SparseVector::set(int64_t index, Bytes data) {
    cells_[index] = std::move(data);
    if (index >= size_) size_ = index + 1;
}

void SparseVector::set_size(int64_t new_size) {
    for (auto it = cells_.begin(); it != cells_.end();)
        it = it->first >= new_size ? cells_.erase(it) : ++it;
    size_ = new_size;
}

const Bytes* SparseVector::get(int64_t index) const {
    auto it = cells_.find(index);
    return it == cells_.end() ? nullptr : &it->second;
}

std::vector<ChangedElement> SparseVector::diff_from(const SparseVector& base) const {
    std::vector<ChangedElement> out;
    for (const auto& [i, d] : cells_) {
        const Bytes* old = base.get(i);
        if (!old || *old != d) out.push_back({i, d});
    }
    for (const auto& [i, d] : base.cells()) {
        if (!get(i)) out.push_back({i, {}});  // emptied or truncated cell
    }
    return out;
}

void SparseVector::apply(const std::vector<ChangedElement>& changed) {
    for (const auto& el : changed) {
        if (el.data.empty()) {
            cells_.erase(el.index);
            continue;
        }
        cells_[el.index] = el.data;
        if (el.index >= size_) size_ = el.index + 1;
    }
}

ClientSession::ClientSession(SessionConfig config) : config_(std::move(config)) {
    refs_ = config_.initial_refs;
}

const ClientSession::Proxy* ClientSession::proxy(const std::string& alias) const {
    auto it = proxies_.find(alias);
    return it == proxies_.end() ? nullptr : &it->second;
}

void ClientSession::on_start(Context& ctx) {
    std::sort(config_.script.begin(), config_.script.end(),
              [](const Command& a, const Command& b) { return a.at < b.at; });
    for (size_t i = 0; i < config_.script.size(); ++i)
        ctx.set_timer(config_.script[i].at, 1000000 + i, "cmd:" + std::to_string(i));
}

void ClientSession::on_crash() {
    proxies_.clear();
    request_alias_.clear();
    request_op_.clear();
}

void ClientSession::send_to_leaf(Context& ctx, uint32_t type_id, const WireValue& payload,
                                 std::optional<uint64_t> prefix,
                                 std::optional<uint64_t> socket_id) {
    Bytes frame = wire::frame_message(reg().at(type_id), counter_++, payload, nullptr);
    sim::FrameMeta meta;
    meta.type_id = type_id;
    meta.prefix = prefix;
    meta.socket_id = socket_id;
    meta.journey = ctx.fresh_journey();
    meta.hop = 1;
    ctx.send(config_.leaf_node, std::move(frame), std::move(meta));
}

std::string ClientSession::alias_for_socket(uint64_t socket_id) const {
    for (const auto& [alias, p] : proxies_)
        if (p.ref.id == socket_id) return alias;
    return {};
}

ident::PrincipalKeys ClientSession::socket_principal(const Proxy& p) const {
    // the writer signs updates as the socket; the mock scheme lets the
    // public identity reconstruct the principal
    return ident::mock_principal(p.file.pub_key);
}

// ----------------------------------------------------------------- commands

void ClientSession::on_timer(Context& ctx, const sim::TimerEvent& ev) {
    if (ev.tag.rfind("cmd:", 0) == 0) {
        size_t index = std::stoul(ev.tag.substr(4));
        if (index < config_.script.size()) run_command(ctx, config_.script[index]);
        return;
    }
    if (ev.tag.rfind("opento:", 0) == 0) {
        std::string alias = ev.tag.substr(7);
        auto it = proxies_.find(alias);
        if (it != proxies_.end() && it->second.open_pending) {
            // no answer at all distinguishes a connection problem from a
            // dangling reference
            it->second.open_pending = false;
            ctx.note("open_unreachable", {{"session", config_.name}, {"ref", alias}});
        }
        return;
    }
    if (ev.tag.rfind("reconnect:", 0) == 0) {
        std::string alias = ev.tag.substr(10);
        auto it = proxies_.find(alias);
        if (it == proxies_.end()) return;
        Proxy& p = it->second;
        p.epoch += 1;
        p.queue.clear();
        p.last_enqueued.reset();
        p.has_active = false;
        p.push_connected = true;
        subscribe(ctx, alias, p.window, 0);
        ctx.note("reader_reconnected",
                 {{"session", config_.name}, {"ref", alias}, {"epoch", p.epoch}});
        return;
    }
}

void ClientSession::run_command(Context& ctx, const Command& cmd) {
    const auto& args = cmd.args;
    if (cmd.op == "open") {
        Proxy& p = proxies_[cmd.target];
        auto rit = refs_.find(cmd.target);
        if (rit == refs_.end()) {
            ctx.note("open_no_ref", {{"session", config_.name}, {"ref", cmd.target}});
            return;
        }
        p.ref = rit->second;
        p.try_index = 0;
        p.open_pending = true;
        p.dangling = false;
        try_open(ctx, cmd.target);
        ctx.set_timer(config_.open_timeout_ms, ++timer_seq_, "opento:" + cmd.target);
        return;
    }
    auto it = proxies_.find(cmd.target);
    if (it == proxies_.end() && cmd.op != "share_ref" && cmd.op != "create_root_container") {
        ctx.note("command_no_proxy", {{"session", config_.name}, {"op", cmd.op}});
        return;
    }

    if (cmd.op == "lock") {
        Proxy& p = it->second;
        std::string mode = args.value("mode", "try");
        WireValue op =
            mode == "force"   ? WireValue::variant(0)
            : mode == "wait"  ? WireValue::variant(2, WireValue::integer(args.value("wait_ms", 0)))
            : mode == "release" ? WireValue::variant(3)
                                : WireValue::variant(1);
        uint64_t request_id = next_request_++;
        request_alias_[request_id] = cmd.target;
        request_op_[request_id] = "lock:" + mode;
        WireValue payload = proto::make_server_request(msg::Lock, p.addr, request_id, op,
                                                       config_.keys);
        send_to_leaf(ctx, msg::Lock, payload, p.addr.com_address, p.addr.socket_id);
        return;
    }
    if (cmd.op == "subscribe") {
        Proxy& p = it->second;
        RangeSet window;
        if (args.value("all", false)) {
            window.add(kAllRange);
        } else if (args.contains("ranges")) {
            for (const auto& r : args["ranges"])
                window.add({r[0].get<int64_t>(), r[1].get<int64_t>()});
        }
        bool grew = !p.window.covers(window) || p.window.empty();
        if (grew && !p.queue.empty()) {
            // growing the window invalidates loaded states
            p.queue.clear();
            p.last_enqueued.reset();
            ctx.note("loaded_states_invalidated", {{"session", config_.name},
                                                   {"ref", cmd.target}});
        }
        p.window.merge(window);
        p.push_connected = true;
        uint64_t has = p.last_enqueued ? *p.last_enqueued
                       : p.has_active  ? p.active_state
                                       : 0;
        subscribe(ctx, cmd.target, p.window, has);
        return;
    }
    if (cmd.op == "unsubscribe") {
        Proxy& p = it->second;
        WireValue body = WireValue::record({
            p.addr.to_wire(),
            WireValue::variant(1, WireValue::list({})),
            WireValue::variant(0),  // remove ALL
        });
        send_to_leaf(ctx, msg::ChangeSubscription, body, p.addr.com_address, p.addr.socket_id);
        p.window.clear();
        p.push_connected = false;
        return;
    }
    if (cmd.op == "edit") {
        Proxy& p = it->second;
        for (const auto& e : args["edits"]) {
            std::string kind = e.value("op", "set");
            Bytes data = e.contains("data") ? to_bytes(e["data"].get<std::string>()) : Bytes{};
            try {
                if (kind == "add") p.pending.add(e["index"].get<int64_t>(), std::move(data));
                else if (kind == "append") p.pending.append(std::move(data));
                else if (kind == "remove") p.pending.remove(e["index"].get<int64_t>());
                else if (kind == "remove_all") p.pending.remove_all();
                else if (kind == "set") p.pending.set(e["index"].get<int64_t>(), std::move(data));
                else if (kind == "set_size") p.pending.set_size(e["size"].get<int64_t>());
            } catch (const std::out_of_range&) {
                ctx.note("edit_out_of_bound", {{"session", config_.name}, {"ref", cmd.target}});
            }
        }
        return;
    }
    if (cmd.op == "commit") {
        Proxy& p = it->second;
        if (!p.lock_held) {
            ctx.note("commit_no_lock", {{"session", config_.name}, {"ref", cmd.target}});
            return;
        }
        auto changed = p.pending.diff_from(p.model);
        if (changed.empty()) {
            ctx.note("commit_empty", {{"session", config_.name}, {"ref", cmd.target}});
            return;
        }
        uint64_t new_state = p.next_commit_state;
        p.next_commit_state += 1;
        WireValue body = WireValue::record({
            p.addr.to_wire(),
            WireValue::integer(p.addr.com_address),
            WireValue::integer(new_state),
            proto::changed_to_wire(changed),
        });
        WireValue sealed = ident::seal_signed(providers(),
                                              reg().at(msg::Update).payload_schema->inner, body,
                                              socket_principal(p), p.addr.pub_key.method);
        send_to_leaf(ctx, msg::Update, sealed, p.addr.com_address, p.addr.socket_id);
        p.model = p.pending;
        ctx.note("commit_sent", {{"session", config_.name},
                                 {"ref", cmd.target},
                                 {"state", new_state}});
        return;
    }
    if (cmd.op == "next_state" || cmd.op == "next_volatile_state") {
        pop_state(ctx, cmd.target, it->second, cmd.op == "next_volatile_state");
        return;
    }
    if (cmd.op == "snapshot") {
        Proxy& p = it->second;
        send_to_leaf(ctx, msg::Snapshot, p.addr.to_wire(), p.addr.com_address,
                     p.addr.socket_id);
        return;
    }
    if (cmd.op == "send_message") {
        Proxy& p = it->second;
        proto::SocketRef buffer;
        if (args.contains("buffer") && refs_.count(args["buffer"].get<std::string>()))
            buffer = refs_[args["buffer"].get<std::string>()];
        proto::SocketRef fallback;
        if (args.contains("fallback") && refs_.count(args["fallback"].get<std::string>()))
            fallback = refs_[args["fallback"].get<std::string>()];
        WireValue body = WireValue::record({
            p.addr.to_wire(),
            WireValue::raw(to_bytes(args.value("data", std::string{}))),
            buffer.to_wire(),
            fallback.to_wire(),
            WireValue::integer(args.value("max_time_ms", 0)),
        });
        WireValue sealed = ident::seal_authenticated(providers(),
                                                     reg().at(msg::Message).payload_schema->inner,
                                                     body, config_.keys, "mock");
        send_to_leaf(ctx, msg::Message, sealed, p.addr.com_address, p.addr.socket_id);
        return;
    }
    if (cmd.op == "start_receiving" || cmd.op == "stop_receiving") {
        Proxy& p = it->second;
        bool start = cmd.op == "start_receiving";
        if (start && !p.lock_held) {
            ctx.note("receive_no_lock", {{"session", config_.name}, {"ref", cmd.target}});
            return;
        }
        uint32_t type = start ? msg::StartReceiving : msg::StopReceiving;
        WireValue sealed = ident::seal_authenticated(providers(),
                                                     reg().at(type).payload_schema->inner,
                                                     p.addr.to_wire(), config_.keys, "mock");
        send_to_leaf(ctx, type, sealed, p.addr.com_address, p.addr.socket_id);
        p.receiving = start;
        if (start) {
            // the delivery tree for dispatched messages is the content stream
            p.window.add(kAllRange);
            subscribe(ctx, cmd.target, p.window, 0);
        }
        return;
    }
    if (cmd.op == "consume") {
        Proxy& p = it->second;
        uint64_t request_id = next_request_++;
        request_alias_[request_id] = cmd.target;
        request_op_[request_id] = "consume";
        WireValue payload = proto::make_server_request(msg::ConsumeMessage, p.addr, request_id,
                                                       WireValue::record({}), config_.keys);
        send_to_leaf(ctx, msg::ConsumeMessage, payload, p.addr.com_address, p.addr.socket_id);
        return;
    }
    if (cmd.op == "create_socket") {
        Proxy& p = it->second;  // container proxy
        uint64_t request_id = next_request_++;
        request_alias_[request_id] = args.value("alias", cmd.target + "/child");
        request_op_[request_id] = "create_socket";
        size_t type_index = wire::socket_type::SharedVector;
        std::string type_name = args.value("type", "shared_vector");
        if (type_name == "message_sink") type_index = wire::socket_type::MessageSink;
        if (type_name == "message_buffer") type_index = wire::socket_type::MessageBuffer;
        if (type_name == "container") type_index = wire::socket_type::Container;
        if (type_name == "storage_block") type_index = wire::socket_type::StorageBlock;
        if (type_name == "role") type_index = wire::socket_type::Role;
        if (type_name == "group") type_index = wire::socket_type::Group;
        WireValue message = WireValue::record({
            WireValue::text(args.value("name", std::string{"socket"})),
            WireValue::integer(args.value("quota", 1024)),
            ident::identity_to_wire(config_.identity),
            WireValue::variant(type_index),
        });
        WireValue payload = proto::make_server_request(msg::CreateSocket, p.addr, request_id,
                                                       message, config_.keys);
        send_to_leaf(ctx, msg::CreateSocket, payload, p.addr.com_address, p.addr.socket_id);
        return;
    }
    if (cmd.op == "grant" || cmd.op == "deny" || cmd.op == "clear_rights" ||
        cmd.op == "grant_all") {
        Proxy& p = it->second;
        uint64_t request_id = next_request_++;
        request_alias_[request_id] = cmd.target;
        request_op_[request_id] = cmd.op;
        uint32_t type = cmd.op == "grant"   ? msg::GrantTo
                        : cmd.op == "deny"  ? msg::DenyFrom
                        : cmd.op == "clear_rights" ? msg::ClearRights
                                             : msg::GrantToAll;
        WireValue message = WireValue::record({});
        if (type == msg::GrantTo || type == msg::DenyFrom) {
            ident::Identity subject;
            subject.keys.push_back(
                {args.value("method", "mock"), from_hex(args.value("key", std::string{}))});
            message = ident::identity_to_wire(subject);
        }
        WireValue payload = proto::make_server_request(type, p.addr, request_id, message,
                                                       config_.keys);
        send_to_leaf(ctx, type, payload, p.addr.com_address, p.addr.socket_id);
        return;
    }
    if (cmd.op == "set_max_message_length") {
        Proxy& p = it->second;
        uint64_t request_id = next_request_++;
        request_alias_[request_id] = cmd.target;
        request_op_[request_id] = cmd.op;
        WireValue payload = proto::make_server_request(
            msg::SetMaximumMessageLength, p.addr, request_id,
            WireValue::integer(args.value("length", 0)), config_.keys);
        send_to_leaf(ctx, msg::SetMaximumMessageLength, payload, p.addr.com_address,
                     p.addr.socket_id);
        return;
    }
    ctx.note("unknown_command", {{"session", config_.name}, {"op", cmd.op}});
}

void ClientSession::try_open(Context& ctx, const std::string& alias) {
    Proxy& p = proxies_[alias];
    if (p.try_index >= p.ref.contact_prefixes.size()) {
        p.open_pending = false;
        p.dangling = true;
        ctx.note("open_dangling", {{"session", config_.name}, {"ref", alias}});
        return;
    }
    p.addr.com_address = p.ref.contact_prefixes[p.try_index];
    p.addr.socket_id = p.ref.id;
    // general block plus the type tail; the pub key is learned from cell 0
    proto::RangeSubscription rs;
    rs.entries.push_back({{0, 17}, 0});
    rs.entries.push_back({{fi::TailBase, fi::TailBase + 8}, 0});
    WireValue body = WireValue::record({p.addr.to_wire(), rs.to_wire()});
    send_to_leaf(ctx, msg::AddtoSubscription, body, p.addr.com_address, p.addr.socket_id);
}

void ClientSession::subscribe(Context& ctx, const std::string& alias, const RangeSet& window,
                              uint64_t has_version) {
    Proxy& p = proxies_[alias];
    proto::RangeSubscription rs;
    if (window.covers_all()) {
        rs.entries.push_back({kAllRange, has_version});
    } else {
        for (const auto& r : window.ranges()) rs.entries.push_back({r, has_version});
    }
    WireValue body = WireValue::record({
        p.addr.to_wire(),
        WireValue::variant(1, rs.to_wire()),
        WireValue::variant(0),
    });
    send_to_leaf(ctx, msg::ChangeSubscription, body, p.addr.com_address, p.addr.socket_id);
}

// ------------------------------------------------------------------ frames

void ClientSession::on_frame(Context& ctx, const sim::FrameEvent& ev) {
    wire::ParsedFrame parsed;
    try {
        parsed = wire::parse_frame(reg(), ev.bytes, nullptr);
    } catch (const std::exception& e) {
        ctx.note("frame_dropped", {{"session", config_.name}, {"error", e.what()}});
        return;
    }
    if (std::holds_alternative<wire::UnknownType>(parsed)) return;
    const auto& known = std::get<wire::KnownMessage>(parsed);
    uint32_t type = known.descriptor->type_id;

    switch (type) {
        case msg::SocketFileUpdate: {
            const WireValue& body = *known.payload.as_signed().inner;
            SocketFileAddr addr = SocketFileAddr::from_wire(body.field(0));
            uint64_t to_version = body.field(2).as_integer();
            auto changed = proto::changed_from_wire(body.field(3));
            std::string alias = alias_for_socket(addr.socket_id);
            if (alias.empty()) return;
            Proxy& p = proxies_[alias];
            if (to_version <= p.file_version && p.open_ok) return;
            for (const auto& el : changed)
                if (el.index <= fi::LockState)
                    proto::apply_file_element(p.file, el.index, el.data);
            p.file_version = to_version;
            if (p.open_pending) {
                p.open_pending = false;
                p.open_ok = true;
                if (const auto* preferred = providers().preferred(p.file.pub_key))
                    p.addr.pub_key = *preferred;
                ctx.note("open_ok", {{"session", config_.name},
                                     {"ref", alias},
                                     {"socket", addr.socket_id},
                                     {"type", p.file.socket_type}});
            }
            return;
        }
        case msg::SubscriptionError: {
            uint64_t socket_id = known.payload.field(0).as_integer();
            std::string alias = alias_for_socket(socket_id);
            if (alias.empty()) return;
            Proxy& p = proxies_[alias];
            if (p.open_pending) {
                // this contact has no file; try the next one
                p.try_index += 1;
                try_open(ctx, alias);
                return;
            }
            if (p.push_connected) disconnect_push(ctx, alias, p, "subscription_error");
            return;
        }
        case msg::Update: {
            const WireValue& body = *known.payload.as_signed().inner;
            SocketFileAddr addr = SocketFileAddr::from_wire(body.field(0));
            uint64_t new_state = body.field(2).as_integer();
            auto changed = proto::changed_from_wire(body.field(3));
            std::string alias = alias_for_socket(addr.socket_id);
            if (alias.empty()) return;
            Proxy& p = proxies_[alias];
            bool snapshot_response = ev.meta.context == 1;
            uint64_t expected = p.last_enqueued ? *p.last_enqueued + 1
                               : p.has_active   ? p.active_state + 1
                                                : new_state;
            if (p.last_enqueued && new_state <= *p.last_enqueued) return;  // duplicate
            if (snapshot_response) {
                enqueue_state(ctx, alias, p, new_state, std::move(changed), true);
                ctx.note("snapshot_state", {{"session", config_.name},
                                            {"ref", alias},
                                            {"state", new_state}});
                return;
            }
            bool baseline = !p.last_enqueued && !p.has_active;
            if (!baseline && new_state != expected) {
                // push guarantees in-order, gapless states; a jump means the
                // connection broke somewhere upstream
                disconnect_push(ctx, alias, p, "state_gap");
                return;
            }
            enqueue_state(ctx, alias, p, new_state, std::move(changed), baseline);
            return;
        }
        case msg::Commit: {
            if (!ev.meta.socket_id) return;
            std::string alias = alias_for_socket(*ev.meta.socket_id);
            if (alias.empty()) return;
            Proxy& p = proxies_[alias];
            uint64_t state = known.payload.field(0).as_integer();
            proto::SocketRef server = proto::SocketRef::from_wire(known.payload.field(1));
            p.commits[state].insert(std::to_string(server.id));
            size_t quorum = std::max<uint32_t>(1, p.file.min_replicas);
            if (p.commits[state].size() == quorum)
                ctx.note("state_committed", {{"session", config_.name},
                                             {"ref", alias},
                                             {"state", state}});
            return;
        }
        case msg::Message: {
            const WireValue& body = *known.payload.as_auth().inner;
            SocketFileAddr addr = SocketFileAddr::from_wire(body.field(0));
            std::string alias = alias_for_socket(addr.socket_id);
            if (alias.empty()) return;
            Proxy& p = proxies_[alias];
            if (!p.receiving) return;  // buffered upstream until we receive
            p.receive_buffer.push_back(body.field(1).as_raw());
            ctx.note("message_received", {{"session", config_.name},
                                          {"ref", alias},
                                          {"size", body.field(1).as_raw().size()},
                                          {"count", p.receive_buffer.size()}});
            return;
        }
        case msg::MessageBufferResponse: {
            uint64_t request_id = known.payload.field(0).as_integer();
            bool success = known.payload.field(1).as_union().index == 0;
            auto rit = request_alias_.find(request_id);
            if (rit != request_alias_.end() && request_op_[request_id] == "consume") {
                Proxy& p = proxies_[rit->second];
                if (success && !p.receive_buffer.empty()) p.receive_buffer.pop_front();
                ctx.note("message_consumed", {{"session", config_.name},
                                              {"ref", rit->second},
                                              {"ok", success}});
                request_alias_.erase(request_id);
                request_op_.erase(request_id);
                return;
            }
            ctx.note(success ? "message_stored" : "message_rejected",
                     {{"session", config_.name}});
            return;
        }
        case msg::MessageExpired: {
            ctx.note("message_expired_notice", {{"session", config_.name}});
            return;
        }
        case msg::AccessRightResponse: {
            uint64_t request_id = known.payload.field(0).as_integer();
            bool success = known.payload.field(1).as_union().index == 0;
            auto rit = request_alias_.find(request_id);
            std::string alias = rit == request_alias_.end() ? std::string{} : rit->second;
            std::string op = request_op_.count(request_id) ? request_op_[request_id] : "";
            if (!alias.empty() && op.rfind("lock", 0) == 0) {
                Proxy& p = proxies_[alias];
                if (op == "lock:release") {
                    if (success) p.lock_held = false;
                } else {
                    p.lock_held = success;
                }
                ctx.note(success ? "lock_ok" : "lock_denied",
                         {{"session", config_.name}, {"ref", alias}, {"op", op}});
            } else {
                ctx.note(success ? "request_ok" : "request_denied",
                         {{"session", config_.name}, {"op", op}});
            }
            request_alias_.erase(request_id);
            request_op_.erase(request_id);
            return;
        }
        case msg::ContainerOperationResponse: {
            uint64_t request_id = known.payload.field(0).as_integer();
            bool success = known.payload.field(1).as_union().index == 0;
            ctx.note(success ? "container_op_ok" : "container_op_denied",
                     {{"session", config_.name},
                      {"op", request_op_.count(request_id) ? request_op_[request_id] : ""}});
            request_alias_.erase(request_id);
            request_op_.erase(request_id);
            return;
        }
        case msg::CreateSocketAck: {
            const WireValue& body = *known.payload.as_auth().inner;
            uint64_t request_id = body.field(0).as_integer();
            const auto& maybe_ref = body.field(1).as_union();
            auto rit = request_alias_.find(request_id);
            std::string alias = rit == request_alias_.end() ? "socket" : rit->second;
            if (maybe_ref.index == 1) {
                proto::SocketRef ref = proto::SocketRef::from_wire(*maybe_ref.payload);
                refs_[alias] = ref;
                ctx.note("socket_created", {{"session", config_.name},
                                            {"ref", alias},
                                            {"socket", ref.id}});
            } else {
                ctx.note("socket_create_failed", {{"session", config_.name}, {"ref", alias}});
            }
            request_alias_.erase(request_id);
            request_op_.erase(request_id);
            return;
        }
        default:
            return;
    }
}

void ClientSession::on_gift(Context& ctx, const sim::GiftEvent& ev) {
    // a reference arriving by some external channel
    refs_[ev.tag] = proto::deserialize_reference(ev.payload);
    ctx.note("ref_received", {{"session", config_.name}, {"ref", ev.tag}});
}

void ClientSession::enqueue_state(Context& ctx, const std::string& alias, Proxy& p,
                                  uint64_t state, std::vector<ChangedElement> changed,
                                  bool full) {
    if (p.queue.size() >= config_.reader_queue_capacity) {
        disconnect_push(ctx, alias, p, "buffer_overflow");
        return;
    }
    p.queue.push_back({state, std::move(changed), full});
    p.last_enqueued = state;
    if (config_.auto_next_state) pop_state(ctx, alias, p, true);
}

void ClientSession::pop_state(Context& ctx, const std::string& alias, Proxy& p,
                              bool volatile_ok) {
    if (p.queue.empty()) {
        ctx.note("no_state_available", {{"session", config_.name}, {"ref", alias}});
        return;
    }
    const auto& head = p.queue.front();
    if (!volatile_ok) {
        size_t quorum = std::max<uint32_t>(1, p.file.min_replicas);
        if (p.commits[head.state].size() < quorum) {
            ctx.note("state_not_durable_yet", {{"session", config_.name},
                                               {"ref", alias},
                                               {"state", head.state}});
            return;
        }
    }
    Proxy::Loaded loaded = std::move(p.queue.front());
    p.queue.pop_front();
    if (loaded.full) {
        p.model = SparseVector{};
    }
    p.model.apply(loaded.changed);
    p.active_state = loaded.state;
    p.has_active = true;
    nlohmann::json changed_indices = nlohmann::json::array();
    for (const auto& el : loaded.changed) changed_indices.push_back(el.index);
    ctx.note("state_delivered", {{"session", config_.name},
                                 {"ref", alias},
                                 {"state", loaded.state},
                                 {"epoch", p.epoch},
                                 {"modified", changed_indices}});
}

void ClientSession::disconnect_push(Context& ctx, const std::string& alias, Proxy& p,
                                    const std::string& reason) {
    if (!p.push_connected) return;
    p.push_connected = false;
    p.queue.clear();
    p.last_enqueued.reset();
    ctx.note("reader_disconnected", {{"session", config_.name},
                                     {"ref", alias},
                                     {"reason", reason},
                                     {"epoch", p.epoch}});
    if (config_.auto_reconnect)
        ctx.set_timer(config_.reconnect_delay_ms, ++timer_seq_, "reconnect:" + alias);
}

}  // namespace hca::client
