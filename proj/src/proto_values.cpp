#include "hca/proto/values.hpp"
#include "hca/proto/socket_file.hpp"

#include <algorithm>

namespace hca::proto {

using wire::MessageRegistry;
using wire::WireValue;

namespace {
const wire::CommonSchemas& c() { return MessageRegistry::instance().common(); }
}  // namespace

WireValue NetAddress::to_wire() const {
    Bytes data(4);
    for (int i = 0; i < 4; ++i) data[i] = static_cast<uint8_t>(machine >> (8 * (3 - i)));
    return WireValue::record({WireValue::text(net_type), WireValue::raw(std::move(data))});
}

NetAddress NetAddress::from_wire(const WireValue& v) {
    NetAddress a;
    a.net_type = v.field(0).as_text();
    const Bytes& data = v.field(1).as_raw();
    a.machine = 0;
    for (size_t i = 0; i < data.size() && i < 4; ++i) a.machine = a.machine << 8 | data[i];
    return a;
}

WireValue SocketRef::to_wire() const {
    wire::ValueList prefixes;
    for (uint64_t p : contact_prefixes) prefixes.push_back(WireValue::integer(p));
    wire::ValueList auths;
    for (const auto& a : authorities) auths.push_back(ident::identity_to_wire(a));
    return WireValue::record({WireValue::integer(id), WireValue::list(std::move(prefixes)),
                              WireValue::list(std::move(auths))});
}

SocketRef SocketRef::from_wire(const WireValue& v) {
    SocketRef r;
    r.id = v.field(0).as_integer();
    for (const auto& p : v.field(1).items()) r.contact_prefixes.push_back(p.as_integer());
    for (const auto& a : v.field(2).items()) r.authorities.push_back(ident::identity_from_wire(a));
    return r;
}

WireValue SocketFileAddr::to_wire() const {
    return WireValue::record({
        WireValue::integer(com_address),
        WireValue::integer(socket_id),
        WireValue::record({WireValue::text(pub_key.method), WireValue::raw(pub_key.key)}),
    });
}

SocketFileAddr SocketFileAddr::from_wire(const WireValue& v) {
    SocketFileAddr a;
    a.com_address = v.field(0).as_integer();
    a.socket_id = v.field(1).as_integer();
    a.pub_key = {v.field(2).field(0).as_text(), v.field(2).field(1).as_raw()};
    return a;
}

RangeSet RangeSet::all() {
    RangeSet s;
    s.covers_all_ = true;
    return s;
}

RangeSet RangeSet::single(const IndexRange& r) {
    RangeSet s;
    s.add(r);
    return s;
}

void RangeSet::add(IndexRange r) {
    if (covers_all_) return;
    if (r.end < r.start) return;
    std::vector<IndexRange> merged;
    for (const auto& existing : ranges_) {
        if (existing.end + 1 >= r.start && r.end + 1 >= existing.start) {
            r.start = std::min(r.start, existing.start);
            r.end = std::max(r.end, existing.end);
        } else {
            merged.push_back(existing);
        }
    }
    merged.push_back(r);
    std::sort(merged.begin(), merged.end(),
              [](const IndexRange& a, const IndexRange& b) { return a.start < b.start; });
    ranges_ = std::move(merged);
}

void RangeSet::remove(const IndexRange& r) {
    if (covers_all_) {
        // removing from "all" keeps it open-ended; model as all minus nothing
        // for the narrow cases the protocol needs, dropping to explicit
        // ranges would require a universe bound, so only full clears apply
        return;
    }
    std::vector<IndexRange> kept;
    for (const auto& existing : ranges_) {
        if (!existing.overlaps(r)) {
            kept.push_back(existing);
            continue;
        }
        if (existing.start < r.start) kept.push_back({existing.start, r.start - 1});
        if (existing.end > r.end) kept.push_back({r.end + 1, existing.end});
    }
    ranges_ = std::move(kept);
}

bool RangeSet::contains(int64_t index) const {
    if (covers_all_) return true;
    for (const auto& r : ranges_)
        if (r.contains(index)) return true;
    return false;
}

bool RangeSet::intersects_range(const IndexRange& q) const {
    if (covers_all_) return true;
    for (const auto& r : ranges_)
        if (r.overlaps(q)) return true;
    return false;
}

bool RangeSet::intersects(const RangeSet& other) const {
    if (covers_all_) return !other.empty();
    if (other.covers_all_) return !empty();
    for (const auto& r : ranges_)
        if (other.intersects_range(r)) return true;
    return false;
}

bool RangeSet::covers(const RangeSet& other) const {
    if (covers_all_) return true;
    if (other.covers_all_) return false;
    for (const auto& r : other.ranges_) {
        int64_t cursor = r.start;
        for (const auto& mine : ranges_) {
            if (mine.start > cursor) break;
            if (mine.end >= cursor) cursor = mine.end + 1;
            if (cursor > r.end) break;
        }
        if (cursor <= r.end) return false;
    }
    return true;
}

void RangeSet::merge(const RangeSet& other) {
    if (other.covers_all_) {
        covers_all_ = true;
        ranges_.clear();
        return;
    }
    for (const auto& r : other.ranges_) add(r);
}

WireValue range_to_wire(const IndexRange& r) {
    if (r.start == r.end)
        return WireValue::variant(0, WireValue::integer(static_cast<uint64_t>(r.start)));
    return WireValue::variant(
        1, WireValue::record({WireValue::integer(static_cast<uint64_t>(r.start)),
                              WireValue::integer(static_cast<uint64_t>(r.end))}));
}

IndexRange range_from_wire(const WireValue& v) {
    const auto& u = v.as_union();
    if (u.index == 0) {
        int64_t i = static_cast<int64_t>(u.payload->as_integer());
        return {i, i};
    }
    return {static_cast<int64_t>(u.payload->field(0).as_integer()),
            static_cast<int64_t>(u.payload->field(1).as_integer())};
}

WireValue RangeSubscription::to_wire() const {
    wire::ValueList out;
    for (const auto& e : entries)
        out.push_back(WireValue::record(
            {range_to_wire(e.range), WireValue::integer(e.has_version)}));
    return WireValue::list(std::move(out));
}

RangeSubscription RangeSubscription::from_wire(const WireValue& v) {
    RangeSubscription s;
    for (const auto& e : v.items())
        s.entries.push_back({range_from_wire(e.field(0)), e.field(1).as_integer()});
    return s;
}

RangeSet RangeSubscription::to_set() const {
    RangeSet set;
    for (const auto& e : entries) set.add(e.range);
    return set;
}

namespace {

WireValue location_to_wire(const std::vector<std::string>& loc) {
    wire::ValueList out;
    for (const auto& s : loc) out.push_back(WireValue::text(s));
    return WireValue::list(std::move(out));
}

std::vector<std::string> location_from_wire(const WireValue& v) {
    std::vector<std::string> out;
    for (const auto& s : v.items()) out.push_back(s.as_text());
    return out;
}

}  // namespace

WireValue SocketData::to_wire() const {
    wire::ValueList bounds, certs, pservers;
    for (const auto& b : boundaries) bounds.push_back(WireValue::text(b));
    for (const auto& cert : certificates) certs.push_back(ident::certificate_to_wire(cert));
    for (const auto& loc : persistence_servers) pservers.push_back(location_to_wire(loc));
    WireValue lock = lock_holder
                         ? WireValue::variant(0, WireValue::record({WireValue::text(*lock_holder)}))
                         : WireValue::variant(1);
    return WireValue::record({
        ident::identity_to_wire(pub_key),
        WireValue::integer(socket_id),
        WireValue::integer(version),
        WireValue::list(std::move(bounds)),
        WireValue::list(std::move(certs)),
        reader_role.to_wire(),
        writer_role.to_wire(),
        owner_role.to_wire(),
        lock_right.to_wire(),
        force_lock_right.to_wire(),
        change_boundaries_right.to_wire(),
        destroy_right.to_wire(),
        container.to_wire(),
        WireValue::integer(min_replicas),
        WireValue::integer(max_replicas),
        WireValue::variant(socket_type),
        WireValue::list(std::move(pservers)),
        std::move(lock),
    });
}

SocketData SocketData::from_wire(const WireValue& v) {
    SocketData d;
    d.pub_key = ident::identity_from_wire(v.field(0));
    d.socket_id = v.field(1).as_integer();
    d.version = v.field(2).as_integer();
    for (const auto& b : v.field(3).items()) d.boundaries.push_back(b.as_text());
    for (const auto& cert : v.field(4).items())
        d.certificates.push_back(ident::certificate_from_wire(cert));
    d.reader_role = SocketRef::from_wire(v.field(5));
    d.writer_role = SocketRef::from_wire(v.field(6));
    d.owner_role = SocketRef::from_wire(v.field(7));
    d.lock_right = SocketRef::from_wire(v.field(8));
    d.force_lock_right = SocketRef::from_wire(v.field(9));
    d.change_boundaries_right = SocketRef::from_wire(v.field(10));
    d.destroy_right = SocketRef::from_wire(v.field(11));
    d.container = SocketRef::from_wire(v.field(12));
    d.min_replicas = static_cast<uint32_t>(v.field(13).as_integer());
    d.max_replicas = static_cast<uint32_t>(v.field(14).as_integer());
    d.socket_type = v.field(15).as_union().index;
    for (const auto& loc : v.field(16).items())
        d.persistence_servers.push_back(location_from_wire(loc));
    const auto& lock = v.field(17).as_union();
    if (lock.index == 0) d.lock_holder = lock.payload->field(0).as_text();
    return d;
}

WireValue changed_to_wire(const std::vector<ChangedElement>& elems) {
    wire::ValueList out;
    for (const auto& e : elems)
        out.push_back(WireValue::record(
            {WireValue::integer(static_cast<uint64_t>(e.index)), WireValue::raw(e.data)}));
    return WireValue::list(std::move(out));
}

std::vector<ChangedElement> changed_from_wire(const WireValue& v) {
    std::vector<ChangedElement> out;
    for (const auto& e : v.items())
        out.push_back({static_cast<int64_t>(e.field(0).as_integer()), e.field(1).as_raw()});
    return out;
}

WireValue make_server_request(uint32_t type_id, const SocketFileAddr& addr, uint64_t request_id,
                              WireValue message, const ident::PrincipalKeys& client,
                              const std::string& method) {
    const auto& d = MessageRegistry::instance().at(type_id);
    WireValue body = WireValue::record({
        addr.to_wire(),
        WireValue::integer(request_id),
        std::move(message),
        WireValue::variant(0),  // returnAddress = NOTHING; replies reverse-path
    });
    return ident::seal_authenticated(ident::ProviderRegistry::default_instance(),
                                     d.payload_schema->inner, std::move(body), client, method);
}

ServerRequest parse_server_request(uint32_t type_id, const WireValue& payload) {
    const auto& d = MessageRegistry::instance().at(type_id);
    auto verified = ident::verify_authenticated(ident::ProviderRegistry::default_instance(),
                                                d.payload_schema->inner, payload);
    const WireValue& body = *payload.as_auth().inner;
    ServerRequest req;
    req.addr = SocketFileAddr::from_wire(body.field(0));
    req.request_id = body.field(1).as_integer();
    req.message = body.field(2);
    const auto& ret = body.field(3).as_union();
    if (ret.index == 1) req.return_address = SocketRef::from_wire(*ret.payload);
    req.client = verified.signer;
    req.signature_ok = verified.ok;
    return req;
}

Bytes serialize_reference(const SocketRef& ref) {
    return wire::encode_value(c().socket_ref, ref.to_wire());
}

SocketRef deserialize_reference(ByteView bytes) {
    auto decoded = wire::decode_value(c().socket_ref, bytes);
    if (decoded.consumed != bytes.size())
        throw wire::SchemaMismatchError("trailing bytes after reference");
    return SocketRef::from_wire(decoded.value);
}

}  // namespace hca::proto

namespace hca::proto {

namespace fi = file_index;

static wire::SchemaPtr element_schema(int64_t index) {
    const auto& cs = wire::MessageRegistry::instance().common();
    switch (index) {
        case fi::PubKey: return cs.identity;
        case fi::SocketId: return cs.integer;
        case fi::Version: return cs.integer;
        case fi::Boundaries: return wire::Schema::list(cs.str);
        case fi::Certificates: return wire::Schema::list(cs.certificate);
        case fi::ReaderRole:
        case fi::WriterRole:
        case fi::OwnerRole:
        case fi::LockRight:
        case fi::ForceLockRight:
        case fi::ChangeBoundariesRight:
        case fi::DestroyRight:
        case fi::Container: return cs.socket_ref;
        case fi::MinReplicas:
        case fi::MaxReplicas: return cs.uint32;
        case fi::SocketType: return cs.socket_type;
        case fi::PServers: return wire::Schema::list(cs.hca_location);
        case fi::LockState: return cs.lock_state;
        default: return nullptr;
    }
}

Bytes file_element_bytes(const SocketData& data, int64_t index) {
    wire::WireValue whole = data.to_wire();
    auto schema = element_schema(index);
    if (!schema) return {};
    return wire::encode_value(schema, whole.field(static_cast<size_t>(index)));
}

void apply_file_element(SocketData& data, int64_t index, ByteView bytes) {
    auto schema = element_schema(index);
    if (!schema) return;
    wire::WireValue element = wire::decode_value(schema, bytes).value;
    wire::WireValue whole = data.to_wire();
    whole.items()[static_cast<size_t>(index)] = std::move(element);
    data = SocketData::from_wire(whole);
}

std::vector<ChangedElement> general_block_elements(const SocketData& data,
                                                   const RangeSet& ranges) {
    std::vector<ChangedElement> out;
    for (int64_t i = fi::PubKey; i <= fi::LockState; ++i) {
        if (!ranges.contains(i)) continue;
        out.push_back({i, file_element_bytes(data, i)});
    }
    return out;
}

Bytes tail_integer(uint64_t v) { return wire::encode_varinteger(v); }

uint64_t tail_integer_value(ByteView bytes) {
    ByteReader in(bytes);
    return wire::decode_varinteger(in);
}

Bytes tail_boolean(bool v) { return Bytes{static_cast<uint8_t>(v ? 1 : 0)}; }

bool tail_boolean_value(ByteView bytes) { return !bytes.empty() && bytes[0] != 0; }

}  // namespace hca::proto
