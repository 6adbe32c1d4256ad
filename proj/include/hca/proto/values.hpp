#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hca/ident/identity.hpp"
#include "hca/wire/registry.hpp"

namespace hca::proto {

// Typed mirrors of the wire records the state machines work with.

struct NetAddress {
    std::string net_type = "sim";
    uint32_t machine = 0;  // encoded as 4 raw bytes

    wire::WireValue to_wire() const;
    static NetAddress from_wire(const wire::WireValue& v);
};

struct SocketRef {
    uint64_t id = 0;
    std::vector<uint64_t> contact_prefixes;
    std::vector<ident::Identity> authorities;

    wire::WireValue to_wire() const;
    static SocketRef from_wire(const wire::WireValue& v);
    bool operator==(const SocketRef&) const = default;
};

struct SocketFileAddr {
    uint64_t com_address = 0;
    uint64_t socket_id = 0;
    ident::SingleIdentity pub_key;

    wire::WireValue to_wire() const;
    static SocketFileAddr from_wire(const wire::WireValue& v);
    bool operator==(const SocketFileAddr&) const = default;
    bool operator<(const SocketFileAddr& o) const {
        return std::tie(socket_id, com_address, pub_key) <
               std::tie(o.socket_id, o.com_address, o.pub_key);
    }
};

// Key for "the same socket file regardless of which contact prefix". Socket
// ids are large random numbers, so the id alone identifies the socket; the
// public key in wire addresses authenticates rather than disambiguates.
struct SocketKey {
    uint64_t socket_id = 0;

    bool operator==(const SocketKey&) const = default;
    bool operator<(const SocketKey& o) const { return socket_id < o.socket_id; }
};
inline SocketKey key_of(const SocketFileAddr& a) { return {a.socket_id}; }

struct IndexRange {
    int64_t start = 0;
    int64_t end = 0;  // inclusive

    bool contains(int64_t i) const { return i >= start && i <= end; }
    bool overlaps(const IndexRange& o) const { return start <= o.end && o.start <= end; }
    bool operator==(const IndexRange&) const = default;
};

// Set of subscribed index ranges, kept normalized (sorted, merged).
class RangeSet {
public:
    static RangeSet all();
    static RangeSet single(const IndexRange& r);

    void add(IndexRange r);
    void remove(const IndexRange& r);
    void clear() { ranges_.clear(); covers_all_ = false; }
    bool empty() const { return !covers_all_ && ranges_.empty(); }
    bool covers_all() const { return covers_all_; }
    bool contains(int64_t index) const;
    bool intersects(const RangeSet& other) const;
    bool intersects_range(const IndexRange& r) const;
    // true when `other` adds indices beyond this set
    bool covers(const RangeSet& other) const;
    void merge(const RangeSet& other);
    const std::vector<IndexRange>& ranges() const { return ranges_; }

    bool operator==(const RangeSet&) const = default;

private:
    bool covers_all_ = false;
    std::vector<IndexRange> ranges_;
};

wire::WireValue range_to_wire(const IndexRange& r);
IndexRange range_from_wire(const wire::WireValue& v);

// RangeSubscription = list<record[Range, hasVersion]>
struct RangeSubscription {
    struct Entry {
        IndexRange range;
        uint64_t has_version = 0;
    };
    std::vector<Entry> entries;

    wire::WireValue to_wire() const;
    static RangeSubscription from_wire(const wire::WireValue& v);
    RangeSet to_set() const;
};

struct SocketData {
    ident::Identity pub_key;
    uint64_t socket_id = 0;
    uint64_t version = 0;
    std::vector<std::string> boundaries;
    std::vector<ident::Certificate> certificates;
    SocketRef reader_role, writer_role, owner_role;
    SocketRef lock_right, force_lock_right, change_boundaries_right, destroy_right;
    SocketRef container;
    uint32_t min_replicas = 1;
    uint32_t max_replicas = 1;
    size_t socket_type = wire::socket_type::SharedVector;
    std::vector<std::vector<std::string>> persistence_servers;  // HCALocations
    std::optional<std::string> lock_holder;  // nullopt = UNLOCKED

    wire::WireValue to_wire() const;
    static SocketData from_wire(const wire::WireValue& v);
};

struct ChangedElement {
    int64_t index = 0;
    Bytes data;
};

wire::WireValue changed_to_wire(const std::vector<ChangedElement>& elems);
std::vector<ChangedElement> changed_from_wire(const wire::WireValue& v);

// serverRequest<m> shell shared by the container/lock/access messages.
struct ServerRequest {
    SocketFileAddr addr;
    uint64_t request_id = 0;
    wire::WireValue message;  // payload value for the specific message type
    std::optional<SocketRef> return_address;
    ident::SingleIdentity client;  // signer from the authenticated wrapper
    bool signature_ok = false;
};

// Builds the authenticated serverRequest payload value for a message type.
wire::WireValue make_server_request(uint32_t type_id, const SocketFileAddr& addr,
                                    uint64_t request_id, wire::WireValue message,
                                    const ident::PrincipalKeys& client,
                                    const std::string& method = "mock");
ServerRequest parse_server_request(uint32_t type_id, const wire::WireValue& payload);

// Reference serialization per the standard layout: socket id, contact
// prefixes, accepted authorities.
Bytes serialize_reference(const SocketRef& ref);
SocketRef deserialize_reference(ByteView bytes);

}  // namespace hca::proto
