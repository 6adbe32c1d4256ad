#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "hca/wire/frame.hpp"

namespace hca::wire {

// Message type ids. Values 1..62 follow the order the inter-domain protocol
// defines the messages; ids >= 1000 are local extensions other
// implementations are expected to ignore (unknown-type tolerance).
namespace msg {
enum : uint32_t {
    RequestConnection = 1,
    AccessPoints = 2,
    Connect = 3,
    ConnectAck = 4,
    DomainChange = 5,
    BoundaryChange = 6,
    AddressSpaceUpdate = 7,
    NewSocketFile = 8,
    SocketFileUpdate = 9,
    SlowdownSocketFileCreation = 10,
    AddtoSubscription = 11,
    RemoveFromSubscription = 12,
    CheckSocketFile = 13,
    CheckSocketFileAck = 14,
    DeleteSocketFile = 15,
    SocketFileDeleted = 16,
    Lock = 17,
    SetBoundaries = 18,
    AccessRightResponse = 19,
    NewRootContainer = 20,
    NewRootContainerAck = 21,
    CreateSocket = 22,
    CreateSocketAck = 23,
    RemoveSocket = 24,
    SetMinReplicas = 25,
    SetMaxReplicas = 26,
    AddStorageBlock = 27,
    RemoveStorageBlock = 28,
    ChangeStorageBlockUser = 29,
    SetQuota = 30,
    ContainerOperationResponse = 31,
    ChangeSubscription = 32,
    Update = 33,
    Commit = 34,
    Snapshot = 35,
    SubscriptionError = 36,
    Message = 37,
    SetMaximumMessageLength = 38,
    StartReceiving = 39,
    StopReceiving = 40,
    ConsumeMessage = 41,
    ClearMessage = 42,
    MessageBufferResponse = 43,
    GrantTo = 44,
    DenyFrom = 45,
    ClearRights = 46,
    GrantToAll = 47,
    ActivateReplica = 48,
    ReplicaUpdate = 49,
    AuthorizeShortcut = 50,
    RequestShortcut = 51,
    NewShortcut = 52,
    NewShortcutAck = 53,
    RequestShortcutAck = 54,
    RequestTerminateShortcut = 55,
    NewShortcutTarget = 56,
    NewShortcutTargetAck = 57,
    FindNewShortcutSource = 58,
    NewShortcutSource = 59,
    NewShortcutSourceAck = 60,
    TerminateShortcut = 61,
    TerminateShortcutAck = 62,
    // local extensions
    KeepAlive = 1000,
    MessageExpired = 1001,
};
}  // namespace msg

// Socket type selector values (union variant order is wire-significant).
namespace socket_type {
enum : size_t {
    StorageBlock = 0,
    SharedVector = 1,
    MessageSink = 2,
    MessageBuffer = 3,
    Role = 4,
    Group = 5,
    Container = 6,
};
}

// Shared schema nodes used across messages.
struct CommonSchemas {
    SchemaPtr uint8, uint16, uint32, uint64;
    SchemaPtr integer;       // var-integer
    SchemaPtr raw, str, boolean;
    SchemaPtr key;           // RawData
    SchemaPtr net_address;   // record [netType:String, data:RawData]
    SchemaPtr single_identity;  // record [method:String, key:RawData]
    SchemaPtr identity;         // list<SingleIdentity>
    SchemaPtr date;
    SchemaPtr certificate;
    SchemaPtr domain_description;
    SchemaPtr hca_location;  // list<String>
    SchemaPtr socket_type;
    SchemaPtr socket_ref;    // record [id, contactAddrs, authorities]
    SchemaPtr socket_file_addr;
    SchemaPtr range;              // union [Integer, pair<Integer,Integer>]
    SchemaPtr range_subscription; // list<record[Range, hasVersion]>
    SchemaPtr lock_state;         // union [LOCKED(clientId), UNLOCKED]
    SchemaPtr socket_data;        // the 18-field general socket record
    SchemaPtr node_ad, replica_ad;
    SchemaPtr changed_elements;   // list<record[index:Integer, data:RawData]>
    SchemaPtr shortcut_authorization;

    SchemaPtr maybe(SchemaPtr inner) const;
    // serverRequest<m>: authenticated record [addr, requestId, message, returnAddress]
    SchemaPtr server_request(SchemaPtr message) const;
};

class MessageRegistry {
public:
    MessageRegistry();

    const MessageDescriptor* by_id(uint32_t type_id) const;
    const MessageDescriptor& at(uint32_t type_id) const;
    const MessageDescriptor* by_name(const std::string& name) const;
    const std::map<uint32_t, MessageDescriptor>& all() const { return by_id_; }

    const CommonSchemas& common() const { return common_; }

    static const MessageRegistry& instance();

private:
    void add(uint32_t id, std::string name, SchemaPtr schema);
    std::map<uint32_t, MessageDescriptor> by_id_;
    std::map<std::string, uint32_t> by_name_;
    CommonSchemas common_;
};

}  // namespace hca::wire
