#include "hca/wire/registry.hpp"

namespace hca::wire {

namespace {
using F = Schema::Field;

SchemaPtr empty_record() { return Schema::record({}); }
}  // namespace

SchemaPtr CommonSchemas::maybe(SchemaPtr inner) const {
    return Schema::union_of({F{"NOTHING", empty_record()}, F{"value", std::move(inner)}});
}

SchemaPtr CommonSchemas::server_request(SchemaPtr message) const {
    return Schema::authenticated_of(Schema::record({
        F{"addr", socket_file_addr},
        F{"requestId", integer},
        F{"message", std::move(message)},
        F{"returnAddress", maybe(socket_ref)},
    }));
}

MessageRegistry::MessageRegistry() {
    CommonSchemas& c = common_;
    c.uint8 = Schema::fixed_uint(1);
    c.uint16 = Schema::fixed_uint(2);
    c.uint32 = Schema::fixed_uint(4);
    c.uint64 = Schema::fixed_uint(8);
    c.integer = Schema::var_integer();
    c.raw = Schema::raw_data();
    c.str = Schema::string();
    c.boolean = Schema::boolean();
    c.key = c.raw;
    c.net_address = Schema::record({F{"netType", c.str}, F{"data", c.raw}});
    c.single_identity = Schema::record({F{"method", c.str}, F{"key", c.key}});
    c.identity = Schema::list(c.single_identity);
    c.date = Schema::record({
        F{"year", c.integer},
        F{"month", c.uint8},
        F{"day", c.uint8},
        F{"hour", c.uint8},
        F{"minute", c.uint8},
        F{"second", c.uint8},
        F{"second1000", c.uint16},
    });
    c.certificate = Schema::record({
        F{"authorityPublicKey", c.key},
        F{"body", Schema::signed_of(Schema::record({
                      F{"id", c.integer},
                      F{"identity", c.identity},
                      F{"version", c.integer},
                      F{"startDate", c.date},
                      F{"endDate", c.date},
                      F{"authority", c.str},
                      F{"description", c.str},
                  }))},
    });
    c.domain_description = Schema::record({
        F{"identity", c.identity},
        F{"body", Schema::signed_of(Schema::record({
                      F{"domain", c.str},
                      F{"boundaries", Schema::list(c.str)},
                  }))},
    });
    c.hca_location = Schema::list(c.str);
    c.socket_type = Schema::union_of({
        F{"STORAGEBLOCK", empty_record()},
        F{"SHAREDVECTOR", empty_record()},
        F{"MESSAGESINK", empty_record()},
        F{"MESSAGEBUFFER", empty_record()},
        F{"ROLE", empty_record()},
        F{"GROUP", empty_record()},
        F{"CONTAINER", empty_record()},
    });
    c.socket_ref = Schema::record({
        F{"id", c.integer},
        F{"contactAddrs", Schema::list(c.uint64)},
        F{"authorities", Schema::list(c.identity)},
    });
    c.socket_file_addr = Schema::record({
        F{"comAddress", c.uint64},
        F{"socketId", c.integer},
        F{"pubKey", c.single_identity},
    });
    c.range = Schema::union_of({
        F{"index", c.integer},
        F{"span", Schema::record({F{"start", c.integer}, F{"end", c.integer}})},
    });
    c.range_subscription =
        Schema::list(Schema::record({F{"range", c.range}, F{"hasVersion", c.integer}}));
    c.lock_state = Schema::union_of({
        F{"LOCKED", Schema::record({F{"clientId", c.str}})},
        F{"UNLOCKED", empty_record()},
    });
    c.socket_data = Schema::record({
        F{"pubKey", c.identity},
        F{"socketId", c.integer},
        F{"version", c.integer},
        F{"boundaries", Schema::list(c.str)},
        F{"certificates", Schema::list(c.certificate)},
        F{"readerRole", c.socket_ref},
        F{"writerRole", c.socket_ref},
        F{"ownerRole", c.socket_ref},
        F{"lockRight", c.socket_ref},
        F{"forceLockRight", c.socket_ref},
        F{"changeBoundariesRight", c.socket_ref},
        F{"destroySocketRight", c.socket_ref},
        F{"container", c.socket_ref},
        F{"minReplicas", c.uint32},
        F{"maxReplicas", c.uint32},
        F{"type", c.socket_type},
        F{"persistenceServers", Schema::list(c.hca_location)},
        F{"lockState", c.lock_state},
    });
    c.node_ad = Schema::record({
        F{"identity", c.identity},
        F{"address", c.net_address},
        F{"startAddress", c.uint64},
        F{"endAddress", c.uint64},
    });
    c.replica_ad = Schema::record({F{"identity", c.identity}, F{"address", c.net_address}});
    c.changed_elements =
        Schema::list(Schema::record({F{"index", c.integer}, F{"data", c.raw}}));
    c.shortcut_authorization = Schema::authenticated_of(Schema::record({
        F{"requestId", c.integer},
        F{"targetPubKey", c.identity},
        F{"socketId", c.integer},
        F{"socketPubKey", c.single_identity},
        F{"source", c.net_address},
    }));

    SchemaPtr address_range =
        Schema::record({F{"startAddress", c.uint64}, F{"endAddress", c.uint64}});

    add(msg::RequestConnection, "RequestConnection", Schema::signed_of(address_range));
    add(msg::AccessPoints, "AccessPoints",
        Schema::signed_of(Schema::list(
            Schema::record({F{"node", c.node_ad}, F{"replicas", Schema::list(c.replica_ad)}}))));
    add(msg::Connect, "Connect", Schema::signed_of(address_range));
    add(msg::ConnectAck, "ConnectAck",
        Schema::signed_of(Schema::encrypted_of(Schema::record({
            F{"sharedKey", c.key},
            F{"startAddress", c.uint64},
            F{"endAddress", c.uint64},
            F{"domains", Schema::list(c.domain_description)},
        }))));
    add(msg::DomainChange, "DomainChange", Schema::list(c.domain_description));
    add(msg::BoundaryChange, "BoundaryChange", c.domain_description);
    add(msg::AddressSpaceUpdate, "AddressSpaceUpdate", address_range);
    add(msg::NewSocketFile, "NewSocketFile",
        Schema::record({F{"prefixAddr", c.uint64},
                        F{"data", Schema::authenticated_of(c.socket_data)}}));
    add(msg::SocketFileUpdate, "SocketFileUpdate",
        Schema::signed_of(Schema::record({
            F{"addr", c.socket_file_addr},
            F{"fromVersion", c.integer},
            F{"toVersion", c.integer},
            F{"changedElements", c.changed_elements},
        })));
    add(msg::SlowdownSocketFileCreation, "SlowdownSocketFileCreation", empty_record());
    add(msg::AddtoSubscription, "AddtoSubscription",
        Schema::record({F{"addr", c.socket_file_addr}, F{"ranges", c.range_subscription}}));
    add(msg::RemoveFromSubscription, "RemoveFromSubscription",
        Schema::record({F{"addr", c.socket_file_addr}, F{"ranges", Schema::list(c.range)}}));
    add(msg::CheckSocketFile, "CheckSocketFile",
        Schema::record({F{"requestId", c.integer}, F{"sourceAddr", c.hca_location},
                        F{"addr", c.socket_file_addr}}));
    add(msg::CheckSocketFileAck, "CheckSocketFileAck",
        Schema::record({F{"requestId", c.integer}, F{"success", c.boolean}}));
    add(msg::DeleteSocketFile, "DeleteSocketFile",
        Schema::signed_of(Schema::record({F{"addr", c.socket_file_addr}})));
    add(msg::SocketFileDeleted, "SocketFileDeleted",
        Schema::record({F{"socketId", c.integer}, F{"pubKey", c.key}}));

    SchemaPtr lock_op = Schema::union_of({
        F{"FORCE", empty_record()},
        F{"TRY", empty_record()},
        F{"waitTime", c.integer},
        F{"RELEASE", empty_record()},
    });
    add(msg::Lock, "Lock", c.server_request(lock_op));
    add(msg::SetBoundaries, "SetBoundaries",
        c.server_request(Schema::record({
            F{"removeAll", c.boolean},
            F{"removeList", Schema::list(c.str)},
            F{"addList", Schema::list(c.str)},
        })));

    SchemaPtr op_result = Schema::union_of({F{"SUCCESS", empty_record()},
                                            F{"ACCESSVIOLATION", empty_record()}});
    add(msg::AccessRightResponse, "AccessRightResponse",
        Schema::record({F{"requestId", c.integer}, F{"result", op_result}}));
    add(msg::NewRootContainer, "NewRootContainer",
        Schema::authenticated_of(Schema::record({
            F{"name", c.str},
            F{"storageBlocks", Schema::list(c.hca_location)},
            F{"minReplicas", c.uint32},
            F{"maxReplicas", c.uint32},
            F{"boundaries", Schema::list(c.str)},
            F{"responseAddr", c.socket_ref},
        })));
    add(msg::NewRootContainerAck, "NewRootContainerAck",
        Schema::authenticated_of(c.maybe(c.socket_ref)));
    add(msg::CreateSocket, "CreateSocket",
        c.server_request(Schema::record({
            F{"name", c.str},
            F{"quota", c.integer},
            F{"initialOwner", c.identity},
            F{"socketType", c.socket_type},
        })));
    add(msg::CreateSocketAck, "CreateSocketAck",
        Schema::authenticated_of(Schema::record({
            F{"requestId", c.integer},
            F{"newSocket", c.maybe(c.socket_ref)},
        })));
    add(msg::RemoveSocket, "RemoveSocket",
        c.server_request(Schema::union_of({F{"REMOVEALL", empty_record()}, F{"name", c.str}})));
    add(msg::SetMinReplicas, "SetMinReplicas", c.server_request(c.uint32));
    add(msg::SetMaxReplicas, "SetMaxReplicas", c.server_request(c.uint32));
    SchemaPtr block_user =
        Schema::record({F{"storageBlock", c.socket_ref}, F{"userId", c.identity}});
    add(msg::AddStorageBlock, "AddStorageBlock", c.server_request(block_user));
    add(msg::RemoveStorageBlock, "RemoveStorageBlock", c.server_request(block_user));
    add(msg::ChangeStorageBlockUser, "ChangeStorageBlockUser", c.server_request(block_user));
    add(msg::SetQuota, "SetQuota",
        c.server_request(Schema::record({F{"name", c.str}, F{"quota", c.integer}})));
    add(msg::ContainerOperationResponse, "ContainerOperationResponse",
        Schema::record({F{"requestId", c.integer}, F{"result", op_result}}));
    add(msg::ChangeSubscription, "ChangeSubscription",
        Schema::record({
            F{"addr", c.socket_file_addr},
            F{"add", Schema::union_of({F{"ALL", empty_record()},
                                       F{"ranges", c.range_subscription}})},
            F{"remove", Schema::union_of({F{"ALL", empty_record()},
                                          F{"ranges", Schema::list(c.range)}})},
        }));
    add(msg::Update, "Update",
        Schema::signed_of(Schema::record({
            F{"addr", c.socket_file_addr},
            F{"transferAddr", c.uint64},
            F{"newState", c.integer},
            F{"changed", c.changed_elements},
        })));
    add(msg::Commit, "Commit",
        Schema::record({F{"state", c.integer}, F{"storageServer", c.socket_ref}}));
    add(msg::Snapshot, "Snapshot", c.socket_file_addr);
    add(msg::SubscriptionError, "SubscriptionError",
        Schema::record({F{"socketId", c.integer}, F{"socketKey", c.key}}));
    add(msg::Message, "Message",
        Schema::authenticated_of(Schema::record({
            F{"addr", c.socket_file_addr},
            F{"messageData", c.raw},
            F{"messageBuffer", c.socket_ref},
            F{"fallbackAddress", c.socket_ref},
            F{"maxTimeInMs", c.integer},
        })));
    add(msg::SetMaximumMessageLength, "SetMaximumMessageLength", c.server_request(c.integer));
    add(msg::StartReceiving, "StartReceiving", Schema::authenticated_of(c.socket_file_addr));
    add(msg::StopReceiving, "StopReceiving", Schema::authenticated_of(c.socket_file_addr));
    add(msg::ConsumeMessage, "ConsumeMessage", c.server_request(empty_record()));
    add(msg::ClearMessage, "ClearMessage",
        c.server_request(Schema::union_of({F{"ALL", empty_record()}, F{"index", c.integer}})));
    add(msg::MessageBufferResponse, "MessageBufferResponse",
        Schema::record({F{"requestId", c.integer}, F{"result", op_result}}));
    add(msg::GrantTo, "GrantTo", c.server_request(c.identity));
    add(msg::DenyFrom, "DenyFrom", c.server_request(c.identity));
    add(msg::ClearRights, "ClearRights", c.server_request(empty_record()));
    add(msg::GrantToAll, "GrantToAll", c.server_request(empty_record()));
    add(msg::ActivateReplica, "ActivateReplica",
        Schema::union_of({F{"ACTIVATE", empty_record()}, F{"DEACTIVATE", empty_record()}}));
    add(msg::ReplicaUpdate, "ReplicaUpdate", Schema::list(c.replica_ad));
    add(msg::AuthorizeShortcut, "AuthorizeShortcut", c.shortcut_authorization);
    add(msg::RequestShortcut, "RequestShortcut",
        Schema::authenticated_of(Schema::record({
            F{"authorization", c.shortcut_authorization},
            F{"target", c.net_address},
        })));
    add(msg::NewShortcut, "NewShortcut", Schema::record({F{"requestId", c.integer}}));
    add(msg::NewShortcutAck, "NewShortcutAck", Schema::record({F{"requestId", c.integer}}));
    add(msg::RequestShortcutAck, "RequestShortcutAck",
        Schema::authenticated_of(Schema::encrypted_of(Schema::record({
            F{"requestId", c.integer},
            F{"sharedKey", c.key},
        }))));
    add(msg::RequestTerminateShortcut, "RequestTerminateShortcut",
        Schema::record({
            F{"requestId", c.integer},
            F{"socketId", c.integer},
            F{"socketPubKey", c.single_identity},
            F{"middleNode", c.identity},
            F{"newTarget", c.maybe(Schema::record({F{"newTarget", c.identity},
                                                   F{"address", c.net_address}}))},
        }));
    add(msg::NewShortcutTarget, "NewShortcutTarget",
        Schema::authenticated_of(
            Schema::record({F{"requestId", c.integer}, F{"address", c.net_address}})));
    add(msg::NewShortcutTargetAck, "NewShortcutTargetAck",
        Schema::authenticated_of(
            Schema::record({F{"requestId", c.integer}, F{"sharedKey", c.key}})));
    add(msg::FindNewShortcutSource, "FindNewShortcutSource",
        Schema::record({
            F{"allowed", c.boolean},
            F{"requestId", c.integer},
            F{"socketPubKey", c.single_identity},
            F{"socketId", c.integer},
        }));
    add(msg::NewShortcutSource, "NewShortcutSource",
        Schema::authenticated_of(Schema::record({
            F{"requestId", c.integer},
            F{"socketPubKey", c.single_identity},
            F{"socketId", c.integer},
            F{"address", c.net_address},
        })));
    add(msg::NewShortcutSourceAck, "NewShortcutSourceAck",
        Schema::authenticated_of(Schema::encrypted_of(
            Schema::record({F{"sharedKey", c.key}, F{"address", c.net_address}}))));
    SchemaPtr shortcut_id = Schema::record({
        F{"requestId", c.integer},
        F{"socketId", c.integer},
        F{"socketPubKey", c.single_identity},
    });
    add(msg::TerminateShortcut, "TerminateShortcut", shortcut_id);
    add(msg::TerminateShortcutAck, "TerminateShortcutAck", shortcut_id);

    add(msg::KeepAlive, "KeepAlive", empty_record());
    add(msg::MessageExpired, "MessageExpired", Schema::record({F{"requestId", c.integer}}));
}

void MessageRegistry::add(uint32_t id, std::string name, SchemaPtr schema) {
    MessageDescriptor d;
    d.type_id = id;
    d.name = name;
    d.payload_schema = std::move(schema);
    by_name_[d.name] = id;
    by_id_.emplace(id, std::move(d));
}

const MessageDescriptor* MessageRegistry::by_id(uint32_t type_id) const {
    auto it = by_id_.find(type_id);
    return it == by_id_.end() ? nullptr : &it->second;
}

const MessageDescriptor& MessageRegistry::at(uint32_t type_id) const {
    const MessageDescriptor* d = by_id(type_id);
    if (!d) throw std::out_of_range("unregistered message type");
    return *d;
}

const MessageDescriptor* MessageRegistry::by_name(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : by_id(it->second);
}

const MessageRegistry& MessageRegistry::instance() {
    static const MessageRegistry registry;
    return registry;
}

Bytes frame_message(const MessageDescriptor& descriptor, uint64_t counter,
                    const WireValue& payload, const ChannelCipher* cipher) {
    Bytes body;
    ByteWriter(body).be(counter, 8);
    encode_value(descriptor.payload_schema, payload, body);
    Bytes out;
    ByteWriter w(out);
    w.be(descriptor.type_id, 4);
    if (cipher) {
        Bytes enc = cipher->encrypt(body);
        w.raw(enc);
    } else {
        w.raw(body);
    }
    return out;
}

ParsedFrame parse_frame(const MessageRegistry& registry, ByteView bytes,
                        const ChannelCipher* cipher) {
    ByteReader head(bytes);
    uint32_t type_id = static_cast<uint32_t>(head.be(4));
    Bytes body;
    if (cipher) {
        body = cipher->decrypt(bytes.subspan(4));
    } else {
        body.assign(bytes.begin() + 4, bytes.end());
    }
    ByteReader in(body);
    uint64_t counter = in.be(8);
    const MessageDescriptor* d = registry.by_id(type_id);
    if (!d) return UnknownType{type_id, counter};
    KnownMessage m;
    m.descriptor = d;
    m.counter = counter;
    m.payload = decode_value(d->payload_schema, in);
    return m;
}

}  // namespace hca::wire
