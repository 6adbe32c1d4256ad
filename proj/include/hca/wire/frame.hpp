#pragma once

#include <functional>
#include <optional>
#include <variant>

#include "hca/wire/codec.hpp"

namespace hca::wire {

// Bidirectional transform applied to everything after the 4-byte type id once
// a connection has agreed on a shared key.
struct ChannelCipher {
    std::function<Bytes(ByteView)> encrypt;
    std::function<Bytes(ByteView)> decrypt;
};

struct MessageDescriptor {
    uint32_t type_id = 0;
    std::string name;
    SchemaPtr payload_schema;
};

class DecryptError : public std::runtime_error {
public:
    DecryptError() : std::runtime_error("channel decrypt failed") {}
};

// Header: 32-bit type id, 64-bit running counter, both big-endian, then the
// marshalled payload. With a cipher, the counter and payload travel encrypted.
Bytes frame_message(const MessageDescriptor& descriptor, uint64_t counter,
                    const WireValue& payload, const ChannelCipher* cipher = nullptr);

struct KnownMessage {
    const MessageDescriptor* descriptor = nullptr;
    uint64_t counter = 0;
    WireValue payload;
};
struct UnknownType {
    uint32_t type_id = 0;
    uint64_t counter = 0;
};
using ParsedFrame = std::variant<KnownMessage, UnknownType>;

class MessageRegistry;
ParsedFrame parse_frame(const MessageRegistry& registry, ByteView bytes,
                        const ChannelCipher* cipher = nullptr);

}  // namespace hca::wire
