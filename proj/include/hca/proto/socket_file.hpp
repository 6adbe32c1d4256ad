#pragma once

#include "hca/proto/values.hpp"

namespace hca::proto {

// Socket-file sparse-vector layout: indices 0..17 are the general block,
// 18..999 reserved, 1000+ the per-type tail.
namespace file_index {
enum : int64_t {
    PubKey = 0,
    SocketId = 1,
    Version = 2,
    Boundaries = 3,
    Certificates = 4,
    ReaderRole = 5,
    WriterRole = 6,
    OwnerRole = 7,
    LockRight = 8,
    ForceLockRight = 9,
    ChangeBoundariesRight = 10,
    DestroyRight = 11,
    Container = 12,
    MinReplicas = 13,
    MaxReplicas = 14,
    SocketType = 15,
    PServers = 16,
    LockState = 17,
    TailBase = 1000,
};
}

// Encoded bytes of one general-block element.
Bytes file_element_bytes(const SocketData& data, int64_t index);

// Applies an encoded general-block element; ignores reserved indices.
void apply_file_element(SocketData& data, int64_t index, ByteView bytes);

// Full general block as changed-element pairs, restricted to a range set.
std::vector<ChangedElement> general_block_elements(const SocketData& data,
                                                   const RangeSet& ranges);

// Tail helpers (var-integer and boolean tail cells).
Bytes tail_integer(uint64_t v);
uint64_t tail_integer_value(ByteView bytes);
Bytes tail_boolean(bool v);
bool tail_boolean_value(ByteView bytes);

}  // namespace hca::proto
