#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>

#include "hca/bytes.hpp"
#include "hca/wire/schema.hpp"

namespace hca::wire {

class SchemaMismatchError : public std::runtime_error {
public:
    explicit SchemaMismatchError(const std::string& what) : std::runtime_error(what) {}
};

class OverflowError : public std::runtime_error {
public:
    explicit OverflowError(const std::string& what) : std::runtime_error(what) {}
};

// Digits longer than this (max value just under 2^63) are rejected to keep
// hostile length counts from asking for absurd allocations.
inline constexpr size_t kMaxCountDigits = 9;

// Base-128 count: most significant digit first, final digit has the high bit
// set. Zero encodes as the single byte 0x80.
void encode_base128_count(uint64_t value, Bytes& out);
Bytes encode_base128_count(uint64_t value);

struct CountResult {
    uint64_t value = 0;
    size_t consumed = 0;
    bool canonical = true;  // false when leading zero digits were present
};
CountResult decode_base128_count(ByteReader& in);
CountResult decode_base128_count(ByteView bytes);

// Arbitrary-size non-negative integer: byte length as a count, then the
// big-endian minimal-width magnitude. Zero is length 0.
void encode_varinteger(uint64_t value, Bytes& out);
Bytes encode_varinteger(uint64_t value);
uint64_t decode_varinteger(ByteReader& in);

// Schema-directed encoding. Throws SchemaMismatchError when the value shape
// does not match the schema node.
void encode_value(const SchemaPtr& schema, const WireValue& value, Bytes& out);
Bytes encode_value(const SchemaPtr& schema, const WireValue& value);

struct DecodedValue {
    WireValue value;
    size_t consumed = 0;
};
WireValue decode_value(const SchemaPtr& schema, ByteReader& in);
DecodedValue decode_value(const SchemaPtr& schema, ByteView bytes);

// True when the value's shape matches the schema node.
bool validates(const SchemaPtr& schema, const WireValue& value);

}  // namespace hca::wire
