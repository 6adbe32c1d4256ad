#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "hca/bytes.hpp"

namespace hca::wire {

// Immutable description of one wire type. Record field order is significant;
// union variants are numbered from 0 in declaration order.
class Schema;
using SchemaPtr = std::shared_ptr<const Schema>;

enum class Kind {
    FixedUint,   // big-endian, width 1/2/4/8 bytes
    VarInteger,  // base-128 length then big-endian magnitude
    RawData,
    String,
    Boolean,
    Record,
    Union,
    List,
    Signed,         // inner bytes + length-prefixed signature
    Encrypted,      // length-prefixed opaque blob
    Authenticated,  // pair<SingleIdentity, signed<inner>>
};

class Schema {
public:
    struct Field {
        std::string name;  // for rendering/debugging only, not on the wire
        SchemaPtr schema;
    };

    Kind kind;
    int width = 0;               // FixedUint
    std::vector<Field> fields;   // Record
    std::vector<Field> variants; // Union
    SchemaPtr element;           // List
    SchemaPtr inner;             // Signed / Encrypted / Authenticated

    static SchemaPtr fixed_uint(int width_bytes);
    static SchemaPtr var_integer();
    static SchemaPtr raw_data();
    static SchemaPtr string();
    static SchemaPtr boolean();
    static SchemaPtr record(std::vector<Field> fields);
    static SchemaPtr union_of(std::vector<Field> variants);
    static SchemaPtr list(SchemaPtr element);
    static SchemaPtr signed_of(SchemaPtr inner);
    static SchemaPtr encrypted_of(SchemaPtr inner);
    static SchemaPtr authenticated_of(SchemaPtr inner);
};

// A dynamically-typed value matching some Schema node.
class WireValue;
using ValueList = std::vector<WireValue>;

struct UnionValue {
    size_t index = 0;
    std::shared_ptr<WireValue> payload;  // null for empty variants

    bool operator==(const UnionValue& o) const;
};

struct SignedValue {
    std::shared_ptr<WireValue> inner;
    Bytes signature;

    bool operator==(const SignedValue& o) const;
};

struct EncryptedValue {
    Bytes blob;  // ciphertext of the encoded inner value

    bool operator==(const EncryptedValue& o) const { return blob == o.blob; }
};

struct AuthValue {
    std::string method;
    Bytes key;
    std::shared_ptr<WireValue> inner;
    Bytes signature;

    bool operator==(const AuthValue& o) const;
};

class WireValue {
public:
    using Storage = std::variant<uint64_t, Bytes, std::string, bool, ValueList,
                                 UnionValue, SignedValue, EncryptedValue, AuthValue>;

    WireValue() : v_(uint64_t{0}) {}
    explicit WireValue(Storage v) : v_(std::move(v)) {}

    static WireValue integer(uint64_t v) { return WireValue{Storage{v}}; }
    static WireValue raw(Bytes b) { return WireValue{Storage{std::move(b)}}; }
    static WireValue text(std::string s) { return WireValue{Storage{std::move(s)}}; }
    static WireValue boolean(bool b) { return WireValue{Storage{b}}; }
    static WireValue record(ValueList fields) { return WireValue{Storage{std::move(fields)}}; }
    static WireValue list(ValueList elems);
    static WireValue variant(size_t index, WireValue payload);
    static WireValue variant(size_t index);  // empty variant
    static WireValue signed_value(WireValue inner, Bytes sig);
    static WireValue encrypted(Bytes blob) { return WireValue{Storage{EncryptedValue{std::move(blob)}}}; }
    static WireValue authenticated(std::string method, Bytes key, WireValue inner, Bytes sig);

    uint64_t as_integer() const { return std::get<uint64_t>(v_); }
    const Bytes& as_raw() const { return std::get<Bytes>(v_); }
    const std::string& as_text() const { return std::get<std::string>(v_); }
    bool as_boolean() const { return std::get<bool>(v_); }
    const ValueList& items() const { return std::get<ValueList>(v_); }
    ValueList& items() { return std::get<ValueList>(v_); }
    const UnionValue& as_union() const { return std::get<UnionValue>(v_); }
    const SignedValue& as_signed() const { return std::get<SignedValue>(v_); }
    const EncryptedValue& as_encrypted() const { return std::get<EncryptedValue>(v_); }
    const AuthValue& as_auth() const { return std::get<AuthValue>(v_); }

    // field(i) on a record value
    const WireValue& field(size_t i) const { return items().at(i); }

    bool holds_integer() const { return std::holds_alternative<uint64_t>(v_); }
    bool holds_list() const { return std::holds_alternative<ValueList>(v_); }
    bool holds_union() const { return std::holds_alternative<UnionValue>(v_); }

    bool operator==(const WireValue& other) const { return v_ == other.v_; }

    const Storage& storage() const { return v_; }

private:
    Storage v_;
};

}  // namespace hca::wire
