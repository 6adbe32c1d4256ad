#include "hca/wire/codec.hpp"

namespace hca::wire {

SchemaPtr Schema::fixed_uint(int width_bytes) {
    auto s = std::make_shared<Schema>();
    s->kind = Kind::FixedUint;
    s->width = width_bytes;
    return s;
}
SchemaPtr Schema::var_integer() {
    auto s = std::make_shared<Schema>();
    s->kind = Kind::VarInteger;
    return s;
}
SchemaPtr Schema::raw_data() {
    auto s = std::make_shared<Schema>();
    s->kind = Kind::RawData;
    return s;
}
SchemaPtr Schema::string() {
    auto s = std::make_shared<Schema>();
    s->kind = Kind::String;
    return s;
}
SchemaPtr Schema::boolean() {
    auto s = std::make_shared<Schema>();
    s->kind = Kind::Boolean;
    return s;
}
SchemaPtr Schema::record(std::vector<Field> fields) {
    auto s = std::make_shared<Schema>();
    s->kind = Kind::Record;
    s->fields = std::move(fields);
    return s;
}
SchemaPtr Schema::union_of(std::vector<Field> variants) {
    auto s = std::make_shared<Schema>();
    s->kind = Kind::Union;
    s->variants = std::move(variants);
    return s;
}
SchemaPtr Schema::list(SchemaPtr element) {
    auto s = std::make_shared<Schema>();
    s->kind = Kind::List;
    s->element = std::move(element);
    return s;
}
SchemaPtr Schema::signed_of(SchemaPtr inner) {
    auto s = std::make_shared<Schema>();
    s->kind = Kind::Signed;
    s->inner = std::move(inner);
    return s;
}
SchemaPtr Schema::encrypted_of(SchemaPtr inner) {
    auto s = std::make_shared<Schema>();
    s->kind = Kind::Encrypted;
    s->inner = std::move(inner);
    return s;
}
SchemaPtr Schema::authenticated_of(SchemaPtr inner) {
    auto s = std::make_shared<Schema>();
    s->kind = Kind::Authenticated;
    s->inner = std::move(inner);
    return s;
}

WireValue WireValue::list(ValueList elems) { return WireValue{Storage{std::move(elems)}}; }

WireValue WireValue::variant(size_t index, WireValue payload) {
    UnionValue u;
    u.index = index;
    u.payload = std::make_shared<WireValue>(std::move(payload));
    return WireValue{Storage{std::move(u)}};
}
WireValue WireValue::variant(size_t index) {
    UnionValue u;
    u.index = index;
    return WireValue{Storage{std::move(u)}};
}
WireValue WireValue::signed_value(WireValue inner, Bytes sig) {
    SignedValue s;
    s.inner = std::make_shared<WireValue>(std::move(inner));
    s.signature = std::move(sig);
    return WireValue{Storage{std::move(s)}};
}
WireValue WireValue::authenticated(std::string method, Bytes key, WireValue inner, Bytes sig) {
    AuthValue a;
    a.method = std::move(method);
    a.key = std::move(key);
    a.inner = std::make_shared<WireValue>(std::move(inner));
    a.signature = std::move(sig);
    return WireValue{Storage{std::move(a)}};
}

bool UnionValue::operator==(const UnionValue& o) const {
    if (index != o.index || !payload != !o.payload) return false;
    return !payload || *payload == *o.payload;
}

bool SignedValue::operator==(const SignedValue& o) const {
    return signature == o.signature && *inner == *o.inner;
}

bool AuthValue::operator==(const AuthValue& o) const {
    return method == o.method && key == o.key && signature == o.signature && *inner == *o.inner;
}

void encode_base128_count(uint64_t value, Bytes& out) {
    uint8_t digits[10];
    int n = 0;
    do {
        digits[n++] = static_cast<uint8_t>(value % 128);
        value /= 128;
    } while (value != 0);
    // most significant first; final digit carries the terminator bit
    for (int i = n - 1; i > 0; --i) out.push_back(digits[i]);
    out.push_back(static_cast<uint8_t>(digits[0] | 0x80));
}

Bytes encode_base128_count(uint64_t value) {
    Bytes out;
    encode_base128_count(value, out);
    return out;
}

CountResult decode_base128_count(ByteReader& in) {
    CountResult r;
    uint64_t acc = 0;
    size_t digits = 0;
    for (;;) {
        uint8_t b = in.u8();
        ++digits;
        if (digits > kMaxCountDigits) throw OverflowError{"base-128 count too long"};
        uint8_t digit = b & 0x7f;
        if (digits == 1 && digit == 0 && (b & 0x80) == 0) r.canonical = false;
        if (acc > (UINT64_MAX - digit) / 128) throw OverflowError{"base-128 count overflow"};
        acc = acc * 128 + digit;
        if (b & 0x80) break;
    }
    // 9 full digits can exceed 2^63; cap per the documented limit
    if (acc >= (uint64_t{1} << 63)) throw OverflowError{"base-128 count exceeds cap"};
    r.value = acc;
    r.consumed = digits;
    return r;
}

CountResult decode_base128_count(ByteView bytes) {
    ByteReader in(bytes);
    return decode_base128_count(in);
}

void encode_varinteger(uint64_t value, Bytes& out) {
    uint8_t mag[8];
    int len = 0;
    uint64_t v = value;
    while (v != 0) {
        mag[len++] = static_cast<uint8_t>(v & 0xff);
        v >>= 8;
    }
    encode_base128_count(static_cast<uint64_t>(len), out);
    for (int i = len - 1; i >= 0; --i) out.push_back(mag[i]);
}

Bytes encode_varinteger(uint64_t value) {
    Bytes out;
    encode_varinteger(value, out);
    return out;
}

uint64_t decode_varinteger(ByteReader& in) {
    CountResult len = decode_base128_count(in);
    if (len.value > 8) throw OverflowError{"integer magnitude exceeds 64 bits"};
    uint64_t v = 0;
    for (uint64_t i = 0; i < len.value; ++i) v = v << 8 | in.u8();
    return v;
}

namespace {

void encode_length_prefixed(ByteView data, Bytes& out) {
    encode_base128_count(data.size(), out);
    out.insert(out.end(), data.begin(), data.end());
}

Bytes decode_length_prefixed(ByteReader& in) {
    CountResult len = decode_base128_count(in);
    ByteView v = in.raw(len.value);
    return Bytes(v.begin(), v.end());
}

[[noreturn]] void mismatch(const char* what) { throw SchemaMismatchError(what); }

}  // namespace

void encode_value(const SchemaPtr& schema, const WireValue& value, Bytes& out) {
    switch (schema->kind) {
        case Kind::FixedUint: {
            if (!value.holds_integer()) mismatch("expected integer for fixed-uint");
            uint64_t v = value.as_integer();
            if (schema->width < 8 && v >> (8 * schema->width) != 0)
                mismatch("fixed-uint value out of range");
            ByteWriter(out).be(v, schema->width);
            return;
        }
        case Kind::VarInteger:
            if (!value.holds_integer()) mismatch("expected integer for var-integer");
            encode_varinteger(value.as_integer(), out);
            return;
        case Kind::RawData:
            if (!std::holds_alternative<Bytes>(value.storage())) mismatch("expected raw data");
            encode_length_prefixed(value.as_raw(), out);
            return;
        case Kind::String: {
            if (!std::holds_alternative<std::string>(value.storage())) mismatch("expected string");
            const std::string& s = value.as_text();
            encode_length_prefixed(ByteView(reinterpret_cast<const uint8_t*>(s.data()), s.size()),
                                   out);
            return;
        }
        case Kind::Boolean:
            if (!std::holds_alternative<bool>(value.storage())) mismatch("expected boolean");
            out.push_back(value.as_boolean() ? 1 : 0);
            return;
        case Kind::Record: {
            if (!value.holds_list()) mismatch("expected record fields");
            const ValueList& fields = value.items();
            if (fields.size() != schema->fields.size()) mismatch("record arity mismatch");
            for (size_t i = 0; i < fields.size(); ++i)
                encode_value(schema->fields[i].schema, fields[i], out);
            return;
        }
        case Kind::Union: {
            if (!value.holds_union()) mismatch("expected union value");
            const UnionValue& u = value.as_union();
            if (u.index >= schema->variants.size()) mismatch("union selector out of range");
            encode_varinteger(u.index, out);
            const SchemaPtr& vs = schema->variants[u.index].schema;
            bool empty_variant = vs->kind == Kind::Record && vs->fields.empty();
            if (empty_variant) {
                if (u.payload && !u.payload->items().empty()) mismatch("payload on empty variant");
                if (u.payload) encode_value(vs, *u.payload, out);
                return;
            }
            if (!u.payload) mismatch("missing union payload");
            encode_value(vs, *u.payload, out);
            return;
        }
        case Kind::List: {
            if (!value.holds_list()) mismatch("expected list");
            const ValueList& elems = value.items();
            encode_base128_count(elems.size(), out);
            for (const WireValue& e : elems) encode_value(schema->element, e, out);
            return;
        }
        case Kind::Signed: {
            if (!std::holds_alternative<SignedValue>(value.storage())) mismatch("expected signed");
            const SignedValue& s = value.as_signed();
            encode_value(schema->inner, *s.inner, out);
            encode_length_prefixed(s.signature, out);
            return;
        }
        case Kind::Encrypted:
            if (!std::holds_alternative<EncryptedValue>(value.storage()))
                mismatch("expected encrypted blob");
            encode_length_prefixed(value.as_encrypted().blob, out);
            return;
        case Kind::Authenticated: {
            if (!std::holds_alternative<AuthValue>(value.storage()))
                mismatch("expected authenticated value");
            const AuthValue& a = value.as_auth();
            encode_length_prefixed(
                ByteView(reinterpret_cast<const uint8_t*>(a.method.data()), a.method.size()), out);
            encode_length_prefixed(a.key, out);
            encode_value(schema->inner, *a.inner, out);
            encode_length_prefixed(a.signature, out);
            return;
        }
    }
    mismatch("unknown schema kind");
}

Bytes encode_value(const SchemaPtr& schema, const WireValue& value) {
    Bytes out;
    encode_value(schema, value, out);
    return out;
}

WireValue decode_value(const SchemaPtr& schema, ByteReader& in) {
    switch (schema->kind) {
        case Kind::FixedUint:
            return WireValue::integer(in.be(schema->width));
        case Kind::VarInteger:
            return WireValue::integer(decode_varinteger(in));
        case Kind::RawData:
            return WireValue::raw(decode_length_prefixed(in));
        case Kind::String: {
            Bytes b = decode_length_prefixed(in);
            return WireValue::text(std::string(b.begin(), b.end()));
        }
        case Kind::Boolean:
            // any non-zero byte is true
            return WireValue::boolean(in.u8() != 0);
        case Kind::Record: {
            ValueList fields;
            fields.reserve(schema->fields.size());
            for (const auto& f : schema->fields) fields.push_back(decode_value(f.schema, in));
            return WireValue::record(std::move(fields));
        }
        case Kind::Union: {
            uint64_t idx = decode_varinteger(in);
            if (idx >= schema->variants.size())
                throw SchemaMismatchError("union selector out of range");
            const SchemaPtr& vs = schema->variants[idx].schema;
            if (vs->kind == Kind::Record && vs->fields.empty())
                return WireValue::variant(static_cast<size_t>(idx));
            return WireValue::variant(static_cast<size_t>(idx), decode_value(vs, in));
        }
        case Kind::List: {
            CountResult n = decode_base128_count(in);
            // zero-width elements exist (empty records), so this is a loose
            // cap rather than a strict one-byte-per-element bound
            if (n.value > in.remaining() * 64 + 64)
                throw SchemaMismatchError("list count implausible for input size");
            ValueList elems;
            elems.reserve(static_cast<size_t>(std::min<uint64_t>(n.value, 4096)));
            for (uint64_t i = 0; i < n.value; ++i)
                elems.push_back(decode_value(schema->element, in));
            return WireValue::list(std::move(elems));
        }
        case Kind::Signed: {
            WireValue inner = decode_value(schema->inner, in);
            Bytes sig = decode_length_prefixed(in);
            return WireValue::signed_value(std::move(inner), std::move(sig));
        }
        case Kind::Encrypted:
            return WireValue::encrypted(decode_length_prefixed(in));
        case Kind::Authenticated: {
            Bytes method = decode_length_prefixed(in);
            Bytes key = decode_length_prefixed(in);
            WireValue inner = decode_value(schema->inner, in);
            Bytes sig = decode_length_prefixed(in);
            return WireValue::authenticated(std::string(method.begin(), method.end()),
                                            std::move(key), std::move(inner), std::move(sig));
        }
    }
    throw SchemaMismatchError("unknown schema kind");
}

DecodedValue decode_value(const SchemaPtr& schema, ByteView bytes) {
    ByteReader in(bytes);
    DecodedValue r;
    r.value = decode_value(schema, in);
    r.consumed = in.pos();
    return r;
}

bool validates(const SchemaPtr& schema, const WireValue& value) {
    try {
        Bytes scratch;
        encode_value(schema, value, scratch);
        return true;
    } catch (const SchemaMismatchError&) {
        return false;
    }
}

}  // namespace hca::wire
