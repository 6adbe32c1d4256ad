#include <random>

#include "doctest.h"
#include "hca/wire/codec.hpp"
#include "hca/wire/generate.hpp"
#include "hca/wire/registry.hpp"
#include "hca/wire/render.hpp"

using namespace hca;
using namespace hca::wire;

namespace {
Bytes b(std::initializer_list<int> xs) {
    Bytes out;
    for (int x : xs) out.push_back(static_cast<uint8_t>(x));
    return out;
}
}  // namespace

TEST_CASE("base-128 count encoding") {
    CHECK(encode_base128_count(0) == b({0x80}));
    CHECK(encode_base128_count(3) == b({0x83}));
    // 200 = 1*128 + 72, final digit carries the terminator bit
    CHECK(encode_base128_count(200) == b({0x01, 0xC8}));
    CHECK(encode_base128_count(127) == b({0xFF}));
    CHECK(encode_base128_count(128) == b({0x01, 0x80}));
}

TEST_CASE("base-128 count decoding") {
    auto r = decode_base128_count(b({0x80}));
    CHECK(r.value == 0);
    CHECK(r.consumed == 1);
    CHECK(r.canonical);

    r = decode_base128_count(b({0x01, 0xC8}));
    CHECK(r.value == 200);
    CHECK(r.consumed == 2);

    // leading zero digit decodes but is flagged non-canonical
    r = decode_base128_count(b({0x00, 0x83}));
    CHECK(r.value == 3);
    CHECK(r.consumed == 2);
    CHECK_FALSE(r.canonical);

    CHECK_THROWS_AS(decode_base128_count(b({0x01, 0x02})), TruncatedError);
    CHECK_THROWS_AS(decode_base128_count(Bytes{}), TruncatedError);
    // ten digits exceed the cap
    CHECK_THROWS_AS(decode_base128_count(b({1, 1, 1, 1, 1, 1, 1, 1, 1, 0x81})), OverflowError);
}

TEST_CASE("count codec round-trips across the value range") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 20000; ++i) {
        uint64_t v = rng() >> (rng() % 60);
        v &= (uint64_t{1} << 62) | ((uint64_t{1} << 62) - 1);  // keep below 2^63
        Bytes enc = encode_base128_count(v);
        auto dec = decode_base128_count(enc);
        CHECK(dec.value == v);
        CHECK(dec.consumed == enc.size());
        CHECK(dec.canonical);
    }
    for (uint64_t v : {uint64_t{0}, uint64_t{1}, uint64_t{127}, uint64_t{128}, uint64_t{16383},
                       uint64_t{16384}, (uint64_t{1} << 63) - 1}) {
        auto dec = decode_base128_count(encode_base128_count(v));
        CHECK(dec.value == v);
    }
}

TEST_CASE("var-integer encoding") {
    CHECK(encode_varinteger(0) == b({0x80}));  // zero is length 0
    CHECK(encode_varinteger(5) == b({0x81, 0x05}));
    CHECK(encode_varinteger(300) == b({0x82, 0x01, 0x2C}));

    // decoder accepts the non-minimal length-1 zero
    Bytes nonminimal = b({0x81, 0x00});
    ByteReader in(nonminimal);
    CHECK(decode_varinteger(in) == 0);
}

TEST_CASE("value encoding matches the marshaling rules") {
    const auto& c = MessageRegistry::instance().common();

    CHECK(encode_value(c.boolean, WireValue::boolean(true)) == b({0x01}));
    CHECK(encode_value(c.boolean, WireValue::boolean(false)) == b({0x00}));
    // any non-zero byte decodes as true
    CHECK(decode_value(c.boolean, b({0x07})).value.as_boolean() == true);

    auto bool_list = Schema::list(c.boolean);
    WireValue lst = WireValue::list({WireValue::boolean(true), WireValue::boolean(false),
                                     WireValue::boolean(true)});
    CHECK(encode_value(bool_list, lst) == b({0x83, 0x01, 0x00, 0x01}));
    CHECK(decode_value(bool_list, b({0x80})).value.items().empty());

    // maybe<X> NOTHING is just the union selector 0
    auto maybe_u64 = c.maybe(c.uint64);
    CHECK(encode_value(maybe_u64, WireValue::variant(0)) == b({0x80}));

    // fixed-size integers are big-endian
    CHECK(encode_value(c.uint32, WireValue::integer(0x01020304)) == b({1, 2, 3, 4}));

    // strings are length-count then bytes
    CHECK(encode_value(c.str, WireValue::text("hi")) == b({0x82, 'h', 'i'}));
}

TEST_CASE("schema mismatch and truncation are reported") {
    const auto& c = MessageRegistry::instance().common();
    CHECK_THROWS_AS(encode_value(c.boolean, WireValue::integer(1)), SchemaMismatchError);
    CHECK_THROWS_AS(decode_value(c.uint64, b({1, 2})), TruncatedError);
    // union selector out of range (selectors are var-integers)
    auto u = Schema::union_of({{"A", Schema::record({})}, {"B", Schema::record({})}});
    CHECK_THROWS_AS(decode_value(u, b({0x81, 0x05})), SchemaMismatchError);
}

TEST_CASE("frame header layout") {
    const auto& reg = MessageRegistry::instance();
    const auto& d = reg.at(msg::RequestConnection);

    // type 1, counter 0, empty payload equivalent: use SlowdownSocketFileCreation (empty record)
    Bytes frame = frame_message(reg.at(msg::SlowdownSocketFileCreation), 0, WireValue::record({}));
    CHECK(frame.size() == 12);
    CHECK(frame == b({0, 0, 0, 10, 0, 0, 0, 0, 0, 0, 0, 0}));

    std::mt19937_64 rng(3);
    WireValue payload = generate_value(d.payload_schema, rng);
    Bytes f2 = frame_message(d, 42, payload);
    auto parsed = parse_frame(reg, f2);
    auto* known = std::get_if<KnownMessage>(&parsed);
    REQUIRE(known != nullptr);
    CHECK(known->descriptor->type_id == msg::RequestConnection);
    CHECK(known->counter == 42);
    CHECK(known->payload == payload);
}

TEST_CASE("unknown frame types are surfaced, not fatal") {
    const auto& reg = MessageRegistry::instance();
    Bytes frame;
    ByteWriter w(frame);
    w.be(987654, 4);
    w.be(77, 8);
    w.raw(b({1, 2, 3}));
    auto parsed = parse_frame(reg, frame);
    auto* unknown = std::get_if<UnknownType>(&parsed);
    REQUIRE(unknown != nullptr);
    CHECK(unknown->type_id == 987654);
    CHECK(unknown->counter == 77);
}

TEST_CASE("registry covers the full protocol message set") {
    const auto& reg = MessageRegistry::instance();
    CHECK(reg.all().size() == 64);  // 62 protocol messages + 2 local extensions
    CHECK(reg.at(msg::RequestConnection).name == "RequestConnection");
    CHECK(reg.at(msg::TerminateShortcutAck).type_id == 62);
    CHECK(reg.by_name("Update") != nullptr);
    CHECK(reg.by_name("Update")->type_id == msg::Update);
    CHECK(reg.by_id(63) == nullptr);
}

TEST_CASE("round-trip fuzz over every registered schema") {
    const auto& reg = MessageRegistry::instance();
    std::mt19937_64 rng(20260810);
    for (const auto& [id, d] : reg.all()) {
        for (int i = 0; i < 400; ++i) {
            WireValue v = generate_value(d.payload_schema, rng);
            Bytes enc = encode_value(d.payload_schema, v);
            auto dec = decode_value(d.payload_schema, enc);
            CHECK(dec.consumed == enc.size());
            if (!(dec.value == v)) {
                CAPTURE(d.name);
                CHECK(dec.value == v);
                break;
            }
            // canonical encoder determinism
            CHECK(encode_value(d.payload_schema, v) == enc);
        }
    }
}

TEST_CASE("frame round-trip through a channel cipher") {
    const auto& reg = MessageRegistry::instance();
    ChannelCipher cipher;
    cipher.encrypt = [](ByteView v) {
        Bytes out(v.begin(), v.end());
        for (auto& x : out) x ^= 0x5a;
        return out;
    };
    cipher.decrypt = cipher.encrypt;

    std::mt19937_64 rng(5);
    const auto& d = reg.at(msg::Update);
    WireValue payload = generate_value(d.payload_schema, rng);
    Bytes frame = frame_message(d, 9, payload, &cipher);
    // ciphertext differs from the clear frame body
    Bytes clear = frame_message(d, 9, payload);
    CHECK(frame != clear);
    auto parsed = parse_frame(reg, frame, &cipher);
    auto* known = std::get_if<KnownMessage>(&parsed);
    REQUIRE(known != nullptr);
    CHECK(known->payload == payload);
}

TEST_CASE("mutation fuzz never crashes the decoder") {
    const auto& reg = MessageRegistry::instance();
    std::mt19937_64 rng(99);
    int decoded = 0, rejected = 0;
    for (const auto& [id, d] : reg.all()) {
        for (int i = 0; i < 60; ++i) {
            WireValue v = generate_value(d.payload_schema, rng);
            Bytes enc = encode_value(d.payload_schema, v);
            if (enc.empty()) continue;
            Bytes bad = enc;
            for (int k = 0; k < 3; ++k) bad[rng() % bad.size()] ^= 1 << (rng() % 8);
            if (rng() % 4 == 0) bad.resize(rng() % (bad.size() + 1));
            try {
                auto dec = decode_value(d.payload_schema, bad);
                CHECK(dec.consumed <= bad.size());
                ++decoded;
            } catch (const TruncatedError&) {
                ++rejected;
            } catch (const SchemaMismatchError&) {
                ++rejected;
            } catch (const OverflowError&) {
                ++rejected;
            }
        }
    }
    CHECK(decoded + rejected > 0);
}

TEST_CASE("render produces stable one-line text") {
    const auto& c = MessageRegistry::instance().common();
    WireValue addr = WireValue::record({
        WireValue::integer(0xdeadbeef),
        WireValue::integer(7),
        WireValue::record({WireValue::text("mock"), WireValue::raw(b({0xab}))}),
    });
    std::string text = render_value(c.socket_file_addr, addr);
    CHECK(text ==
          "{comAddress=3735928559, socketId=7, pubKey={method=\"mock\", key=0xab}}");
}
