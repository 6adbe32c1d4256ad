#include <random>
#include <set>

#include "doctest.h"
#include "hca/ident/identity.hpp"
#include "hca/wire/registry.hpp"

using namespace hca;
using namespace hca::ident;

TEST_CASE("identity generation is deterministic per seed") {
    std::mt19937_64 a(42), b(42), c(43);
    auto [id_a, keys_a] = generate_identity(a, {"mock"});
    auto [id_b, keys_b] = generate_identity(b, {"mock"});
    auto [id_c, keys_c] = generate_identity(c, {"mock"});
    CHECK(id_a == id_b);
    CHECK_FALSE(id_a == id_c);
}

TEST_CASE("distinct seeds never collide over many draws") {
    std::set<std::string> seen;
    for (uint64_t seed = 0; seed < 100000; ++seed) {
        std::mt19937_64 rng(seed);
        auto [id, keys] = generate_identity(rng, {"mock"});
        CHECK(seen.insert(id.fingerprint()).second);
    }
}

TEST_CASE("empty method list is rejected") {
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(generate_identity(rng, {}), UnknownMethodError);
    CHECK_THROWS_AS(generate_identity(rng, {"no-such-method"}), UnknownMethodError);
}

TEST_CASE("identity equality ignores entry order") {
    std::mt19937_64 rng(5);
    auto [id, keys] = generate_identity(rng, {"mock", "mock-strong"});
    Identity reversed;
    reversed.keys = {id.keys[1], id.keys[0]};
    CHECK(id == reversed);
}

TEST_CASE("provider selection prefers the stronger method") {
    std::mt19937_64 rng(5);
    auto [id, keys] = generate_identity(rng, {"mock", "mock-strong"});
    const auto* chosen = ProviderRegistry::default_instance().preferred(id);
    REQUIRE(chosen != nullptr);
    CHECK(chosen->method == "mock-strong");
}

TEST_CASE("sign/verify and encrypt/decrypt invert on arbitrary bytes") {
    const auto& reg = ProviderRegistry::default_instance();
    const auto& p = reg.at("mock");
    std::mt19937_64 rng(11);
    auto [pub, sec] = p.generate_keypair(rng);
    Bytes key = p.generate_shared_key(rng);
    for (int i = 0; i < 200; ++i) {
        size_t len = rng() % (i < 190 ? 512 : 65536);
        Bytes body(len);
        for (auto& x : body) x = static_cast<uint8_t>(rng());
        Bytes sig = p.sign(body, sec);
        CHECK(p.verify(body, sig, pub));
        Bytes cipher = p.encrypt(body, key);
        CHECK(p.decrypt(cipher, key) == body);
        if (!body.empty()) CHECK(cipher != body);
    }
}

TEST_CASE("authenticated seal round-trips and detects tampering") {
    const auto& reg = ProviderRegistry::default_instance();
    const auto& schemas = wire::MessageRegistry::instance().common();
    std::mt19937_64 rng(17);
    auto [id, keys] = generate_identity(rng, {"mock"});

    wire::WireValue body = wire::WireValue::record(
        {wire::WireValue::integer(5), wire::WireValue::integer(9)});
    auto schema = wire::Schema::record({{"a", schemas.integer}, {"b", schemas.integer}});

    wire::WireValue sealed = seal_authenticated(reg, schema, body, keys, "mock");
    auto verified = verify_authenticated(reg, schema, sealed);
    CHECK(verified.ok);
    CHECK(verified.signer == id.keys[0]);

    // one-bit mutation of the body breaks verification
    wire::WireValue tampered = wire::WireValue::authenticated(
        sealed.as_auth().method, sealed.as_auth().key,
        wire::WireValue::record({wire::WireValue::integer(4), wire::WireValue::integer(9)}),
        sealed.as_auth().signature);
    CHECK_FALSE(verify_authenticated(reg, schema, tampered).ok);

    // claiming a different signer fails as well
    std::mt19937_64 rng2(18);
    auto [id2, keys2] = generate_identity(rng2, {"mock"});
    wire::WireValue wrong_signer = wire::WireValue::authenticated(
        "mock", id2.keys[0].key, body, sealed.as_auth().signature);
    CHECK_FALSE(verify_authenticated(reg, schema, wrong_signer).ok);
}

TEST_CASE("certificate validation verdicts") {
    const auto& reg = ProviderRegistry::default_instance();
    std::mt19937_64 rng(23);
    auto [authority_id, authority_keys] = generate_identity(rng, {"mock"});
    auto [subject_id, subject_keys] = generate_identity(rng, {"mock"});

    CertificateBody body;
    body.id = 77;
    body.identity = subject_id;
    body.version = 1;
    body.start = Date{2025, 1, 1, 0, 0, 0, 0};
    body.end = Date{2027, 1, 1, 0, 0, 0, 0};
    body.authority_name = "testauthority";
    Certificate cert = make_certificate(reg, authority_keys, "mock", body);

    Date now{2026, 6, 15, 12, 0, 0, 0};
    CHECK(validate_certificate(reg, cert, now, {authority_id}) == CertVerdict::Valid);
    CHECK(validate_certificate(reg, cert, Date{2028, 1, 1, 0, 0, 0, 0}, {authority_id}) ==
          CertVerdict::Expired);
    CHECK(validate_certificate(reg, cert, Date{2024, 1, 1, 0, 0, 0, 0}, {authority_id}) ==
          CertVerdict::NotYetValid);
    CHECK(validate_certificate(reg, cert, now, {}) == CertVerdict::UntrustedAuthority);
    CHECK(validate_certificate(reg, cert, now, {subject_id}) == CertVerdict::UntrustedAuthority);

    Certificate forged = cert;
    forged.body.description = "edited";
    CHECK(validate_certificate(reg, forged, now, {authority_id}) == CertVerdict::BadSignature);
}

TEST_CASE("certificate wire round-trip") {
    const auto& reg = ProviderRegistry::default_instance();
    const auto& c = wire::MessageRegistry::instance().common();
    std::mt19937_64 rng(31);
    auto [authority_id, authority_keys] = generate_identity(rng, {"mock"});
    CertificateBody body;
    body.id = 3;
    body.identity = authority_id;
    body.start = Date{2026, 2, 3, 4, 5, 6, 789};
    body.end = Date{2026, 2, 3, 4, 5, 7, 0};
    Certificate cert = make_certificate(reg, authority_keys, "mock", body);

    Bytes enc = wire::encode_value(c.certificate, certificate_to_wire(cert));
    Certificate back = certificate_from_wire(wire::decode_value(c.certificate, enc).value);
    CHECK(back.authority_key == cert.authority_key);
    CHECK(back.signature == cert.signature);
    CHECK(back.body.identity == cert.body.identity);
    CHECK(back.body.start == cert.body.start);
    CHECK(back.body.start < back.body.end);
}
