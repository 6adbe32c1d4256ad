#include "hca/ident/identity.hpp"

#include <algorithm>

#include "hca/wire/registry.hpp"

namespace hca::ident {

namespace {

// FNV-1a, the workhorse behind the mock signatures and key stream.
uint64_t fnv1a(ByteView data, uint64_t seed = 0xcbf29ce484222325ull) {
    uint64_t h = seed;
    for (uint8_t b : data) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a_str(const std::string& s, uint64_t seed) {
    return fnv1a(ByteView(reinterpret_cast<const uint8_t*>(s.data()), s.size()), seed);
}

Bytes digest8(uint64_t h) {
    Bytes out(8);
    for (int i = 0; i < 8; ++i) out[i] = static_cast<uint8_t>(h >> (8 * (7 - i)));
    return out;
}

// The mock derives the secret from the public key so that verification works
// with the public half alone. Obviously not secure; fine for simulation.
Bytes mock_secret_for(ByteView public_key) {
    return digest8(fnv1a(public_key, fnv1a_str("mock-secret", 0xcbf29ce484222325ull)));
}

}  // namespace

const SingleIdentity* Identity::for_method(const std::string& method) const {
    for (const auto& k : keys)
        if (k.method == method) return &k;
    return nullptr;
}

bool Identity::operator==(const Identity& other) const {
    if (keys.size() != other.keys.size()) return false;
    auto a = keys, b = other.keys;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return a == b;
}

bool Identity::operator<(const Identity& other) const {
    auto a = keys, b = other.keys;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return a < b;
}

std::string Identity::fingerprint() const {
    auto sorted = keys;
    std::sort(sorted.begin(), sorted.end());
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& k : sorted) {
        h = fnv1a_str(k.method, h);
        h = fnv1a(k.key, h);
    }
    return to_hex(digest8(h));
}

Identity PrincipalKeys::identity() const {
    Identity id;
    for (const auto& e : entries) id.keys.push_back({e.method, e.public_key});
    return id;
}

const PrincipalEntry* PrincipalKeys::for_method(const std::string& method) const {
    for (const auto& e : entries)
        if (e.method == method) return &e;
    return nullptr;
}

std::pair<Bytes, Bytes> MockProvider::generate_keypair(std::mt19937_64& rng) const {
    Bytes pub(16);
    for (auto& b : pub) b = static_cast<uint8_t>(rng());
    return {pub, mock_secret_for(pub)};
}

Bytes MockProvider::sign(ByteView body, ByteView secret_key) const {
    return digest8(fnv1a(body, fnv1a(secret_key)));
}

bool MockProvider::verify(ByteView body, ByteView signature, ByteView public_key) const {
    Bytes expected = sign(body, mock_secret_for(public_key));
    return signature.size() == expected.size() &&
           std::equal(signature.begin(), signature.end(), expected.begin());
}

Bytes MockProvider::encrypt(ByteView plain, ByteView key) const {
    Bytes out(plain.begin(), plain.end());
    uint64_t stream = fnv1a(key, fnv1a_str(method_, 0x9e3779b97f4a7c15ull));
    for (size_t i = 0; i < out.size(); ++i) {
        stream = stream * 6364136223846793005ull + 1442695040888963407ull;
        out[i] ^= static_cast<uint8_t>(stream >> 33);
    }
    return out;
}

Bytes MockProvider::decrypt(ByteView cipher, ByteView key) const {
    return encrypt(cipher, key);  // XOR stream is its own inverse
}

Bytes MockProvider::generate_shared_key(std::mt19937_64& rng) const {
    Bytes key(16);
    for (auto& b : key) b = static_cast<uint8_t>(rng());
    return key;
}

void ProviderRegistry::add(std::shared_ptr<const CryptoProvider> provider) {
    providers_[provider->method()] = std::move(provider);
}

const CryptoProvider& ProviderRegistry::at(const std::string& method) const {
    const CryptoProvider* p = find(method);
    if (!p) throw UnknownMethodError(method);
    return *p;
}

const CryptoProvider* ProviderRegistry::find(const std::string& method) const {
    auto it = providers_.find(method);
    return it == providers_.end() ? nullptr : it->second.get();
}

const SingleIdentity* ProviderRegistry::preferred(const Identity& id) const {
    const SingleIdentity* best = nullptr;
    int best_rank = -1;
    for (const auto& k : id.keys) {
        const CryptoProvider* p = find(k.method);
        if (p && p->strength_rank() > best_rank) {
            best = &k;
            best_rank = p->strength_rank();
        }
    }
    return best;
}

const ProviderRegistry& ProviderRegistry::default_instance() {
    static const ProviderRegistry reg = [] {
        ProviderRegistry r;
        r.add(std::make_shared<MockProvider>("mock", 1));
        r.add(std::make_shared<MockProvider>("mock-strong", 2));
        return r;
    }();
    return reg;
}

std::pair<Identity, PrincipalKeys> generate_identity(std::mt19937_64& rng,
                                                     const std::vector<std::string>& methods,
                                                     const ProviderRegistry& registry) {
    if (methods.empty()) throw UnknownMethodError("(empty method list)");
    PrincipalKeys keys;
    for (const auto& m : methods) {
        const CryptoProvider& p = registry.at(m);
        auto [pub, sec] = p.generate_keypair(rng);
        keys.entries.push_back({m, std::move(pub), std::move(sec)});
    }
    return {keys.identity(), keys};
}

PrincipalKeys mock_principal(const Identity& id) {
    PrincipalKeys keys;
    for (const auto& k : id.keys) keys.entries.push_back({k.method, k.key, mock_secret_for(k.key)});
    return keys;
}

wire::WireValue seal_signed(const ProviderRegistry& reg, const wire::SchemaPtr& inner_schema,
                            wire::WireValue inner, const PrincipalKeys& signer,
                            const std::string& method) {
    const PrincipalEntry* e = signer.for_method(method);
    if (!e) throw UnknownMethodError(method);
    Bytes body = wire::encode_value(inner_schema, inner);
    Bytes sig = reg.at(method).sign(body, e->secret_key);
    return wire::WireValue::signed_value(std::move(inner), std::move(sig));
}

bool verify_signed(const ProviderRegistry& reg, const wire::SchemaPtr& inner_schema,
                   const wire::WireValue& signed_value, const SingleIdentity& signer) {
    const CryptoProvider* p = reg.find(signer.method);
    if (!p) return false;
    const auto& sv = signed_value.as_signed();
    Bytes body = wire::encode_value(inner_schema, *sv.inner);
    return p->verify(body, sv.signature, signer.key);
}

wire::WireValue seal_authenticated(const ProviderRegistry& reg,
                                   const wire::SchemaPtr& inner_schema, wire::WireValue inner,
                                   const PrincipalKeys& signer, const std::string& method) {
    const PrincipalEntry* e = signer.for_method(method);
    if (!e) throw UnknownMethodError(method);
    Bytes body = wire::encode_value(inner_schema, inner);
    Bytes sig = reg.at(method).sign(body, e->secret_key);
    return wire::WireValue::authenticated(method, e->public_key, std::move(inner),
                                          std::move(sig));
}

VerifiedAuth verify_authenticated(const ProviderRegistry& reg,
                                  const wire::SchemaPtr& inner_schema,
                                  const wire::WireValue& auth_value) {
    const auto& a = auth_value.as_auth();
    VerifiedAuth result;
    result.signer = {a.method, a.key};
    const CryptoProvider* p = reg.find(a.method);
    if (!p) return result;
    Bytes body = wire::encode_value(inner_schema, *a.inner);
    result.ok = p->verify(body, a.signature, a.key);
    return result;
}

wire::WireValue seal_encrypted(const ProviderRegistry& reg, const wire::SchemaPtr& inner_schema,
                               const wire::WireValue& inner, const std::string& method,
                               ByteView key) {
    Bytes plain = wire::encode_value(inner_schema, inner);
    return wire::WireValue::encrypted(reg.at(method).encrypt(plain, key));
}

wire::WireValue open_encrypted(const ProviderRegistry& reg, const wire::SchemaPtr& inner_schema,
                               const wire::WireValue& encrypted_value, const std::string& method,
                               ByteView key) {
    Bytes plain = reg.at(method).decrypt(encrypted_value.as_encrypted().blob, key);
    return wire::decode_value(inner_schema, ByteView(plain)).value;
}

wire::ChannelCipher channel_cipher(const ProviderRegistry& reg, const std::string& method,
                                   Bytes shared_key) {
    const CryptoProvider& p = reg.at(method);
    wire::ChannelCipher cipher;
    cipher.encrypt = [&p, shared_key](ByteView data) { return p.encrypt(data, shared_key); };
    cipher.decrypt = [&p, shared_key](ByteView data) { return p.decrypt(data, shared_key); };
    return cipher;
}

namespace {

wire::SchemaPtr certificate_body_schema() {
    return wire::MessageRegistry::instance().common().certificate->fields[1].schema->inner;
}

wire::WireValue cert_body_to_wire(const CertificateBody& b) {
    using wire::WireValue;
    return WireValue::record({
        WireValue::integer(b.id),
        identity_to_wire(b.identity),
        WireValue::integer(b.version),
        date_to_wire(b.start),
        date_to_wire(b.end),
        WireValue::text(b.authority_name),
        WireValue::text(b.description),
    });
}

CertificateBody cert_body_from_wire(const wire::WireValue& v) {
    CertificateBody b;
    b.id = v.field(0).as_integer();
    b.identity = identity_from_wire(v.field(1));
    b.version = v.field(2).as_integer();
    b.start = date_from_wire(v.field(3));
    b.end = date_from_wire(v.field(4));
    b.authority_name = v.field(5).as_text();
    b.description = v.field(6).as_text();
    return b;
}

}  // namespace

Certificate make_certificate(const ProviderRegistry& reg, const PrincipalKeys& authority,
                             const std::string& method, CertificateBody body) {
    const PrincipalEntry* e = authority.for_method(method);
    if (!e) throw UnknownMethodError(method);
    Certificate c;
    c.method = method;
    c.authority_key = e->public_key;
    c.body = std::move(body);
    Bytes encoded = wire::encode_value(certificate_body_schema(), cert_body_to_wire(c.body));
    c.signature = reg.at(method).sign(encoded, e->secret_key);
    return c;
}

CertVerdict validate_certificate(const ProviderRegistry& reg, const Certificate& cert,
                                 const Date& now, const std::vector<Identity>& trusted) {
    const CryptoProvider* p = reg.find(cert.method);
    Bytes encoded = wire::encode_value(certificate_body_schema(), cert_body_to_wire(cert.body));
    if (!p || !p->verify(encoded, cert.signature, cert.authority_key))
        return CertVerdict::BadSignature;
    bool authority_known = false;
    for (const auto& t : trusted) {
        for (const auto& k : t.keys) {
            if (k.key == cert.authority_key) authority_known = true;
        }
    }
    if (!authority_known) return CertVerdict::UntrustedAuthority;
    if (now < cert.body.start) return CertVerdict::NotYetValid;
    if (cert.body.end < now) return CertVerdict::Expired;
    return CertVerdict::Valid;
}

wire::WireValue identity_to_wire(const Identity& id) {
    wire::ValueList keys;
    for (const auto& k : id.keys)
        keys.push_back(wire::WireValue::record(
            {wire::WireValue::text(k.method), wire::WireValue::raw(k.key)}));
    return wire::WireValue::list(std::move(keys));
}

Identity identity_from_wire(const wire::WireValue& v) {
    Identity id;
    for (const auto& e : v.items())
        id.keys.push_back({e.field(0).as_text(), e.field(1).as_raw()});
    return id;
}

wire::WireValue date_to_wire(const Date& d) {
    using wire::WireValue;
    return WireValue::record({
        WireValue::integer(d.year),
        WireValue::integer(d.month),
        WireValue::integer(d.day),
        WireValue::integer(d.hour),
        WireValue::integer(d.minute),
        WireValue::integer(d.second),
        WireValue::integer(d.second1000),
    });
}

Date date_from_wire(const wire::WireValue& v) {
    Date d;
    d.year = v.field(0).as_integer();
    d.month = static_cast<uint8_t>(v.field(1).as_integer());
    d.day = static_cast<uint8_t>(v.field(2).as_integer());
    d.hour = static_cast<uint8_t>(v.field(3).as_integer());
    d.minute = static_cast<uint8_t>(v.field(4).as_integer());
    d.second = static_cast<uint8_t>(v.field(5).as_integer());
    d.second1000 = static_cast<uint16_t>(v.field(6).as_integer());
    return d;
}

wire::WireValue certificate_to_wire(const Certificate& c) {
    using wire::WireValue;
    return WireValue::record({
        WireValue::raw(c.authority_key),
        WireValue::signed_value(cert_body_to_wire(c.body), c.signature),
    });
}

Certificate certificate_from_wire(const wire::WireValue& v) {
    Certificate c;
    c.authority_key = v.field(0).as_raw();
    const auto& sv = v.field(1).as_signed();
    c.body = cert_body_from_wire(*sv.inner);
    c.signature = sv.signature;
    return c;
}

}  // namespace hca::ident
