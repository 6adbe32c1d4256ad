#pragma once

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hca/bytes.hpp"
#include "hca/wire/frame.hpp"

namespace hca::ident {

struct SingleIdentity {
    std::string method;
    Bytes key;  // public key

    bool operator==(const SingleIdentity&) const = default;
    bool operator<(const SingleIdentity& o) const {
        return method != o.method ? method < o.method : key < o.key;
    }
};

// A set of public keys, at most one per method. Equality ignores order.
struct Identity {
    std::vector<SingleIdentity> keys;

    bool empty() const { return keys.empty(); }
    const SingleIdentity* for_method(const std::string& method) const;
    bool operator==(const Identity& other) const;
    bool operator<(const Identity& other) const;  // canonical (sorted) comparison
    std::string fingerprint() const;              // short stable label for logs
};

struct PrincipalEntry {
    std::string method;
    Bytes public_key;
    Bytes secret_key;
};

struct PrincipalKeys {
    std::vector<PrincipalEntry> entries;

    Identity identity() const;
    const PrincipalEntry* for_method(const std::string& method) const;
};

// Uniform interface over one cryptographic method. The shipped mock is
// deterministic and NOT secure; it exists so protocol logic can be simulated
// and tested without real ciphers.
class CryptoProvider {
public:
    virtual ~CryptoProvider() = default;
    virtual std::string method() const = 0;
    virtual int strength_rank() const = 0;
    virtual std::pair<Bytes, Bytes> generate_keypair(std::mt19937_64& rng) const = 0;
    virtual Bytes sign(ByteView body, ByteView secret_key) const = 0;
    virtual bool verify(ByteView body, ByteView signature, ByteView public_key) const = 0;
    virtual Bytes encrypt(ByteView plain, ByteView key) const = 0;
    virtual Bytes decrypt(ByteView cipher, ByteView key) const = 0;
    virtual Bytes generate_shared_key(std::mt19937_64& rng) const = 0;
};

class MockProvider : public CryptoProvider {
public:
    explicit MockProvider(std::string method = "mock", int rank = 1)
        : method_(std::move(method)), rank_(rank) {}

    std::string method() const override { return method_; }
    int strength_rank() const override { return rank_; }
    std::pair<Bytes, Bytes> generate_keypair(std::mt19937_64& rng) const override;
    Bytes sign(ByteView body, ByteView secret_key) const override;
    bool verify(ByteView body, ByteView signature, ByteView public_key) const override;
    Bytes encrypt(ByteView plain, ByteView key) const override;
    Bytes decrypt(ByteView cipher, ByteView key) const override;
    Bytes generate_shared_key(std::mt19937_64& rng) const override;

private:
    std::string method_;
    int rank_;
};

class UnknownMethodError : public std::runtime_error {
public:
    explicit UnknownMethodError(const std::string& method)
        : std::runtime_error("unknown crypto method: " + method) {}
};

// Providers keyed by method name; method names match node configuration
// entries.
class ProviderRegistry {
public:
    void add(std::shared_ptr<const CryptoProvider> provider);
    const CryptoProvider& at(const std::string& method) const;
    const CryptoProvider* find(const std::string& method) const;
    // strongest registered method offered by the identity
    const SingleIdentity* preferred(const Identity& id) const;

    static const ProviderRegistry& default_instance();  // "mock" + "mock-strong"

private:
    std::map<std::string, std::shared_ptr<const CryptoProvider>> providers_;
};

// Fresh identity with one keypair per requested method. Identical seeds give
// identical identities.
std::pair<Identity, PrincipalKeys> generate_identity(std::mt19937_64& rng,
                                                     const std::vector<std::string>& methods,
                                                     const ProviderRegistry& registry =
                                                         ProviderRegistry::default_instance());

// Mock-only: the mock scheme derives secrets from public keys, so a public
// identity is enough to reconstruct principal keys. Simulation convenience,
// impossible with real ciphers.
PrincipalKeys mock_principal(const Identity& id);

// Wire helpers for the signed/authenticated/encrypted schema combinators.
wire::WireValue seal_signed(const ProviderRegistry& reg, const wire::SchemaPtr& inner_schema,
                            wire::WireValue inner, const PrincipalKeys& signer,
                            const std::string& method);
bool verify_signed(const ProviderRegistry& reg, const wire::SchemaPtr& inner_schema,
                   const wire::WireValue& signed_value, const SingleIdentity& signer);

wire::WireValue seal_authenticated(const ProviderRegistry& reg,
                                   const wire::SchemaPtr& inner_schema, wire::WireValue inner,
                                   const PrincipalKeys& signer, const std::string& method);
struct VerifiedAuth {
    bool ok = false;
    SingleIdentity signer;
};
VerifiedAuth verify_authenticated(const ProviderRegistry& reg,
                                  const wire::SchemaPtr& inner_schema,
                                  const wire::WireValue& auth_value);

wire::WireValue seal_encrypted(const ProviderRegistry& reg, const wire::SchemaPtr& inner_schema,
                               const wire::WireValue& inner, const std::string& method,
                               ByteView key);
wire::WireValue open_encrypted(const ProviderRegistry& reg, const wire::SchemaPtr& inner_schema,
                               const wire::WireValue& encrypted_value, const std::string& method,
                               ByteView key);

// Channel cipher bound to a shared key.
wire::ChannelCipher channel_cipher(const ProviderRegistry& reg, const std::string& method,
                                   Bytes shared_key);

// Calendar timestamp with millisecond precision; compared lexicographically
// over (year, month, day, hour, minute, second, second1000).
struct Date {
    uint64_t year = 0;
    uint8_t month = 0, day = 0, hour = 0, minute = 0;
    uint8_t second = 0;
    uint16_t second1000 = 0;

    auto tie() const { return std::tie(year, month, day, hour, minute, second, second1000); }
    bool operator==(const Date& o) const { return tie() == o.tie(); }
    bool operator<(const Date& o) const { return tie() < o.tie(); }
    bool operator<=(const Date& o) const { return tie() <= o.tie(); }
};

struct CertificateBody {
    uint64_t id = 0;
    Identity identity;
    uint64_t version = 0;
    Date start;
    Date end;
    std::string authority_name;
    std::string description;
};

struct Certificate {
    Bytes authority_key;  // public key of the signing authority
    CertificateBody body;
    Bytes signature;  // over the encoded body record
    std::string method = "mock";
};

Certificate make_certificate(const ProviderRegistry& reg, const PrincipalKeys& authority,
                             const std::string& method, CertificateBody body);

enum class CertVerdict { Valid, Expired, NotYetValid, UntrustedAuthority, BadSignature };

CertVerdict validate_certificate(const ProviderRegistry& reg, const Certificate& cert,
                                 const Date& now, const std::vector<Identity>& trusted);

// Conversions between the domain structs above and their wire records.
wire::WireValue identity_to_wire(const Identity& id);
Identity identity_from_wire(const wire::WireValue& v);
wire::WireValue date_to_wire(const Date& d);
Date date_from_wire(const wire::WireValue& v);
wire::WireValue certificate_to_wire(const Certificate& c);
Certificate certificate_from_wire(const wire::WireValue& v);

}  // namespace hca::ident
