#include "hca/wire/generate.hpp"

namespace hca::wire {

namespace {

uint64_t bounded(std::mt19937_64& rng, uint64_t n) { return n == 0 ? 0 : rng() % n; }

Bytes random_bytes(std::mt19937_64& rng, size_t max_len) {
    Bytes b(bounded(rng, max_len + 1));
    for (auto& x : b) x = static_cast<uint8_t>(rng());
    return b;
}

std::string random_text(std::mt19937_64& rng, size_t max_len) {
    static const char alphabet[] = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 _-./";
    std::string s(bounded(rng, max_len + 1), ' ');
    for (auto& ch : s) ch = alphabet[bounded(rng, sizeof(alphabet) - 1)];
    return s;
}

WireValue gen(const SchemaPtr& s, std::mt19937_64& rng, const GeneratorLimits& lim,
              size_t depth) {
    switch (s->kind) {
        case Kind::FixedUint: {
            uint64_t v = rng();
            if (s->width < 8) v &= (uint64_t{1} << (8 * s->width)) - 1;
            return WireValue::integer(v);
        }
        case Kind::VarInteger: {
            // bias toward small magnitudes but cover the full 63-bit range
            int shift = static_cast<int>(bounded(rng, 8)) * 8;
            return WireValue::integer((rng() >> 1) >> shift);
        }
        case Kind::RawData:
            return WireValue::raw(random_bytes(rng, lim.max_bytes));
        case Kind::String:
            return WireValue::text(random_text(rng, lim.max_bytes));
        case Kind::Boolean:
            return WireValue::boolean((rng() & 1) != 0);
        case Kind::Record: {
            ValueList fields;
            fields.reserve(s->fields.size());
            for (const auto& f : s->fields) fields.push_back(gen(f.schema, rng, lim, depth + 1));
            return WireValue::record(std::move(fields));
        }
        case Kind::Union: {
            size_t idx = static_cast<size_t>(bounded(rng, s->variants.size()));
            const SchemaPtr& vs = s->variants[idx].schema;
            if (vs->kind == Kind::Record && vs->fields.empty()) return WireValue::variant(idx);
            return WireValue::variant(idx, gen(vs, rng, lim, depth + 1));
        }
        case Kind::List: {
            size_t n = depth >= lim.max_depth ? 0 : static_cast<size_t>(bounded(rng, lim.max_list + 1));
            ValueList elems;
            elems.reserve(n);
            for (size_t i = 0; i < n; ++i) elems.push_back(gen(s->element, rng, lim, depth + 1));
            return WireValue::list(std::move(elems));
        }
        case Kind::Signed:
            return WireValue::signed_value(gen(s->inner, rng, lim, depth + 1),
                                           random_bytes(rng, lim.max_bytes));
        case Kind::Encrypted:
            return WireValue::encrypted(random_bytes(rng, lim.max_bytes));
        case Kind::Authenticated:
            return WireValue::authenticated(random_text(rng, 8), random_bytes(rng, 8),
                                            gen(s->inner, rng, lim, depth + 1),
                                            random_bytes(rng, lim.max_bytes));
    }
    return WireValue::integer(0);
}

}  // namespace

WireValue generate_value(const SchemaPtr& schema, std::mt19937_64& rng,
                         const GeneratorLimits& limits) {
    return gen(schema, rng, limits, 0);
}

}  // namespace hca::wire
