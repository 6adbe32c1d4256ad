#pragma once

#include <random>

#include "hca/wire/schema.hpp"

namespace hca::wire {

// Seeded random value matching a schema; drives round-trip fuzzing and the
// golden corpus generator. Sizes are kept small so deep message schemas stay
// cheap to encode.
struct GeneratorLimits {
    size_t max_list = 4;
    size_t max_bytes = 12;
    size_t max_depth = 24;
};

WireValue generate_value(const SchemaPtr& schema, std::mt19937_64& rng,
                         const GeneratorLimits& limits = {});

}  // namespace hca::wire
