#pragma once

#include <string>

#include "hca/wire/schema.hpp"

namespace hca::wire {

// Canonical single-line text rendering used by the golden conformance corpus.
// Record fields render as name=..., unions as VariantName(...), bytes as hex.
std::string render_value(const SchemaPtr& schema, const WireValue& value);

}  // namespace hca::wire
