#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace madm {

struct SchemaIssue {
  std::string pointer;  // JSON pointer into the validated document
  std::string message;
};

/// Checks `doc` against a JSON Schema restricted to the keywords our config
/// schemas use: type, enum, properties, required, additionalProperties
/// (boolean), items (single schema), minItems, maxItems, uniqueItems,
/// minimum, maximum, exclusiveMinimum, exclusiveMaximum (numeric), minLength
/// and local "#/definitions/..." references. Any other keyword in the schema
/// raises Error so an unsupported constraint is never silently skipped.
std::vector<SchemaIssue> validate_schema(const nlohmann::json& schema, const nlohmann::json& doc);

}  // namespace madm
