#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace kloak {

enum class ScalarKind { Integer, Text, Date };

// Dates are stored as integers (days since epoch). Doubles only appear in
// client-side results (AVG).
using Scalar = std::variant<int64_t, double, std::string>;
using ValueVector = std::vector<Scalar>;

std::string_view to_string(ScalarKind kind);
ScalarKind scalar_kind_from_string(std::string_view text);

bool is_numeric_kind(ScalarKind kind);
bool scalar_matches_kind(const Scalar& value, ScalarKind kind);

std::string format_scalar(const Scalar& value);
Scalar parse_scalar(std::string_view text, ScalarKind kind);

nlohmann::json scalar_to_json(const Scalar& value);
Scalar scalar_from_json(const nlohmann::json& value);

nlohmann::json values_to_json(const ValueVector& values);
ValueVector values_from_json(const nlohmann::json& array);

}  // namespace kloak
