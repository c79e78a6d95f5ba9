#include "kloak/scalar.hpp"

#include <charconv>
#include <cstdio>

#include "kloak/errors.hpp"
#include "kloak/hash.hpp"

namespace kloak {

std::string_view to_string(ScalarKind kind) {
  switch (kind) {
    case ScalarKind::Integer:
      return "integer";
    case ScalarKind::Text:
      return "text";
    case ScalarKind::Date:
      return "date";
  }
  return "integer";
}

ScalarKind scalar_kind_from_string(std::string_view text) {
  if (text == "integer" || text == "int") return ScalarKind::Integer;
  if (text == "text") return ScalarKind::Text;
  if (text == "date") return ScalarKind::Date;
  throw ValidationError("unknown scalar kind '" + std::string(text) + "'");
}

bool is_numeric_kind(ScalarKind kind) { return kind != ScalarKind::Text; }

bool scalar_matches_kind(const Scalar& value, ScalarKind kind) {
  if (kind == ScalarKind::Text) return std::holds_alternative<std::string>(value);
  return std::holds_alternative<int64_t>(value);
}

std::string format_scalar(const Scalar& value) {
  if (const auto* i = std::get_if<int64_t>(&value)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&value)) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.17g", *d);
    return buffer;
  }
  return std::get<std::string>(value);
}

Scalar parse_scalar(std::string_view text, ScalarKind kind) {
  if (kind == ScalarKind::Text) return std::string(text);
  int64_t parsed = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, parsed);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ValidationError("expected " + std::string(to_string(kind)) + " value, got '" + std::string(text) + "'");
  }
  return parsed;
}

nlohmann::json scalar_to_json(const Scalar& value) {
  return std::visit([](const auto& v) { return nlohmann::json(v); }, value);
}

Scalar scalar_from_json(const nlohmann::json& value) {
  if (value.is_number_integer()) return value.get<int64_t>();
  if (value.is_number_float()) return value.get<double>();
  if (value.is_string()) return value.get<std::string>();
  throw ParseError("scalar must be an integer, number or string, got " + value.dump());
}

nlohmann::json values_to_json(const ValueVector& values) {
  auto array = nlohmann::json::array();
  for (const auto& value : values) array.push_back(scalar_to_json(value));
  return array;
}

ValueVector values_from_json(const nlohmann::json& array) {
  ValueVector values;
  values.reserve(array.size());
  for (const auto& value : array) values.push_back(scalar_from_json(value));
  return values;
}

std::string hex64(uint64_t value) {
  char buffer[17];
  std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(value));
  return buffer;
}

}  // namespace kloak
