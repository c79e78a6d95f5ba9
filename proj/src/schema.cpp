#include "kloak/schema.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_set>

#include "kloak/errors.hpp"

namespace kloak {

std::string_view to_string(Policy policy) { return policy == Policy::KAnon ? "kanon" : "public"; }

namespace {

Policy policy_from_string(const std::string& text, const std::string& where) {
  if (text == "public") return Policy::Public;
  if (text == "kanon") return Policy::KAnon;
  throw ValidationError(where + ": unknown policy '" + text + "'");
}

template <typename T>
T required(const nlohmann::json& object, const char* key, const std::string& where) {
  if (!object.is_object() || !object.contains(key)) {
    throw ValidationError(where + ": missing field '" + key + "'");
  }
  try {
    return object.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(where + ": field '" + key + "' has the wrong type");
  }
}

void validate_catalog(const Catalog& catalog) {
  if (catalog.relations().empty()) throw ValidationError("no relations");

  std::set<std::string> relation_names;
  std::map<std::string, ScalarKind> domain_kinds;
  for (const auto& relation : catalog.relations()) {
    if (relation.name.empty()) throw ValidationError("relation with empty name");
    if (!relation_names.insert(relation.name).second) {
      throw ValidationError("duplicate relation '" + relation.name + "'");
    }
    if (relation.attributes.empty()) {
      throw ValidationError("relation '" + relation.name + "' has no attributes");
    }
    std::set<std::string> attribute_names;
    for (const auto& attribute : relation.attributes) {
      if (!attribute_names.insert(attribute.name).second) {
        throw ValidationError("duplicate attribute '" + attribute.name + "' in relation '" + relation.name + "'");
      }
      const auto [it, inserted] = domain_kinds.emplace(attribute.domain, attribute.kind);
      if (!inserted && it->second != attribute.kind) {
        throw ValidationError("domain '" + attribute.domain + "' used with different kinds (attribute '" +
                              relation.name + "." + attribute.name + "')");
      }
    }
    if (relation.entity_attr.empty() || !relation.find(relation.entity_attr)) {
      throw ValidationError("entity_attr '" + relation.entity_attr + "' missing from relation '" + relation.name +
                            "'");
    }
  }

  for (const auto& fd : catalog.fds()) {
    if (fd.lhs.empty() || fd.rhs.empty()) throw ValidationError("functional dependency with empty side");
  }
}

}  // namespace

std::optional<std::size_t> RelationDef::find(std::string_view attr) const {
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    if (attributes[i].name == attr) return i;
  }
  return std::nullopt;
}

std::size_t RelationDef::index_of(std::string_view attr) const {
  if (const auto index = find(attr)) return *index;
  throw UnknownAttribute("unknown attribute '" + name + "." + std::string(attr) + "'");
}

const AttributeDef& RelationDef::attribute(std::string_view attr) const { return attributes[index_of(attr)]; }

Catalog::Catalog(std::vector<RelationDef> relations, std::vector<FunctionalDependency> fds)
    : relations_(std::move(relations)), fds_(std::move(fds)) {
  for (auto& relation : relations_) {
    for (auto& attribute : relation.attributes) {
      if (attribute.domain.empty()) attribute.domain = attribute.name;
    }
  }
  validate_catalog(*this);
}

const RelationDef* Catalog::find(std::string_view relation) const {
  for (const auto& candidate : relations_) {
    if (candidate.name == relation) return &candidate;
  }
  return nullptr;
}

const RelationDef& Catalog::relation(std::string_view relation) const {
  if (const auto* found = find(relation)) return *found;
  throw UnknownAttribute("unknown relation '" + std::string(relation) + "'");
}

const AttributeDef& Catalog::attribute(std::string_view relation, std::string_view attr) const {
  return this->relation(relation).attribute(attr);
}

std::size_t Catalog::kanon_attribute_count() const {
  std::size_t count = 0;
  for (const auto& relation : relations_) {
    count += std::count_if(relation.attributes.begin(), relation.attributes.end(),
                           [](const auto& attribute) { return attribute.policy == Policy::KAnon; });
  }
  return count;
}

Catalog catalog_from_json(const nlohmann::json& document) {
  if (!document.is_object()) throw ValidationError("catalog document must be an object");
  if (!document.contains("relations") || !document.at("relations").is_array()) {
    throw ValidationError("catalog: missing field 'relations'");
  }
  std::vector<RelationDef> relations;
  for (const auto& entry : document.at("relations")) {
    RelationDef relation;
    relation.name = required<std::string>(entry, "name", "relation");
    const auto where = "relation '" + relation.name + "'";
    if (!entry.contains("attributes") || !entry.at("attributes").is_array()) {
      throw ValidationError(where + ": missing field 'attributes'");
    }
    for (const auto& attribute_entry : entry.at("attributes")) {
      AttributeDef attribute;
      attribute.name = required<std::string>(attribute_entry, "name", where);
      const auto attribute_where = where + " attribute '" + attribute.name + "'";
      try {
        attribute.kind = scalar_kind_from_string(required<std::string>(attribute_entry, "kind", attribute_where));
      } catch (const ValidationError& error) {
        throw ValidationError(attribute_where + ": " + error.what());
      }
      attribute.policy = policy_from_string(required<std::string>(attribute_entry, "policy", attribute_where),
                                            attribute_where);
      if (attribute_entry.contains("domain")) attribute.domain = attribute_entry.at("domain").get<std::string>();
      relation.attributes.push_back(std::move(attribute));
    }
    relation.entity_attr = entry.value("entity_attr", std::string{});
    relations.push_back(std::move(relation));
  }
  std::vector<FunctionalDependency> fds;
  if (document.contains("fds")) {
    for (const auto& entry : document.at("fds")) {
      fds.push_back({required<std::vector<std::string>>(entry, "lhs", "fd"),
                     required<std::vector<std::string>>(entry, "rhs", "fd")});
    }
  }
  return Catalog(std::move(relations), std::move(fds));
}

Catalog load_catalog(std::string_view text) {
  nlohmann::json document;
  try {
    document = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& error) {
    throw ParseError(std::string("malformed catalog document: ") + error.what(), error.byte);
  }
  return catalog_from_json(document);
}

nlohmann::json catalog_to_json(const Catalog& catalog) {
  nlohmann::json document;
  auto relations = nlohmann::json::array();
  for (const auto& relation : catalog.relations()) {
    auto attributes = nlohmann::json::array();
    for (const auto& attribute : relation.attributes) {
      attributes.push_back({{"name", attribute.name},
                            {"kind", to_string(attribute.kind)},
                            {"policy", to_string(attribute.policy)},
                            {"domain", attribute.domain}});
    }
    relations.push_back({{"name", relation.name}, {"attributes", attributes}, {"entity_attr", relation.entity_attr}});
  }
  auto fds = nlohmann::json::array();
  for (const auto& fd : catalog.fds()) fds.push_back({{"lhs", fd.lhs}, {"rhs", fd.rhs}});
  document["relations"] = relations;
  document["fds"] = fds;
  return document;
}

void validate_shard(const RelationShard& shard, const Catalog& catalog) {
  const auto& relation = catalog.relation(shard.relation);
  for (std::size_t row = 0; row < shard.tuples.size(); ++row) {
    const auto& tuple = shard.tuples[row];
    if (tuple.values.size() != relation.attributes.size()) {
      throw ValidationError("relation '" + relation.name + "' row " + std::to_string(row) + ": arity " +
                            std::to_string(tuple.values.size()) + ", expected " +
                            std::to_string(relation.attributes.size()));
    }
    if (tuple.dummy) throw ValidationError("relation '" + relation.name + "': base tuple marked dummy");
    for (std::size_t i = 0; i < tuple.values.size(); ++i) {
      if (!scalar_matches_kind(tuple.values[i], relation.attributes[i].kind)) {
        throw ValidationError("relation '" + relation.name + "' row " + std::to_string(row) + ": attribute '" +
                              relation.attributes[i].name + "' has the wrong kind");
      }
    }
  }
}

namespace {

std::vector<std::string> split_csv_row(std::string_view line, std::size_t line_number) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"' && current.empty() && !was_quoted) {
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
      was_quoted = false;
    } else {
      current.push_back(c);
    }
  }
  if (quoted) throw ParseError("unterminated quote on CSV line " + std::to_string(line_number));
  fields.push_back(std::move(current));
  return fields;
}

std::string quote_csv(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string quoted = "\"";
  for (const char c : text) {
    if (c == '"') quoted.push_back('"');
    quoted.push_back(c);
  }
  quoted.push_back('"');
  return quoted;
}

}  // namespace

RelationShard read_shard_csv(std::string_view text, const RelationDef& relation, HostId owner) {
  RelationShard shard{relation.name, owner, {}};
  std::size_t line_number = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = split_csv_row(line, line_number);
    if (fields.size() != relation.attributes.size()) {
      throw ValidationError(relation.name + " line " + std::to_string(line_number) + ": expected " +
                            std::to_string(relation.attributes.size()) + " fields, got " +
                            std::to_string(fields.size()));
    }
    Tuple tuple;
    tuple.owner = owner;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (fields[i].empty() && relation.attributes[i].kind != ScalarKind::Text) {
        throw ValidationError(relation.name + " line " + std::to_string(line_number) + ": missing value for '" +
                              relation.attributes[i].name + "'");
      }
      tuple.values.push_back(parse_scalar(fields[i], relation.attributes[i].kind));
    }
    shard.tuples.push_back(std::move(tuple));
  }
  return shard;
}

std::string write_shard_csv(const RelationShard& shard, const RelationDef& relation) {
  std::string out;
  for (const auto& tuple : shard.tuples) {
    for (std::size_t i = 0; i < tuple.values.size(); ++i) {
      if (i > 0) out.push_back(',');
      const auto text = format_scalar(tuple.values[i]);
      out += relation.attributes[i].kind == ScalarKind::Text ? quote_csv(text) : text;
    }
    out.push_back('\n');
  }
  return out;
}

namespace {

// Resolves an FD entry ("attr" or "rel.attr") to its universe symbol.
std::string resolve_symbol(const Catalog& catalog, const std::string& entry) {
  const auto dot = entry.find('.');
  if (dot != std::string::npos) {
    return catalog.attribute(entry.substr(0, dot), entry.substr(dot + 1)).domain;
  }
  std::set<std::string> symbols;
  for (const auto& relation : catalog.relations()) {
    if (const auto index = relation.find(entry)) symbols.insert(relation.attributes[*index].domain);
  }
  if (symbols.empty()) throw UnknownAttribute("functional dependency names unknown attribute '" + entry + "'");
  if (symbols.size() > 1) throw ValidationError("functional dependency attribute '" + entry + "' is ambiguous");
  return *symbols.begin();
}

std::set<std::size_t> closure(const std::set<std::size_t>& start,
                              const std::vector<std::pair<std::set<std::size_t>, std::set<std::size_t>>>& fds) {
  auto result = start;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& [lhs, rhs] : fds) {
      if (std::includes(result.begin(), result.end(), lhs.begin(), lhs.end())) {
        for (const auto symbol : rhs) changed |= result.insert(symbol).second;
      }
    }
  }
  return result;
}

}  // namespace

DecompositionReport validate_decomposition(const Catalog& catalog) {
  DecompositionReport report;
  std::map<std::string, std::size_t> symbol_index;
  std::vector<std::set<std::size_t>> relation_symbols;
  for (const auto& relation : catalog.relations()) {
    std::set<std::size_t> symbols;
    for (const auto& attribute : relation.attributes) {
      auto [it, inserted] = symbol_index.emplace(attribute.domain, report.universe.size());
      if (inserted) report.universe.push_back(attribute.domain);
      symbols.insert(it->second);
    }
    relation_symbols.push_back(std::move(symbols));
  }

  std::vector<std::pair<std::set<std::size_t>, std::set<std::size_t>>> fds;
  for (const auto& fd : catalog.fds()) {
    std::set<std::size_t> lhs;
    std::set<std::size_t> rhs;
    for (const auto& entry : fd.lhs) lhs.insert(symbol_index.at(resolve_symbol(catalog, entry)));
    for (const auto& entry : fd.rhs) rhs.insert(symbol_index.at(resolve_symbol(catalog, entry)));
    fds.emplace_back(std::move(lhs), std::move(rhs));
  }

  // Tableau cell encoding: 0 is the distinguished symbol; row r's own
  // non-distinguished symbol in column c is 1 + r * width + c.
  const auto width = report.universe.size();
  const auto rows = relation_symbols.size();
  std::vector<std::vector<std::size_t>> tableau(rows, std::vector<std::size_t>(width));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) tableau[r][c] = relation_symbols[r].count(c) ? 0 : 1 + r * width + c;
  }

  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& [lhs, rhs] : fds) {
      for (std::size_t a = 0; a < rows; ++a) {
        for (std::size_t b = a + 1; b < rows; ++b) {
          const bool agree = std::all_of(lhs.begin(), lhs.end(),
                                         [&](std::size_t c) { return tableau[a][c] == tableau[b][c]; });
          if (!agree) continue;
          for (const auto c : rhs) {
            const auto x = tableau[a][c];
            const auto y = tableau[b][c];
            if (x == y) continue;
            // Equate the two symbols everywhere, keeping the smaller one
            // (distinguished wins).
            const auto keep = std::min(x, y);
            const auto drop = std::max(x, y);
            for (auto& row : tableau) {
              if (row[c] == drop) row[c] = keep;
            }
            changed = true;
          }
        }
      }
    }
  }

  std::size_t best_row = 0;
  std::size_t best_count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto count = static_cast<std::size_t>(std::count(tableau[r].begin(), tableau[r].end(), 0));
    if (count == width) report.lossless = true;
    if (count > best_count) {
      best_count = count;
      best_row = r;
    }
  }
  for (const auto& row : tableau) {
    std::vector<std::string> cells;
    for (const auto cell : row) {
      cells.push_back(cell == 0 ? "a" : "b" + std::to_string((cell - 1) / std::max<std::size_t>(width, 1)));
    }
    report.tableau.push_back(std::move(cells));
  }
  if (!report.lossless) report.witness_row = best_row;

  // X -> Y is preserved iff Y is within the closure of X computed through
  // projections onto each relation.
  for (std::size_t i = 0; i < fds.size(); ++i) {
    auto reached = fds[i].first;
    bool grew = true;
    while (grew) {
      grew = false;
      for (const auto& symbols : relation_symbols) {
        std::set<std::size_t> inside;
        std::set_intersection(reached.begin(), reached.end(), symbols.begin(), symbols.end(),
                              std::inserter(inside, inside.end()));
        for (const auto symbol : closure(inside, fds)) {
          if (symbols.count(symbol)) grew |= reached.insert(symbol).second;
        }
      }
    }
    if (!std::includes(reached.begin(), reached.end(), fds[i].second.begin(), fds[i].second.end())) {
      report.dependency_preserving = false;
      report.unpreserved.push_back(catalog.fds()[i]);
    }
  }
  return report;
}

}  // namespace kloak
