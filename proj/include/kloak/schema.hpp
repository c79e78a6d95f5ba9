#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kloak/scalar.hpp"

namespace kloak {

using HostId = int;

enum class Policy { Public, KAnon };

std::string_view to_string(Policy policy);

struct AttributeDef {
  std::string name;
  ScalarKind kind = ScalarKind::Integer;
  Policy policy = Policy::Public;
  // Attributes in the same domain are join-compatible and share one grouping
  // in anonymized views. Defaults to the attribute name.
  std::string domain;

  bool operator==(const AttributeDef&) const = default;
};

struct RelationDef {
  std::string name;
  std::vector<AttributeDef> attributes;
  std::string entity_attr;

  std::optional<std::size_t> find(std::string_view attr) const;
  // Throws UnknownAttribute.
  std::size_t index_of(std::string_view attr) const;
  const AttributeDef& attribute(std::string_view attr) const;

  bool operator==(const RelationDef&) const = default;
};

struct FunctionalDependency {
  // Entries are "attr" or "relation.attr".
  std::vector<std::string> lhs;
  std::vector<std::string> rhs;

  bool operator==(const FunctionalDependency&) const = default;
};

// Shared table definitions for the federation. Immutable once loaded.
class Catalog {
 public:
  Catalog() = default;
  Catalog(std::vector<RelationDef> relations, std::vector<FunctionalDependency> fds);

  const std::vector<RelationDef>& relations() const { return relations_; }
  const std::vector<FunctionalDependency>& fds() const { return fds_; }

  const RelationDef* find(std::string_view relation) const;
  // Throws UnknownAttribute naming the relation.
  const RelationDef& relation(std::string_view relation) const;
  const AttributeDef& attribute(std::string_view relation, std::string_view attr) const;

  std::size_t kanon_attribute_count() const;

  bool operator==(const Catalog&) const = default;

 private:
  std::vector<RelationDef> relations_;
  std::vector<FunctionalDependency> fds_;
};

// Parses and validates a catalog document. Throws ParseError or
// ValidationError naming the offending element.
Catalog load_catalog(std::string_view text);
Catalog catalog_from_json(const nlohmann::json& document);
nlohmann::json catalog_to_json(const Catalog& catalog);

struct Tuple {
  ValueVector values;
  bool dummy = false;
  HostId owner = 0;

  bool operator==(const Tuple&) const = default;
};

struct RelationShard {
  std::string relation;
  HostId owner = 0;
  std::vector<Tuple> tuples;
};

// Checks arity, scalar kinds and dummy flags of a base shard.
void validate_shard(const RelationShard& shard, const Catalog& catalog);

// Headerless CSV: ',' separator, '\n' rows, text quoted only when needed.
RelationShard read_shard_csv(std::string_view text, const RelationDef& relation, HostId owner);
std::string write_shard_csv(const RelationShard& shard, const RelationDef& relation);

struct DecompositionReport {
  bool lossless = false;
  // Universe symbols (domain names) in column order of the tableau.
  std::vector<std::string> universe;
  // Final chase tableau; cells are "a" (distinguished) or "b<row>".
  std::vector<std::vector<std::string>> tableau;
  // Index of the row with the most distinguished cells when lossless is false.
  std::optional<std::size_t> witness_row;
  bool dependency_preserving = true;
  std::vector<FunctionalDependency> unpreserved;
};

// Chase test over the relations' attribute sets (attributes are identified by
// domain) and the declared FDs, plus the standard dependency-preservation test.
DecompositionReport validate_decomposition(const Catalog& catalog);

}  // namespace kloak
