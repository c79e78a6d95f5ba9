#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "kloak/anonymizer.hpp"
#include "kloak/planner.hpp"
#include "kloak/schema.hpp"
#include "kloak/trace.hpp"

namespace kloak {

enum class Mode { Plain, Encrypted, KAnon, Oblivious };

std::string_view to_string(Mode mode);
Mode mode_from_string(std::string_view text);

// Class id of the single class that encrypted and oblivious streams carry.
inline constexpr std::string_view kSyntheticClass = "*";

// Padded outputs above this many tuples raise ResourceLimit.
inline constexpr int64_t kDefaultTupleCap = 20'000'000;

struct Column {
  std::string relation;  // empty for aggregate states
  std::string attr;
  ScalarKind kind = ScalarKind::Integer;
  std::string domain;

  std::string qualified() const { return relation.empty() ? attr : relation + "." + attr; }
  bool operator==(const Column&) const = default;
};

struct StreamClass {
  std::string id;
  // Group id per anonymized column (qualified name); empty outside KAnon.
  std::map<std::string, int> groups;
  std::vector<Tuple> tuples;
  // Base class ids this class was derived from.
  std::vector<std::string> lineage;
  HostId owner = 0;

  int64_t size() const { return static_cast<int64_t>(tuples.size()); }
};

struct ClassStream {
  std::vector<Column> columns;
  std::vector<StreamClass> classes;  // ordered by id

  // Throws UnknownAttribute.
  std::size_t column_index(const ColumnRef& column) const;
  int64_t tuple_count() const;
  int64_t real_tuple_count() const;
};

nlohmann::json columns_to_json(const std::vector<Column>& columns);
std::vector<Column> columns_from_json(const nlohmann::json& document);
nlohmann::json class_to_json(const StreamClass& cls);
StreamClass class_from_json(const nlohmann::json& document);

struct AggregateSpec {
  std::vector<ColumnRef> group_by;
  std::vector<AggCall> calls;
  ColumnRef entity;
};

AggregateSpec aggregate_spec(const PlanNode& node);

struct OperatorContext {
  Mode mode = Mode::Plain;
  int node = 0;
  int k = 1;
  Trace* trace = nullptr;  // null for plain local work
  int64_t tuple_cap = kDefaultTupleCap;
};

// Class-level operators. Each records its events to ctx.trace.
std::optional<StreamClass> filter_class(const OperatorContext& ctx, const std::vector<Column>& columns,
                                        const StreamClass& input, const std::vector<Predicate>& predicates);
StreamClass join_pair(const OperatorContext& ctx, const std::vector<Column>& left_columns, const StreamClass& left,
                      const std::vector<Column>& right_columns, const StreamClass& right,
                      const std::vector<JoinKey>& keys);
StreamClass aggregate_class(const OperatorContext& ctx, const std::vector<Column>& columns, const StreamClass& input,
                            const AggregateSpec& spec);
StreamClass project_class(const OperatorContext& ctx, const std::vector<Column>& columns, const StreamClass& input,
                          const std::vector<ColumnRef>& attrs);

std::vector<Column> join_columns(const std::vector<Column>& left, const std::vector<Column>& right);
std::vector<Column> aggregate_columns(const std::vector<Column>& input, const AggregateSpec& spec);
std::vector<Column> project_columns(const std::vector<Column>& input, const std::vector<ColumnRef>& attrs);

// Index pairs of classes a join combines: equal group ids on every key in
// KAnon mode, the single synthetic pair otherwise.
std::vector<std::pair<std::size_t, std::size_t>> matched_pairs(Mode mode, const ClassStream& left,
                                                               const ClassStream& right,
                                                               const std::vector<JoinKey>& keys);

// Stream operators.
ClassStream filter_op(const OperatorContext& ctx, const ClassStream& input, const std::vector<Predicate>& predicates);
ClassStream join_op(const OperatorContext& ctx, const ClassStream& left, const ClassStream& right,
                    const std::vector<JoinKey>& keys);
ClassStream aggregate_op(const OperatorContext& ctx, const ClassStream& input, const AggregateSpec& spec);
ClassStream project_op(const OperatorContext& ctx, const ClassStream& input, const std::vector<ColumnRef>& attrs);

// Sorts classes by id.
void order_classes(ClassStream& stream);

// Plain filters sitting directly on a scan, bottom-up. The frontier input of
// the relation is the output of the last one (or the scan).
std::vector<int> local_chain(const QueryPlan& plan, int scan_id);
std::vector<Tuple> run_local_chain(const QueryPlan& plan, const std::vector<int>& chain, const RelationDef& relation,
                                   const std::vector<Tuple>& tuples);

std::vector<Column> relation_columns(const RelationDef& relation);
std::vector<Column> frontier_columns(const QueryPlan& plan, const Catalog& catalog, const std::string& relation);

// One host's chain output routed into classes (KAnon) or the synthetic
// class, pruned to the frontier columns.
std::vector<StreamClass> route_shard(Mode mode, const QueryPlan& plan, const Catalog& catalog,
                                     const RelationShard& filtered, const AnonymizationMap* map);
// Concatenates per-host pieces of equal id, in the given order.
std::vector<StreamClass> merge_pieces(std::vector<StreamClass> pieces);

// Single-process execution. Scans read every shard in host order.
ClassStream exec_plan(const QueryPlan& plan, const Catalog& catalog, Mode mode,
                      const std::vector<RelationShard>& shards, const AnonymizationMap* map, Trace& trace,
                      int64_t tuple_cap = kDefaultTupleCap);

struct ResultSet {
  std::vector<std::string> columns;
  std::vector<ValueVector> rows;

  bool operator==(const ResultSet&) const = default;
};

nlohmann::json result_to_json(const ResultSet& result);
ResultSet result_from_json(const nlohmann::json& document);
std::string format_result(const ResultSet& result);

// Drops dummies, merges aggregate states, applies the select list, ORDER BY
// and LIMIT. Rows without ORDER BY come out in lexicographic order.
ResultSet assemble_result(const QueryPlan& plan, const ClassStream& stream);

// Convenience: parse, derive, mode and run in one process.
struct LocalRun {
  QueryPlan plan;
  ControlFlowSet c;
  ClassStream stream;
  Trace trace;
  ResultSet result;
};

LocalRun run_local(std::string_view query, const Catalog& catalog, Mode mode,
                   const std::vector<RelationShard>& shards, const AnonymizationMap* map);

}  // namespace kloak
