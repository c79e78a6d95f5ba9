#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "kloak/scalar.hpp"
#include "kloak/schema.hpp"

namespace kloak {

struct ColumnRef {
  std::string relation;
  std::string attr;

  std::string qualified() const { return relation + "." + attr; }
  auto operator<=>(const ColumnRef&) const = default;
};

enum class CompareOp { Eq, Ne, Lt, Le, Gt, Ge, In };

std::string_view to_string(CompareOp op);

struct Predicate {
  ColumnRef column;
  CompareOp op = CompareOp::Eq;
  // One literal, or the IN list.
  std::vector<Scalar> literals;

  bool matches(const Scalar& value) const;
};

struct JoinKey {
  ColumnRef left;
  ColumnRef right;
};

enum class AggFn { Count, Sum, Avg, Min, Max };

std::string_view to_string(AggFn fn);

struct AggCall {
  AggFn fn = AggFn::Count;
  std::optional<ColumnRef> target;  // empty for COUNT(*)
  std::string name;                 // output name (alias or rendered call)
};

struct SortKey {
  std::string column;  // output column name
  bool descending = false;
};

enum class NodeKind { Scan, Filter, Join, Aggregate, Project, Sort, Limit };

// Where a node runs. Client nodes (ORDER BY / LIMIT) run after dummy removal
// and sit above the secure subtree.
enum class Placement { Unassigned, Plain, Secure, Client };

std::string_view to_string(NodeKind kind);
std::string_view to_string(Placement placement);

struct PlanNode {
  int id = 0;
  NodeKind kind = NodeKind::Scan;
  std::vector<int> children;
  Placement placement = Placement::Unassigned;

  std::string relation;                 // Scan
  std::vector<Predicate> predicates;    // Filter (conjunction)
  std::vector<JoinKey> join_keys;       // Join
  std::vector<ColumnRef> group_by;      // Aggregate
  std::vector<AggCall> aggregates;      // Aggregate
  std::optional<ColumnRef> entity;      // Aggregate: defines "individuals"
  std::vector<ColumnRef> projection;    // Project
  std::vector<SortKey> sort_keys;       // Sort
  int64_t limit = 0;                    // Limit

  // Attributes whose values alter this node's observable behavior.
  std::vector<ColumnRef> control_inputs() const;
};

struct SelectItem {
  std::string name;
  // Column reference, or index into the Aggregate node's aggregates.
  std::variant<ColumnRef, std::size_t> source;
};

// Operator DAG. Node ids are assigned bottom-up, so increasing id order is a
// topological order; the last non-client node is the top of the engine part.
struct QueryPlan {
  std::string text;
  std::vector<PlanNode> nodes;
  int root = -1;
  std::vector<std::string> relations;  // FROM order
  std::vector<SelectItem> select;
  bool select_star = false;

  const PlanNode& node(int id) const { return nodes.at(static_cast<std::size_t>(id)); }
  std::optional<int> parent_of(int id) const;
  // Highest node that is not client-side post-processing.
  int engine_root() const;
  const PlanNode* aggregate_node() const;
  std::vector<int> scan_ids() const;
};

// Parses the supported SQL subset. Throws ParseError (with offset),
// UnsupportedFeature, UnknownAttribute or TypeError.
QueryPlan parse_query(std::string_view text, const Catalog& catalog);

class ControlFlowSet {
 public:
  ControlFlowSet() = default;
  explicit ControlFlowSet(std::set<ColumnRef> entries) : entries_(std::move(entries)) {}

  const std::set<ColumnRef>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  bool contains(const ColumnRef& column) const { return entries_.count(column) > 0; }
  void insert(const ColumnRef& column) { entries_.insert(column); }

  // c_i, ordered by the relation's attribute order.
  std::vector<std::string> for_relation(const RelationDef& relation) const;
  std::set<std::string> relations() const;

  bool is_subset_of(const ControlFlowSet& other) const;
  bool is_disjoint_from(const ControlFlowSet& other) const;
  ControlFlowSet united(const ControlFlowSet& other) const;

  std::vector<std::string> to_strings() const;
  // Accepts "rel.attr" entries; throws UnknownAttribute when absent from catalog.
  static ControlFlowSet parse(const std::vector<std::string>& entries, const Catalog& catalog);

  bool operator==(const ControlFlowSet&) const = default;

 private:
  std::set<ColumnRef> entries_;
};

// Upward taint pass, iterated to a fixed point: a node is tainted when a
// control input is KAnon or already in C, or a child is tainted; every join
// under a tainted node is tainted as well. Tainted nodes add their control
// inputs to C.
ControlFlowSet derive_control_flow(const QueryPlan& plan, const Catalog& catalog);

// Scans are Plain, Sort/Limit are Client; other nodes are Secure iff their
// subtree touches an entry of c.
QueryPlan assign_modes(QueryPlan plan, const ControlFlowSet& c);

// Verifies the upward-closed frontier invariant of a moded plan.
bool secure_frontier_is_upward_closed(const QueryPlan& plan);

struct WorkloadState {
  ControlFlowSet c_system;
  int k_system = 1;
};

struct AdmissionDecision {
  struct ReuseView {};
  struct MergeClasses {
    int k_new;
  };
  struct AugmentView {
    ControlFlowSet c_union;
  };
  struct ObliviousFallback {};

  std::variant<ReuseView, MergeClasses, AugmentView, ObliviousFallback> value;

  std::string_view name() const;
};

// Precedence: subset with k_q <= k_system reuses, subset with larger k merges,
// exact disjointness augments, anything else falls back to oblivious.
AdmissionDecision admit(const ControlFlowSet& c_q, int k_q, const WorkloadState& state);

// Per scanned relation, the columns the plan needs above its local chain.
std::vector<std::string> required_columns(const QueryPlan& plan, const Catalog& catalog, const std::string& relation);

}  // namespace kloak
