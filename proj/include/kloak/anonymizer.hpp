#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kloak/planner.hpp"
#include "kloak/schema.hpp"

namespace kloak {

struct HistogramRow {
  ValueVector values;
  std::vector<int64_t> counts;  // indexed by host id

  int64_t total() const;
};

struct Histogram {
  std::string relation;
  std::vector<std::string> key_attrs;
  int host_count = 1;
  // Descending total, then lexicographic values.
  std::vector<HistogramRow> rows;

  int64_t total() const;
  int64_t host_total(HostId host) const;
  void sort_rows();
};

nlohmann::json histogram_to_json(const Histogram& histogram);
Histogram histogram_from_json(const nlohmann::json& document);

// host_count sizes the per-host count vectors; owners must be below it.
Histogram build_histogram(const RelationShard& shard, const RelationDef& relation,
                          const std::vector<std::string>& key_attrs, int host_count);
// Throws SchemaMismatch when relation or key attributes differ.
Histogram merge_histograms(const std::vector<Histogram>& parts);

struct DomainPartition {
  std::string domain;
  std::map<Scalar, int> groups;  // value -> group id

  int group_count() const;
  bool operator==(const DomainPartition&) const = default;
};

struct ClassPadding {
  int64_t count = 0;  // dummies added to reach k
  HostId owner = 0;
  bool operator==(const ClassPadding&) const = default;
};

// The k-anonymous processing view.
struct AnonymizationMap {
  int k = 1;
  ControlFlowSet c;
  uint64_t hash_seed = 0;
  int host_count = 1;
  std::map<std::string, DomainPartition> partitions;            // by domain
  std::map<std::string, std::vector<std::string>> attrs;        // relation -> c_i
  std::map<std::string, std::map<ValueVector, std::string>> class_of;  // relation -> vector -> class id
  std::map<std::string, ClassPadding> padding;                  // class id -> padding

  bool covers(const std::string& relation) const { return class_of.count(relation) > 0; }
  // Throws MissingView / UnmappedValue.
  const std::string& lookup(const std::string& relation, const ValueVector& key) const;
  std::vector<std::string> class_ids() const;
  // Group ids of a class id, in attrs order.
  std::vector<int> groups_of(const std::string& class_id) const;

  bool operator==(const AnonymizationMap&) const = default;
};

// Canonical JSON (sorted keys); dump() of it is byte-stable.
nlohmann::json map_to_json(const AnonymizationMap& map);
AnonymizationMap map_from_json(const nlohmann::json& document);
std::string serialize_map(const AnonymizationMap& map);

std::string class_id_for(const std::string& relation, const std::vector<int>& groups);

// Histograms keyed on c_i for every relation touched by c.
std::map<std::string, Histogram> collect_histograms(const std::vector<RelationShard>& shards, const Catalog& catalog,
                                                    const ControlFlowSet& c, int host_count);

// Greedy min-max class formation over shared domains. Throws ViewInfeasible.
AnonymizationMap generate_view(const std::map<std::string, Histogram>& histograms, int k, const Catalog& catalog,
                               const ControlFlowSet& c, uint64_t seed);

// View from caller-supplied groupings; domains without one keep every value
// in its own group. No merging is done.
AnonymizationMap build_view(const std::map<std::string, Histogram>& histograms, int k, const Catalog& catalog,
                            const ControlFlowSet& c, uint64_t seed,
                            const std::map<std::string, std::vector<std::vector<Scalar>>>& groupings);

// Coarsens map until it is valid at k_new. Requires k_new > map.k.
AnonymizationMap merge_for_k(const AnonymizationMap& map, const std::map<std::string, Histogram>& histograms,
                             int k_new, const Catalog& catalog);

struct Violation {
  std::string relation;
  std::string class_id;
  std::string kind;  // size | federated | projection | unmapped
  std::optional<HostId> host;

  bool operator==(const Violation&) const = default;
};

nlohmann::json violation_to_json(const Violation& violation);
std::string violations_to_jsonl(const std::vector<Violation>& violations);

std::vector<Violation> check_view(const AnonymizationMap& map, const std::vector<RelationShard>& shards, int k,
                                  const Catalog& catalog);

// class id -> host.
using PartitionAssignment = std::map<std::string, HostId>;

HostId partition_host(uint64_t seed, const std::string& class_id, const std::vector<HostId>& hosts);
PartitionAssignment assign_partitions(const AnonymizationMap& map, const std::vector<HostId>& hosts);

struct EquivalenceClass {
  std::string id;
  std::string relation;
  std::vector<Tuple> tuples;
  std::set<ValueVector> covered_values;

  std::size_t size() const { return tuples.size(); }
};

// Routes each tuple to its class; classes ordered by id, tuples stable.
// Throws UnmappedValue / MissingView.
std::vector<EquivalenceClass> apply_view(const RelationShard& shard, const AnonymizationMap& map,
                                         const Catalog& catalog);

// apply_view over all shards of one relation in host order, merged per class.
std::vector<EquivalenceClass> materialize_classes(const std::vector<RelationShard>& shards, const std::string& relation,
                                                  const AnonymizationMap& map, const Catalog& catalog);

}  // namespace kloak
