#pragma once

#include <map>
#include <string>
#include <vector>

#include "kloak/anonymizer.hpp"
#include "kloak/executor.hpp"
#include "kloak/planner.hpp"
#include "kloak/trace.hpp"

namespace kloak {

// Anonymized frontier input per scanned relation: the classes a secure plan
// consumes, after the relation's plain local chain.
using ViewClasses = std::map<std::string, ClassStream>;

// Builds the frontier classes in one process from the map and every shard.
ViewClasses anonymized_view(const QueryPlan& plan, const Catalog& catalog, const std::vector<RelationShard>& shards,
                            const AnonymizationMap& map);

// Runs the plan's secure part with k-anonymous operator semantics over the
// view alone and returns the trace such a run would produce.
Trace simulate_reference(const QueryPlan& plan, const ViewClasses& view, int k);

}  // namespace kloak
