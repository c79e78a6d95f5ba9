#include "kloak/simulator.hpp"

#include <algorithm>

#include "kloak/errors.hpp"

namespace kloak {

ViewClasses anonymized_view(const QueryPlan& plan, const Catalog& catalog, const std::vector<RelationShard>& shards,
                            const AnonymizationMap& map) {
  ViewClasses view;
  for (const auto scan : plan.scan_ids()) {
    const auto& relation = plan.node(scan).relation;
    const auto& def = catalog.relation(relation);
    const auto chain = local_chain(plan, scan);
    const auto top = chain.empty() ? scan : chain.back();
    const auto parent = plan.parent_of(top);
    if (!parent || plan.node(*parent).placement != Placement::Secure) continue;

    std::vector<RelationShard> filtered;
    for (const auto& shard : shards) {
      if (shard.relation != relation) continue;
      RelationShard copy{relation, shard.owner, {}};
      for (auto tuple : shard.tuples) {
        tuple.owner = shard.owner;
        copy.tuples.push_back(std::move(tuple));
      }
      copy.tuples = run_local_chain(plan, chain, def, copy.tuples);
      filtered.push_back(std::move(copy));
    }
    std::stable_sort(filtered.begin(), filtered.end(), [](const auto& a, const auto& b) { return a.owner < b.owner; });
    std::vector<StreamClass> pieces;
    for (const auto& shard : filtered) {
      auto routed = route_shard(Mode::KAnon, plan, catalog, shard, &map);
      pieces.insert(pieces.end(), routed.begin(), routed.end());
    }
    view[relation] = ClassStream{frontier_columns(plan, catalog, relation), merge_pieces(std::move(pieces))};
  }
  return view;
}

Trace simulate_reference(const QueryPlan& plan, const ViewClasses& view, int k) {
  Trace trace;
  std::map<int, ClassStream> streams;
  std::map<int, std::string> relation_of;
  for (const auto scan : plan.scan_ids()) {
    const auto chain = local_chain(plan, scan);
    relation_of[chain.empty() ? scan : chain.back()] = plan.node(scan).relation;
  }

  for (const auto& node : plan.nodes) {
    if (node.placement != Placement::Secure) continue;
    const OperatorContext ctx{Mode::KAnon, node.id, k, &trace};
    std::vector<const ClassStream*> inputs;
    for (const auto child : node.children) {
      if (plan.node(child).placement == Placement::Secure) {
        inputs.push_back(&streams.at(child));
        continue;
      }
      const auto relation = relation_of.find(child);
      if (relation == relation_of.end()) throw MissingView("no frontier input for node " + std::to_string(child));
      const auto it = view.find(relation->second);
      if (it == view.end()) throw MissingView("view has no classes for relation '" + relation->second + "'");
      inputs.push_back(&it->second);
    }
    switch (node.kind) {
      case NodeKind::Filter:
        streams[node.id] = filter_op(ctx, *inputs[0], node.predicates);
        break;
      case NodeKind::Join:
        streams[node.id] = join_op(ctx, *inputs[0], *inputs[1], node.join_keys);
        break;
      case NodeKind::Aggregate:
        streams[node.id] = aggregate_op(ctx, *inputs[0], aggregate_spec(node));
        break;
      case NodeKind::Project:
        streams[node.id] = project_op(ctx, *inputs[0], node.projection);
        break;
      default:
        break;
    }
  }
  trace.canonicalize();
  return trace;
}

}  // namespace kloak
