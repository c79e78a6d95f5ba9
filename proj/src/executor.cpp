#include "kloak/executor.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "kloak/errors.hpp"

namespace kloak {

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::Plain:
      return "plain";
    case Mode::Encrypted:
      return "encrypted";
    case Mode::KAnon:
      return "kanon";
    case Mode::Oblivious:
      return "oblivious";
  }
  return "plain";
}

Mode mode_from_string(std::string_view text) {
  if (text == "plain") return Mode::Plain;
  if (text == "encrypted") return Mode::Encrypted;
  if (text == "kanon") return Mode::KAnon;
  if (text == "oblivious") return Mode::Oblivious;
  throw ValidationError("unknown mode '" + std::string(text) + "'");
}

std::size_t ClassStream::column_index(const ColumnRef& column) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].relation == column.relation && columns[i].attr == column.attr) return i;
  }
  throw UnknownAttribute("column " + column.qualified() + " is not in the stream");
}

int64_t ClassStream::tuple_count() const {
  int64_t count = 0;
  for (const auto& cls : classes) count += cls.size();
  return count;
}

int64_t ClassStream::real_tuple_count() const {
  int64_t count = 0;
  for (const auto& cls : classes) {
    count += std::count_if(cls.tuples.begin(), cls.tuples.end(), [](const Tuple& t) { return !t.dummy; });
  }
  return count;
}

nlohmann::json columns_to_json(const std::vector<Column>& columns) {
  nlohmann::json array = nlohmann::json::array();
  for (const auto& column : columns) {
    array.push_back({{"relation", column.relation},
                     {"attr", column.attr},
                     {"kind", std::string(to_string(column.kind))},
                     {"domain", column.domain}});
  }
  return array;
}

std::vector<Column> columns_from_json(const nlohmann::json& document) {
  std::vector<Column> columns;
  for (const auto& entry : document) {
    columns.push_back({entry.at("relation").get<std::string>(), entry.at("attr").get<std::string>(),
                       scalar_kind_from_string(entry.at("kind").get<std::string>()),
                       entry.at("domain").get<std::string>()});
  }
  return columns;
}

nlohmann::json class_to_json(const StreamClass& cls) {
  nlohmann::json tuples = nlohmann::json::array();
  // Flat [dummy, owner, values...] rows: objects per tuple dominate the
  // cost of shipping padded classes.
  for (const auto& tuple : cls.tuples) {
    auto row = nlohmann::json::array({tuple.dummy ? 1 : 0, tuple.owner});
    for (const auto& value : tuple.values) row.push_back(scalar_to_json(value));
    tuples.push_back(std::move(row));
  }
  return {{"id", cls.id}, {"groups", cls.groups}, {"tuples", tuples}, {"lineage", cls.lineage}, {"owner", cls.owner}};
}

StreamClass class_from_json(const nlohmann::json& document) {
  StreamClass cls;
  cls.id = document.at("id").get<std::string>();
  cls.groups = document.at("groups").get<std::map<std::string, int>>();
  const auto& tuples = document.at("tuples");
  cls.tuples.reserve(tuples.size());
  for (const auto& row : tuples) {
    Tuple tuple;
    tuple.dummy = row.at(0).get<int>() != 0;
    tuple.owner = row.at(1).get<HostId>();
    tuple.values.reserve(row.size() - 2);
    for (std::size_t i = 2; i < row.size(); ++i) tuple.values.push_back(scalar_from_json(row[i]));
    cls.tuples.push_back(std::move(tuple));
  }
  cls.lineage = document.at("lineage").get<std::vector<std::string>>();
  cls.owner = document.at("owner").get<HostId>();
  return cls;
}

AggregateSpec aggregate_spec(const PlanNode& node) {
  if (node.kind != NodeKind::Aggregate || !node.entity) throw ValidationError("not an aggregate node");
  return {node.group_by, node.aggregates, *node.entity};
}

namespace {

void record(const OperatorContext& ctx, EventKind kind, const std::string& id, const std::string& id2,
            int64_t cardinality, int64_t comparisons) {
  if (!ctx.trace) return;
  ctx.trace->record({ctx.node, kind, id, id2, cardinality, comparisons});
}

std::size_t index_in(const std::vector<Column>& columns, const ColumnRef& column) {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].relation == column.relation && columns[i].attr == column.attr) return i;
  }
  throw UnknownAttribute("column " + column.qualified() + " is not in the stream");
}

bool padded(Mode mode) { return mode == Mode::KAnon || mode == Mode::Oblivious; }

std::vector<std::string> merged_lineage(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> result(a);
  result.insert(result.end(), b.begin(), b.end());
  std::sort(result.begin(), result.end());
  result.erase(std::unique(result.begin(), result.end()), result.end());
  return result;
}

// Partial aggregate states: one slot per call, two for AVG (sum, count).
std::size_t state_width(const AggCall& call) { return call.fn == AggFn::Avg ? 2 : 1; }

Scalar zero_of(ScalarKind kind) { return kind == ScalarKind::Text ? Scalar{std::string()} : Scalar{int64_t{0}}; }

}  // namespace

std::optional<StreamClass> filter_class(const OperatorContext& ctx, const std::vector<Column>& columns,
                                        const StreamClass& input, const std::vector<Predicate>& predicates) {
  std::vector<std::size_t> indices;
  for (const auto& predicate : predicates) {
    const auto index = index_in(columns, predicate.column);
    for (const auto& literal : predicate.literals) {
      if (!scalar_matches_kind(literal, columns[index].kind)) {
        throw TypeError("predicate literal does not match " + predicate.column.qualified());
      }
    }
    indices.push_back(index);
  }
  auto passes = [&](const Tuple& tuple) {
    for (std::size_t i = 0; i < predicates.size(); ++i) {
      if (!predicates[i].matches(tuple.values[indices[i]])) return false;
    }
    return true;
  };
  const auto size = input.size();

  if (padded(ctx.mode)) {
    StreamClass output = input;
    bool any = false;
    for (auto& tuple : output.tuples) {
      const bool keep = !tuple.dummy && passes(tuple);
      any = any || keep;
      tuple.dummy = !keep;
    }
    if (ctx.mode == Mode::KAnon && !any) {
      record(ctx, EventKind::ClassDrop, input.id, "", 0, charge_class(size));
      return std::nullopt;
    }
    record(ctx, EventKind::ClassEmit, input.id, "", size, charge_class(size));
    return output;
  }

  StreamClass output = input;
  output.tuples.clear();
  for (const auto& tuple : input.tuples) {
    if (!tuple.dummy && passes(tuple)) output.tuples.push_back(tuple);
  }
  record(ctx, EventKind::ClassEmit, input.id, "", output.size(), charge_examined(size));
  return output;
}

std::vector<Column> join_columns(const std::vector<Column>& left, const std::vector<Column>& right) {
  auto columns = left;
  columns.insert(columns.end(), right.begin(), right.end());
  return columns;
}

StreamClass join_pair(const OperatorContext& ctx, const std::vector<Column>& left_columns, const StreamClass& left,
                      const std::vector<Column>& right_columns, const StreamClass& right,
                      const std::vector<JoinKey>& keys) {
  std::vector<std::size_t> left_keys;
  std::vector<std::size_t> right_keys;
  for (const auto& key : keys) {
    const auto l = index_in(left_columns, key.left);
    const auto r = index_in(right_columns, key.right);
    if (left_columns[l].domain != right_columns[r].domain) {
      throw DomainMismatch("join keys " + key.left.qualified() + " and " + key.right.qualified() +
                           " are in different domains");
    }
    left_keys.push_back(l);
    right_keys.push_back(r);
  }
  auto combine = [](const Tuple& l, const Tuple& r, bool dummy) {
    Tuple tuple;
    tuple.values.reserve(l.values.size() + r.values.size());
    tuple.values = l.values;
    tuple.values.insert(tuple.values.end(), r.values.begin(), r.values.end());
    tuple.dummy = dummy;
    tuple.owner = l.owner;
    return tuple;
  };

  StreamClass output;
  output.owner = left.owner;
  output.lineage = merged_lineage(left.lineage, right.lineage);
  output.groups = left.groups;
  output.groups.insert(right.groups.begin(), right.groups.end());
  output.id = ctx.mode == Mode::KAnon ? left.id + "*" + right.id : std::string(kSyntheticClass);

  if (padded(ctx.mode)) {
    const auto product = charge_pair(left.size(), right.size());
    if (product > ctx.tuple_cap) {
      throw ResourceLimit("padded join would emit " + std::to_string(product) + " tuples (cap " +
                          std::to_string(ctx.tuple_cap) + ")");
    }
    output.tuples.reserve(static_cast<std::size_t>(product));
    for (const auto& l : left.tuples) {
      for (const auto& r : right.tuples) {
        bool differ = false;
        for (std::size_t i = 0; i < left_keys.size() && !differ; ++i) {
          differ = l.values[left_keys[i]] != r.values[right_keys[i]];
        }
        output.tuples.push_back(combine(l, r, l.dummy || r.dummy || differ));
      }
    }
    record(ctx, EventKind::PairEmit, left.id, right.id, product, product);
    return output;
  }

  std::map<ValueVector, std::vector<std::size_t>> index;
  for (std::size_t i = 0; i < right.tuples.size(); ++i) {
    const auto& r = right.tuples[i];
    if (r.dummy) continue;
    ValueVector key;
    for (const auto k : right_keys) key.push_back(r.values[k]);
    index[key].push_back(i);
  }
  for (const auto& l : left.tuples) {
    if (l.dummy) continue;
    ValueVector key;
    for (const auto k : left_keys) key.push_back(l.values[k]);
    const auto it = index.find(key);
    if (it == index.end()) continue;
    for (const auto i : it->second) output.tuples.push_back(combine(l, right.tuples[i], false));
  }
  record(ctx, EventKind::PairEmit, left.id, right.id, output.size(), charge_examined(left.size() + right.size()));
  return output;
}

std::vector<Column> aggregate_columns(const std::vector<Column>& input, const AggregateSpec& spec) {
  std::vector<Column> columns;
  for (const auto& column : spec.group_by) columns.push_back(input[index_in(input, column)]);
  for (const auto& call : spec.calls) {
    ScalarKind kind = ScalarKind::Integer;
    if (call.target && (call.fn == AggFn::Min || call.fn == AggFn::Max)) {
      kind = input[index_in(input, *call.target)].kind;
    }
    if (call.fn == AggFn::Avg) {
      columns.push_back({"", call.name + "$sum", ScalarKind::Integer, ""});
      columns.push_back({"", call.name + "$count", ScalarKind::Integer, ""});
    } else {
      columns.push_back({"", call.name, kind, ""});
    }
  }
  return columns;
}

StreamClass aggregate_class(const OperatorContext& ctx, const std::vector<Column>& columns, const StreamClass& input,
                            const AggregateSpec& spec) {
  std::vector<std::size_t> group_indices;
  for (const auto& column : spec.group_by) group_indices.push_back(index_in(columns, column));
  const auto entity_index = index_in(columns, spec.entity);
  std::vector<std::optional<std::size_t>> targets;
  for (const auto& call : spec.calls) {
    if (!call.target) {
      targets.emplace_back();
      continue;
    }
    const auto index = index_in(columns, *call.target);
    if ((call.fn == AggFn::Sum || call.fn == AggFn::Avg) && columns[index].kind == ScalarKind::Text) {
      throw TypeError(std::string(to_string(call.fn)) + " over text column " + call.target->qualified());
    }
    targets.push_back(index);
  }

  // Bins keyed by group values; padded modes keep bins seen only in dummies.
  std::map<ValueVector, std::vector<const Tuple*>> bins;
  for (const auto& tuple : input.tuples) {
    if (tuple.dummy && !padded(ctx.mode)) continue;
    ValueVector key;
    for (const auto index : group_indices) key.push_back(tuple.values[index]);
    bins[key].push_back(&tuple);
  }

  auto result_tuple = [&](const ValueVector& key, const std::vector<const Tuple*>& members) {
    Tuple tuple;
    tuple.values = key;
    tuple.owner = input.owner;
    std::vector<const Tuple*> real;
    for (const auto* member : members) {
      if (!member->dummy) real.push_back(member);
    }
    tuple.dummy = real.empty();
    for (std::size_t c = 0; c < spec.calls.size(); ++c) {
      const auto& call = spec.calls[c];
      switch (call.fn) {
        case AggFn::Count:
          tuple.values.emplace_back(static_cast<int64_t>(real.size()));
          break;
        case AggFn::Sum:
        case AggFn::Avg: {
          int64_t sum = 0;
          for (const auto* member : real) sum += std::get<int64_t>(member->values[*targets[c]]);
          tuple.values.emplace_back(sum);
          if (call.fn == AggFn::Avg) tuple.values.emplace_back(static_cast<int64_t>(real.size()));
          break;
        }
        case AggFn::Min:
        case AggFn::Max: {
          if (real.empty()) {
            tuple.values.push_back(zero_of(columns[*targets[c]].kind));
            break;
          }
          Scalar best = real.front()->values[*targets[c]];
          for (const auto* member : real) {
            const auto& value = member->values[*targets[c]];
            if (call.fn == AggFn::Min ? value < best : value > best) best = value;
          }
          tuple.values.push_back(best);
          break;
        }
      }
    }
    return tuple;
  };

  StreamClass output;
  output.id = input.id;
  output.groups = input.groups;
  output.lineage = input.lineage;
  output.owner = input.owner;
  const auto size = input.size();

  if (ctx.mode == Mode::KAnon) {
    for (const auto& [key, members] : bins) {
      std::set<Scalar> contributors;
      for (const auto* member : members) {
        if (!member->dummy) contributors.insert(member->values[entity_index]);
      }
      auto tuple = result_tuple(key, members);
      if (static_cast<int64_t>(contributors.size()) >= ctx.k) {
        output.tuples.push_back(std::move(tuple));
        record(ctx, EventKind::BinEmit, input.id, "", 1, charge_class(size));
        continue;
      }
      // Too few individuals: emit as many tuples as the class holds.
      int64_t emitted = 0;
      Tuple dummy = tuple;
      dummy.dummy = true;
      if (!tuple.dummy) {
        output.tuples.push_back(std::move(tuple));
        ++emitted;
      }
      for (; emitted < size; ++emitted) output.tuples.push_back(dummy);
      record(ctx, EventKind::BinEmit, input.id, "", size, charge_class(size));
    }
    return output;
  }

  for (const auto& [key, members] : bins) output.tuples.push_back(result_tuple(key, members));
  record(ctx, EventKind::BinEmit, input.id, "", output.size(), charge_class(size));
  return output;
}

std::vector<Column> project_columns(const std::vector<Column>& input, const std::vector<ColumnRef>& attrs) {
  std::vector<Column> columns;
  for (const auto& attr : attrs) columns.push_back(input[index_in(input, attr)]);
  return columns;
}

StreamClass project_class(const OperatorContext& ctx, const std::vector<Column>& columns, const StreamClass& input,
                          const std::vector<ColumnRef>& attrs) {
  std::vector<std::size_t> indices;
  for (const auto& attr : attrs) indices.push_back(index_in(columns, attr));
  StreamClass output = input;
  for (auto& tuple : output.tuples) {
    ValueVector values;
    values.reserve(indices.size());
    for (const auto index : indices) values.push_back(std::move(tuple.values[index]));
    tuple.values = std::move(values);
  }
  record(ctx, EventKind::ClassEmit, input.id, "", output.size(), 0);
  return output;
}

std::vector<std::pair<std::size_t, std::size_t>> matched_pairs(Mode mode, const ClassStream& left,
                                                               const ClassStream& right,
                                                               const std::vector<JoinKey>& keys) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (mode != Mode::KAnon) {
    for (std::size_t l = 0; l < left.classes.size(); ++l) {
      for (std::size_t r = 0; r < right.classes.size(); ++r) pairs.emplace_back(l, r);
    }
    return pairs;
  }
  auto group = [](const StreamClass& cls, const ColumnRef& column) {
    const auto it = cls.groups.find(column.qualified());
    if (it == cls.groups.end()) {
      throw MissingView("join key " + column.qualified() + " is not anonymized in class " + cls.id);
    }
    return it->second;
  };
  for (std::size_t l = 0; l < left.classes.size(); ++l) {
    for (std::size_t r = 0; r < right.classes.size(); ++r) {
      bool match = true;
      for (const auto& key : keys) {
        match = match && group(left.classes[l], key.left) == group(right.classes[r], key.right);
      }
      if (match) pairs.emplace_back(l, r);
    }
  }
  return pairs;
}

void order_classes(ClassStream& stream) {
  std::stable_sort(stream.classes.begin(), stream.classes.end(),
                   [](const StreamClass& a, const StreamClass& b) { return a.id < b.id; });
}

ClassStream filter_op(const OperatorContext& ctx, const ClassStream& input, const std::vector<Predicate>& predicates) {
  ClassStream output{input.columns, {}};
  for (const auto& cls : input.classes) {
    if (auto emitted = filter_class(ctx, input.columns, cls, predicates)) output.classes.push_back(std::move(*emitted));
  }
  return output;
}

ClassStream join_op(const OperatorContext& ctx, const ClassStream& left, const ClassStream& right,
                    const std::vector<JoinKey>& keys) {
  ClassStream output{join_columns(left.columns, right.columns), {}};
  for (const auto& [l, r] : matched_pairs(ctx.mode, left, right, keys)) {
    output.classes.push_back(join_pair(ctx, left.columns, left.classes[l], right.columns, right.classes[r], keys));
  }
  order_classes(output);
  return output;
}

ClassStream aggregate_op(const OperatorContext& ctx, const ClassStream& input, const AggregateSpec& spec) {
  ClassStream output{aggregate_columns(input.columns, spec), {}};
  for (const auto& cls : input.classes) output.classes.push_back(aggregate_class(ctx, input.columns, cls, spec));
  return output;
}

ClassStream project_op(const OperatorContext& ctx, const ClassStream& input, const std::vector<ColumnRef>& attrs) {
  ClassStream output{project_columns(input.columns, attrs), {}};
  for (const auto& cls : input.classes) output.classes.push_back(project_class(ctx, input.columns, cls, attrs));
  return output;
}

std::vector<int> local_chain(const QueryPlan& plan, int scan_id) {
  std::vector<int> chain;
  int current = scan_id;
  for (;;) {
    const auto parent = plan.parent_of(current);
    if (!parent) break;
    const auto& node = plan.node(*parent);
    if (node.kind != NodeKind::Filter || node.placement != Placement::Plain) break;
    chain.push_back(node.id);
    current = node.id;
  }
  return chain;
}

std::vector<Tuple> run_local_chain(const QueryPlan& plan, const std::vector<int>& chain, const RelationDef& relation,
                                   const std::vector<Tuple>& tuples) {
  const auto columns = relation_columns(relation);
  StreamClass cls;
  cls.tuples = tuples;
  const OperatorContext ctx{Mode::Plain, 0, 1, nullptr};
  for (const auto id : chain) cls = *filter_class(ctx, columns, cls, plan.node(id).predicates);
  return cls.tuples;
}

std::vector<Column> relation_columns(const RelationDef& relation) {
  std::vector<Column> columns;
  for (const auto& attribute : relation.attributes) {
    columns.push_back({relation.name, attribute.name, attribute.kind, attribute.domain});
  }
  return columns;
}

std::vector<Column> frontier_columns(const QueryPlan& plan, const Catalog& catalog, const std::string& relation) {
  const auto& def = catalog.relation(relation);
  std::vector<Column> columns;
  for (const auto& attr : required_columns(plan, catalog, relation)) {
    const auto& attribute = def.attribute(attr);
    columns.push_back({relation, attr, attribute.kind, attribute.domain});
  }
  return columns;
}

std::vector<StreamClass> route_shard(Mode mode, const QueryPlan& plan, const Catalog& catalog,
                                     const RelationShard& filtered, const AnonymizationMap* map) {
  const auto& def = catalog.relation(filtered.relation);
  std::vector<std::size_t> keep;
  for (const auto& attr : required_columns(plan, catalog, filtered.relation)) keep.push_back(def.index_of(attr));
  auto prune = [&](const Tuple& tuple) {
    Tuple pruned;
    pruned.dummy = tuple.dummy;
    pruned.owner = tuple.owner;
    for (const auto index : keep) pruned.values.push_back(tuple.values[index]);
    return pruned;
  };

  std::vector<StreamClass> pieces;
  if (mode != Mode::KAnon) {
    StreamClass cls;
    cls.id = std::string(kSyntheticClass);
    cls.owner = filtered.owner;
    for (const auto& tuple : filtered.tuples) cls.tuples.push_back(prune(tuple));
    pieces.push_back(std::move(cls));
    return pieces;
  }
  if (!map) throw MissingView("k-anonymous execution needs a view");
  const auto& attrs = map->attrs.at(filtered.relation);
  for (auto& eq : apply_view(filtered, *map, catalog)) {
    StreamClass cls;
    cls.id = eq.id;
    cls.owner = filtered.owner;
    cls.lineage = {eq.id};
    const auto groups = map->groups_of(eq.id);
    for (std::size_t j = 0; j < attrs.size(); ++j) cls.groups[filtered.relation + "." + attrs[j]] = groups[j];
    for (const auto& tuple : eq.tuples) cls.tuples.push_back(prune(tuple));
    pieces.push_back(std::move(cls));
  }
  return pieces;
}

std::vector<StreamClass> merge_pieces(std::vector<StreamClass> pieces) {
  std::map<std::string, StreamClass> merged;
  for (auto& piece : pieces) {
    auto it = merged.find(piece.id);
    if (it == merged.end()) {
      merged.emplace(piece.id, std::move(piece));
      continue;
    }
    auto& target = it->second.tuples;
    target.insert(target.end(), std::make_move_iterator(piece.tuples.begin()),
                  std::make_move_iterator(piece.tuples.end()));
  }
  std::vector<StreamClass> result;
  result.reserve(merged.size());
  for (auto& [id, cls] : merged) result.push_back(std::move(cls));
  return result;
}

ClassStream exec_plan(const QueryPlan& plan, const Catalog& catalog, Mode mode,
                      const std::vector<RelationShard>& shards, const AnonymizationMap* map, Trace& trace,
                      int64_t tuple_cap) {
  const bool any_secure = std::any_of(plan.nodes.begin(), plan.nodes.end(),
                                      [](const PlanNode& node) { return node.placement == Placement::Secure; });
  if (mode == Mode::KAnon && any_secure && !map) throw MissingView("k-anonymous execution needs a view");
  const int k = map ? map->k : 1;

  std::vector<const RelationShard*> ordered;
  for (const auto& shard : shards) ordered.push_back(&shard);
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) { return a->owner < b->owner; });

  std::map<int, ClassStream> streams;
  std::map<int, std::string> relation_of;  // chain node -> relation

  auto frontier = [&](int child) {
    const auto relation = relation_of.at(child);
    const auto& tuples = streams.at(child).classes.front().tuples;
    std::map<HostId, RelationShard> per_host;
    for (const auto& tuple : tuples) {
      auto& shard = per_host[tuple.owner];
      shard.relation = relation;
      shard.owner = tuple.owner;
      shard.tuples.push_back(tuple);
    }
    std::vector<StreamClass> pieces;
    for (const auto& [host, shard] : per_host) {
      auto routed = route_shard(mode, plan, catalog, shard, map);
      pieces.insert(pieces.end(), std::make_move_iterator(routed.begin()), std::make_move_iterator(routed.end()));
    }
    ClassStream stream{frontier_columns(plan, catalog, relation), merge_pieces(std::move(pieces))};
    if (mode != Mode::KAnon && stream.classes.empty()) {
      stream.classes.push_back(StreamClass{std::string(kSyntheticClass), {}, {}, {}, 0});
    }
    return stream;
  };

  for (const auto& node : plan.nodes) {
    if (node.kind == NodeKind::Sort || node.kind == NodeKind::Limit) continue;
    if (node.kind == NodeKind::Scan) {
      const auto& def = catalog.relation(node.relation);
      StreamClass cls;
      cls.id = std::string(kSyntheticClass);
      for (const auto* shard : ordered) {
        if (shard->relation != node.relation) continue;
        for (auto tuple : shard->tuples) {
          tuple.owner = shard->owner;
          cls.tuples.push_back(std::move(tuple));
        }
      }
      streams[node.id] = ClassStream{relation_columns(def), {std::move(cls)}};
      relation_of[node.id] = node.relation;
      continue;
    }

    const bool secure = node.placement == Placement::Secure;
    OperatorContext ctx{secure ? mode : Mode::Plain, node.id, k, secure ? &trace : nullptr, tuple_cap};
    std::vector<ClassStream> inputs;
    for (const auto child : node.children) {
      if (secure && plan.node(child).placement == Placement::Plain) {
        if (!relation_of.count(child)) throw std::logic_error("plain subtree below the frontier is not a local chain");
        inputs.push_back(frontier(child));
      } else {
        inputs.push_back(streams.at(child));
      }
    }
    ClassStream output;
    switch (node.kind) {
      case NodeKind::Filter:
        output = filter_op(ctx, inputs[0], node.predicates);
        if (!secure && relation_of.count(node.children[0])) relation_of[node.id] = relation_of[node.children[0]];
        break;
      case NodeKind::Join:
        output = join_op(ctx, inputs[0], inputs[1], node.join_keys);
        break;
      case NodeKind::Aggregate:
        output = aggregate_op(ctx, inputs[0], aggregate_spec(node));
        break;
      case NodeKind::Project:
        output = project_op(ctx, inputs[0], node.projection);
        break;
      default:
        break;
    }
    streams[node.id] = std::move(output);
  }
  trace.canonicalize();
  return streams.at(plan.engine_root());
}

nlohmann::json result_to_json(const ResultSet& result) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : result.rows) rows.push_back(values_to_json(row));
  return {{"columns", result.columns}, {"rows", rows}};
}

ResultSet result_from_json(const nlohmann::json& document) {
  ResultSet result;
  result.columns = document.at("columns").get<std::vector<std::string>>();
  for (const auto& row : document.at("rows")) result.rows.push_back(values_from_json(row));
  return result;
}

std::string format_result(const ResultSet& result) {
  std::string out;
  for (std::size_t i = 0; i < result.columns.size(); ++i) out += (i ? "," : "") + result.columns[i];
  out += "\n";
  for (const auto& row : result.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + format_scalar(row[i]);
    out += "\n";
  }
  return out;
}

ResultSet assemble_result(const QueryPlan& plan, const ClassStream& stream) {
  ResultSet result;
  for (const auto& item : plan.select) result.columns.push_back(item.name);

  std::vector<const Tuple*> real;
  for (const auto& cls : stream.classes) {
    for (const auto& tuple : cls.tuples) {
      if (!tuple.dummy) real.push_back(&tuple);
    }
  }

  if (const auto* aggregate = plan.aggregate_node()) {
    const auto spec = aggregate_spec(*aggregate);
    const auto width = spec.group_by.size();
    std::map<ValueVector, ValueVector> merged;
    for (const auto* tuple : real) {
      ValueVector key(tuple->values.begin(), tuple->values.begin() + static_cast<std::ptrdiff_t>(width));
      ValueVector states(tuple->values.begin() + static_cast<std::ptrdiff_t>(width), tuple->values.end());
      auto [it, inserted] = merged.emplace(std::move(key), states);
      if (inserted) continue;
      auto& target = it->second;
      std::size_t slot = 0;
      for (const auto& call : spec.calls) {
        switch (call.fn) {
          case AggFn::Count:
          case AggFn::Sum:
            target[slot] = std::get<int64_t>(target[slot]) + std::get<int64_t>(states[slot]);
            break;
          case AggFn::Avg:
            target[slot] = std::get<int64_t>(target[slot]) + std::get<int64_t>(states[slot]);
            target[slot + 1] = std::get<int64_t>(target[slot + 1]) + std::get<int64_t>(states[slot + 1]);
            break;
          case AggFn::Min:
            if (states[slot] < target[slot]) target[slot] = states[slot];
            break;
          case AggFn::Max:
            if (states[slot] > target[slot]) target[slot] = states[slot];
            break;
        }
        slot += state_width(call);
      }
    }
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& call : spec.calls) {
      offsets.push_back(offset);
      offset += state_width(call);
    }
    for (const auto& [key, states] : merged) {
      ValueVector row;
      for (const auto& item : plan.select) {
        if (const auto* column = std::get_if<ColumnRef>(&item.source)) {
          const auto pos = std::find(spec.group_by.begin(), spec.group_by.end(), *column) - spec.group_by.begin();
          row.push_back(key[static_cast<std::size_t>(pos)]);
          continue;
        }
        const auto index = std::get<std::size_t>(item.source);
        const auto slot = offsets[index];
        if (spec.calls[index].fn == AggFn::Avg) {
          const auto sum = std::get<int64_t>(states[slot]);
          const auto count = std::get<int64_t>(states[slot + 1]);
          row.emplace_back(count ? static_cast<double>(sum) / static_cast<double>(count) : 0.0);
        } else {
          row.push_back(states[slot]);
        }
      }
      result.rows.push_back(std::move(row));
    }
  } else {
    std::vector<std::size_t> indices;
    for (const auto& item : plan.select) indices.push_back(stream.column_index(std::get<ColumnRef>(item.source)));
    for (const auto* tuple : real) {
      ValueVector row;
      row.reserve(indices.size());
      for (const auto index : indices) row.push_back(tuple->values[index]);
      result.rows.push_back(std::move(row));
    }
  }

  std::vector<std::pair<std::size_t, bool>> order;
  const PlanNode* limit = nullptr;
  for (const auto& node : plan.nodes) {
    if (node.kind == NodeKind::Limit) limit = &node;
    if (node.kind != NodeKind::Sort) continue;
    for (const auto& key : node.sort_keys) {
      const auto it = std::find(result.columns.begin(), result.columns.end(), key.column);
      order.emplace_back(static_cast<std::size_t>(it - result.columns.begin()), key.descending);
    }
  }
  std::sort(result.rows.begin(), result.rows.end(), [&](const ValueVector& a, const ValueVector& b) {
    for (const auto& [index, descending] : order) {
      if (a[index] == b[index]) continue;
      return descending ? a[index] > b[index] : a[index] < b[index];
    }
    return a < b;
  });
  if (limit && static_cast<int64_t>(result.rows.size()) > limit->limit) {
    result.rows.resize(static_cast<std::size_t>(limit->limit));
  }
  return result;
}

LocalRun run_local(std::string_view query, const Catalog& catalog, Mode mode,
                   const std::vector<RelationShard>& shards, const AnonymizationMap* map) {
  LocalRun run;
  run.plan = parse_query(query, catalog);
  run.c = derive_control_flow(run.plan, catalog);
  run.plan = assign_modes(std::move(run.plan), run.c);
  run.stream = exec_plan(run.plan, catalog, mode, shards, map, run.trace);
  run.result = assemble_result(run.plan, run.stream);
  return run;
}

}  // namespace kloak
