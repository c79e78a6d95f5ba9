#include "kloak/anonymizer.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <tuple>

#include "kloak/errors.hpp"
#include "kloak/hash.hpp"

namespace kloak {

int64_t HistogramRow::total() const { return std::accumulate(counts.begin(), counts.end(), int64_t{0}); }

int64_t Histogram::total() const {
  int64_t sum = 0;
  for (const auto& row : rows) sum += row.total();
  return sum;
}

int64_t Histogram::host_total(HostId host) const {
  int64_t sum = 0;
  for (const auto& row : rows) sum += row.counts.at(static_cast<std::size_t>(host));
  return sum;
}

void Histogram::sort_rows() {
  std::sort(rows.begin(), rows.end(), [](const HistogramRow& a, const HistogramRow& b) {
    const auto ta = a.total();
    const auto tb = b.total();
    if (ta != tb) return ta > tb;
    return a.values < b.values;
  });
}

nlohmann::json histogram_to_json(const Histogram& histogram) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : histogram.rows) {
    rows.push_back({{"values", values_to_json(row.values)}, {"counts", row.counts}});
  }
  return {{"relation", histogram.relation},
          {"key_attrs", histogram.key_attrs},
          {"host_count", histogram.host_count},
          {"rows", rows}};
}

Histogram histogram_from_json(const nlohmann::json& document) {
  Histogram histogram;
  histogram.relation = document.at("relation").get<std::string>();
  histogram.key_attrs = document.at("key_attrs").get<std::vector<std::string>>();
  histogram.host_count = document.at("host_count").get<int>();
  for (const auto& row : document.at("rows")) {
    histogram.rows.push_back({values_from_json(row.at("values")), row.at("counts").get<std::vector<int64_t>>()});
  }
  return histogram;
}

Histogram build_histogram(const RelationShard& shard, const RelationDef& relation,
                          const std::vector<std::string>& key_attrs, int host_count) {
  if (shard.owner < 0 || shard.owner >= host_count) {
    throw ValidationError("shard owner " + std::to_string(shard.owner) + " outside " + std::to_string(host_count) +
                          " hosts");
  }
  std::vector<std::size_t> indices;
  for (const auto& attr : key_attrs) indices.push_back(relation.index_of(attr));

  std::map<ValueVector, int64_t> counts;
  for (const auto& tuple : shard.tuples) {
    if (tuple.dummy) continue;
    ValueVector key;
    key.reserve(indices.size());
    for (const auto index : indices) key.push_back(tuple.values.at(index));
    ++counts[key];
  }

  Histogram histogram;
  histogram.relation = relation.name;
  histogram.key_attrs = key_attrs;
  histogram.host_count = host_count;
  for (auto& [values, count] : counts) {
    HistogramRow row{values, std::vector<int64_t>(static_cast<std::size_t>(host_count), 0)};
    row.counts[static_cast<std::size_t>(shard.owner)] = count;
    histogram.rows.push_back(std::move(row));
  }
  histogram.sort_rows();
  return histogram;
}

Histogram merge_histograms(const std::vector<Histogram>& parts) {
  if (parts.empty()) throw ValidationError("nothing to merge");
  Histogram merged;
  merged.relation = parts.front().relation;
  merged.key_attrs = parts.front().key_attrs;
  merged.host_count = 0;
  for (const auto& part : parts) {
    if (part.relation != merged.relation || part.key_attrs != merged.key_attrs) {
      throw SchemaMismatch("cannot merge histogram of '" + part.relation + "' into '" + merged.relation + "'");
    }
    merged.host_count = std::max(merged.host_count, part.host_count);
  }
  std::map<ValueVector, std::vector<int64_t>> rows;
  for (const auto& part : parts) {
    for (const auto& row : part.rows) {
      auto& counts = rows[row.values];
      counts.resize(static_cast<std::size_t>(merged.host_count), 0);
      for (std::size_t h = 0; h < row.counts.size(); ++h) counts[h] += row.counts[h];
    }
  }
  for (auto& [values, counts] : rows) merged.rows.push_back({values, std::move(counts)});
  merged.sort_rows();
  return merged;
}

int DomainPartition::group_count() const {
  int count = 0;
  for (const auto& [value, group] : groups) count = std::max(count, group + 1);
  return count;
}

std::string class_id_for(const std::string& relation, const std::vector<int>& groups) {
  std::string id = relation + "#";
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (i) id += '.';
    id += std::to_string(groups[i]);
  }
  return id;
}

const std::string& AnonymizationMap::lookup(const std::string& relation, const ValueVector& key) const {
  const auto rel = class_of.find(relation);
  if (rel == class_of.end()) throw MissingView("no view for relation '" + relation + "'");
  const auto it = rel->second.find(key);
  if (it == rel->second.end()) {
    std::string rendered;
    for (const auto& value : key) rendered += (rendered.empty() ? "" : ",") + format_scalar(value);
    throw UnmappedValue("value (" + rendered + ") of relation '" + relation + "' is not in the view");
  }
  return it->second;
}

std::vector<std::string> AnonymizationMap::class_ids() const {
  std::set<std::string> ids;
  for (const auto& [relation, mapping] : class_of) {
    for (const auto& [key, id] : mapping) ids.insert(id);
  }
  return {ids.begin(), ids.end()};
}

std::vector<int> AnonymizationMap::groups_of(const std::string& class_id) const {
  std::vector<int> groups;
  const auto hash = class_id.rfind('#');
  if (hash == std::string::npos) throw ValidationError("malformed class id '" + class_id + "'");
  std::stringstream stream(class_id.substr(hash + 1));
  std::string part;
  while (std::getline(stream, part, '.')) groups.push_back(std::stoi(part));
  return groups;
}

nlohmann::json map_to_json(const AnonymizationMap& map) {
  nlohmann::json partitions = nlohmann::json::object();
  for (const auto& [domain, partition] : map.partitions) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& [value, group] : partition.groups) groups.push_back({scalar_to_json(value), group});
    partitions[domain] = groups;
  }
  nlohmann::json relations = nlohmann::json::object();
  for (const auto& [relation, mapping] : map.class_of) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& [key, id] : mapping) classes.push_back({values_to_json(key), id});
    relations[relation] = {{"attrs", map.attrs.at(relation)}, {"classes", classes}};
  }
  nlohmann::json padding = nlohmann::json::object();
  for (const auto& [id, pad] : map.padding) padding[id] = {{"count", pad.count}, {"owner", pad.owner}};
  return {{"k", map.k},
          {"c", map.c.to_strings()},
          {"hash_seed", map.hash_seed},
          {"host_count", map.host_count},
          {"partitions", partitions},
          {"relations", relations},
          {"padding", padding}};
}

AnonymizationMap map_from_json(const nlohmann::json& document) {
  try {
    AnonymizationMap map;
    map.k = document.at("k").get<int>();
    map.hash_seed = document.at("hash_seed").get<uint64_t>();
    map.host_count = document.at("host_count").get<int>();
    for (const auto& entry : document.at("c")) {
      const auto text = entry.get<std::string>();
      const auto dot = text.find('.');
      if (dot == std::string::npos) throw ParseError("control-flow entry '" + text + "' must be rel.attr");
      map.c.insert({text.substr(0, dot), text.substr(dot + 1)});
    }
    for (const auto& [domain, groups] : document.at("partitions").items()) {
      auto& partition = map.partitions[domain];
      partition.domain = domain;
      for (const auto& pair : groups) partition.groups[scalar_from_json(pair.at(0))] = pair.at(1).get<int>();
    }
    for (const auto& [relation, body] : document.at("relations").items()) {
      map.attrs[relation] = body.at("attrs").get<std::vector<std::string>>();
      auto& mapping = map.class_of[relation];
      for (const auto& pair : body.at("classes")) mapping[values_from_json(pair.at(0))] = pair.at(1).get<std::string>();
    }
    if (document.contains("padding")) {
      for (const auto& [id, pad] : document.at("padding").items()) {
        map.padding[id] = {pad.at("count").get<int64_t>(), pad.at("owner").get<HostId>()};
      }
    }
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed view map: ") + e.what());
  }
}

std::string serialize_map(const AnonymizationMap& map) { return map_to_json(map).dump(); }

std::map<std::string, Histogram> collect_histograms(const std::vector<RelationShard>& shards, const Catalog& catalog,
                                                    const ControlFlowSet& c, int host_count) {
  std::map<std::string, Histogram> result;
  for (const auto& relation : c.relations()) {
    const auto& def = catalog.relation(relation);
    const auto attrs = c.for_relation(def);
    std::vector<Histogram> parts;
    parts.push_back(build_histogram(RelationShard{relation, 0, {}}, def, attrs, host_count));
    for (const auto& shard : shards) {
      if (shard.relation == relation) parts.push_back(build_histogram(shard, def, attrs, host_count));
    }
    result.emplace(relation, merge_histograms(parts));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Greedy view construction

namespace {

using GroupKey = std::vector<int>;
using ClassTable = std::map<GroupKey, std::vector<int64_t>>;
using Groups = std::vector<std::vector<Scalar>>;

struct RelationState {
  std::string name;
  std::vector<std::string> attrs;
  std::vector<std::string> domains;
  const Histogram* histogram = nullptr;
};

int64_t sum(const std::vector<int64_t>& counts) { return std::accumulate(counts.begin(), counts.end(), int64_t{0}); }

// First host whose subtraction leaves between 1 and k-1 tuples.
std::optional<HostId> federated_violation(const std::vector<int64_t>& counts, int k) {
  const auto total = sum(counts);
  for (std::size_t h = 0; h < counts.size(); ++h) {
    const auto rest = total - counts[h];
    if (rest > 0 && rest < k) return static_cast<HostId>(h);
  }
  return std::nullopt;
}

bool violates(const std::vector<int64_t>& counts, int k) {
  return sum(counts) < k || federated_violation(counts, k).has_value();
}

class ViewBuilder {
 public:
  ViewBuilder(const std::map<std::string, Histogram>& histograms, const Catalog& catalog, const ControlFlowSet& c,
              int k)
      : catalog_(catalog), c_(c), k_(k) {
    if (k < 1) throw ValidationError("k must be at least 1");
    for (const auto& relation : c.relations()) {
      const auto& def = catalog.relation(relation);
      RelationState state;
      state.name = relation;
      state.attrs = c.for_relation(def);
      for (const auto& attr : state.attrs) state.domains.push_back(def.attribute(attr).domain);
      const auto it = histograms.find(relation);
      if (it == histograms.end()) throw MissingView("no histogram for relation '" + relation + "'");
      if (it->second.key_attrs != state.attrs) {
        throw SchemaMismatch("histogram of '" + relation + "' is not keyed on its control-flow attributes");
      }
      state.histogram = &it->second;
      host_count_ = std::max(host_count_, it->second.host_count);
      relations_.push_back(std::move(state));
    }
    for (const auto& relation : relations_) {
      for (const auto& row : relation.histogram->rows) {
        for (std::size_t j = 0; j < relation.attrs.size(); ++j) frequency_[relation.domains[j]][row.values[j]] += row.total();
      }
    }
  }

  void check_feasible() const {
    for (const auto& relation : relations_) {
      std::vector<int64_t> counts(static_cast<std::size_t>(relation.histogram->host_count), 0);
      for (const auto& row : relation.histogram->rows) {
        for (std::size_t h = 0; h < row.counts.size(); ++h) counts[h] += row.counts[h];
      }
      // A relation held by one host can still be padded to k.
      const auto holders = std::count_if(counts.begin(), counts.end(), [](int64_t n) { return n > 0; });
      if (holders <= 1) continue;
      if (const auto host = federated_violation(counts, k_)) {
        throw ViewInfeasible(relation.name, *host,
                             "removing its tuples leaves " + std::to_string(sum(counts) - counts[*host]) +
                                 " tuples, fewer than k=" + std::to_string(k_));
      }
    }
  }

  // Every value in its own group, most frequent first.
  void init_singletons() {
    for (const auto& [domain, values] : frequency_) {
      std::vector<std::pair<Scalar, int64_t>> ordered(values.begin(), values.end());
      std::stable_sort(ordered.begin(), ordered.end(),
                       [](const auto& a, const auto& b) { return a.second > b.second; });
      auto& groups = groups_[domain];
      for (const auto& [value, count] : ordered) groups.push_back({value});
    }
  }

  void init_groupings(const std::map<std::string, Groups>& groupings) {
    init_singletons();
    for (const auto& [domain, groups] : groupings) {
      auto& target = groups_[domain];
      std::set<Scalar> listed;
      for (const auto& group : groups) listed.insert(group.begin(), group.end());
      for (const auto& [value, count] : frequency_[domain]) {
        if (!listed.count(value)) {
          throw UnmappedValue("value " + format_scalar(value) + " of domain '" + domain + "' has no group");
        }
      }
      target = groups;
    }
  }

  void init_partitions(const std::map<std::string, DomainPartition>& partitions) {
    for (const auto& [domain, values] : frequency_) {
      const auto it = partitions.find(domain);
      if (it == partitions.end()) throw MissingView("view has no partition for domain '" + domain + "'");
      Groups groups(static_cast<std::size_t>(it->second.group_count()));
      for (const auto& [value, group] : it->second.groups) groups[static_cast<std::size_t>(group)].push_back(value);
      for (const auto& [value, count] : values) {
        if (!it->second.groups.count(value)) {
          throw UnmappedValue("value " + format_scalar(value) + " of domain '" + domain + "' is not in the view");
        }
      }
      groups_[domain] = std::move(groups);
    }
  }

  void run() {
    for (;;) {
      const auto index = build_index(groups_);
      // Smallest violating class by (total, relation, group ids).
      std::optional<std::tuple<int64_t, std::size_t, GroupKey, std::vector<int64_t>>> worst;
      for (std::size_t r = 0; r < relations_.size(); ++r) {
        if (padded_.count(relations_[r].name)) continue;
        for (const auto& [key, counts] : classes(relations_[r], index)) {
          if (!violates(counts, k_)) continue;
          auto candidate = std::make_tuple(sum(counts), r, key, counts);
          if (!worst || std::tie(std::get<0>(candidate), relations_[r].name, std::get<2>(candidate)) <
                            std::tie(std::get<0>(*worst), relations_[std::get<1>(*worst)].name, std::get<2>(*worst))) {
            worst = std::move(candidate);
          }
        }
      }
      if (!worst) return;
      const auto& [total, r, key, counts] = *worst;
      const auto& relation = relations_[r];

      std::vector<std::pair<std::string, int>> candidates;  // merge groups g and g+1 of domain
      auto add = [&](const std::string& domain, int g) {
        const auto entry = std::make_pair(domain, g);
        if (std::find(candidates.begin(), candidates.end(), entry) == candidates.end()) candidates.push_back(entry);
      };
      for (std::size_t j = 0; j < relation.attrs.size(); ++j) {
        const auto& domain = relation.domains[j];
        const int g = key[j];
        const int n = static_cast<int>(groups_[domain].size());
        if (g > 0) add(domain, g - 1);
        if (g + 1 < n) add(domain, g);
      }

      if (candidates.empty()) {
        // Whole relation in one class, too small: pad it. Dummies sit with
        // the largest holder, so this only helps a relation on one host.
        const auto owner = static_cast<HostId>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        auto padded_counts = counts;
        padded_counts[static_cast<std::size_t>(owner)] += k_ - total;
        if (const auto host = federated_violation(padded_counts, k_)) {
          throw ViewInfeasible(relation.name, *host, "single class still violates the federated constraint");
        }
        padded_[relation.name] = {k_ - total, owner};
        continue;
      }

      std::optional<std::tuple<int, int64_t, int64_t, std::size_t>> best_score;
      std::size_t best = 0;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& [domain, g] = candidates[i];
        auto trial = groups_;
        merge(trial[domain], g);
        const auto trial_index = build_index(trial);
        int64_t max_size = 0;
        int64_t grown = total;
        for (const auto& other : relations_) {
          const auto table = classes(other, trial_index);
          for (const auto& [other_key, other_counts] : table) max_size = std::max(max_size, sum(other_counts));
          if (&other == &relation) {
            auto moved = key;
            for (std::size_t j = 0; j < relation.attrs.size(); ++j) {
              if (relation.domains[j] == domain && moved[j] > g) --moved[j];
            }
            grown = sum(table.at(moved));
          }
        }
        int64_t merged_frequency = 0;
        for (const auto& value : groups_[domain][static_cast<std::size_t>(g)]) merged_frequency += frequency_[domain][value];
        for (const auto& value : groups_[domain][static_cast<std::size_t>(g) + 1]) {
          merged_frequency += frequency_[domain][value];
        }
        const auto score = std::make_tuple(grown > total ? 0 : 1, max_size, merged_frequency, i);
        if (!best_score || score < *best_score) {
          best_score = score;
          best = i;
        }
      }
      merge(groups_[candidates[best].first], candidates[best].second);
    }
  }

  AnonymizationMap finish(uint64_t seed) const {
    AnonymizationMap map;
    map.k = k_;
    map.c = c_;
    map.hash_seed = seed;
    map.host_count = host_count_;
    for (const auto& [domain, groups] : groups_) {
      auto& partition = map.partitions[domain];
      partition.domain = domain;
      for (std::size_t g = 0; g < groups.size(); ++g) {
        for (const auto& value : groups[g]) partition.groups[value] = static_cast<int>(g);
      }
    }
    const auto index = build_index(groups_);
    for (const auto& relation : relations_) {
      map.attrs[relation.name] = relation.attrs;
      auto& mapping = map.class_of[relation.name];
      for (const auto& row : relation.histogram->rows) mapping[row.values] = class_id_for(relation.name, key_of(relation, row, index));
      const auto pad = padded_.find(relation.name);
      if (pad != padded_.end() && !mapping.empty()) map.padding[mapping.begin()->second] = pad->second;
    }
    return map;
  }

 private:
  using Index = std::map<std::string, std::map<Scalar, int>>;

  static Index build_index(const std::map<std::string, Groups>& groups) {
    Index index;
    for (const auto& [domain, list] : groups) {
      auto& target = index[domain];
      for (std::size_t g = 0; g < list.size(); ++g) {
        for (const auto& value : list[g]) target[value] = static_cast<int>(g);
      }
    }
    return index;
  }

  static void merge(Groups& groups, int g) {
    auto& left = groups[static_cast<std::size_t>(g)];
    auto& right = groups[static_cast<std::size_t>(g) + 1];
    left.insert(left.end(), right.begin(), right.end());
    groups.erase(groups.begin() + g + 1);
  }

  static GroupKey key_of(const RelationState& relation, const HistogramRow& row, const Index& index) {
    GroupKey key;
    key.reserve(relation.attrs.size());
    for (std::size_t j = 0; j < relation.attrs.size(); ++j) key.push_back(index.at(relation.domains[j]).at(row.values[j]));
    return key;
  }

  ClassTable classes(const RelationState& relation, const Index& index) const {
    ClassTable table;
    for (const auto& row : relation.histogram->rows) {
      if (row.total() == 0) continue;
      auto& counts = table[key_of(relation, row, index)];
      counts.resize(static_cast<std::size_t>(host_count_), 0);
      for (std::size_t h = 0; h < row.counts.size(); ++h) counts[h] += row.counts[h];
    }
    return table;
  }

  const Catalog& catalog_;
  ControlFlowSet c_;
  int k_;
  int host_count_ = 1;
  std::vector<RelationState> relations_;
  std::map<std::string, std::map<Scalar, int64_t>> frequency_;
  std::map<std::string, Groups> groups_;
  std::map<std::string, ClassPadding> padded_;  // by relation
};

}  // namespace

AnonymizationMap generate_view(const std::map<std::string, Histogram>& histograms, int k, const Catalog& catalog,
                               const ControlFlowSet& c, uint64_t seed) {
  ViewBuilder builder(histograms, catalog, c, k);
  builder.check_feasible();
  builder.init_singletons();
  builder.run();
  return builder.finish(seed);
}

AnonymizationMap build_view(const std::map<std::string, Histogram>& histograms, int k, const Catalog& catalog,
                            const ControlFlowSet& c, uint64_t seed,
                            const std::map<std::string, std::vector<std::vector<Scalar>>>& groupings) {
  ViewBuilder builder(histograms, catalog, c, k);
  builder.init_groupings(groupings);
  return builder.finish(seed);
}

AnonymizationMap merge_for_k(const AnonymizationMap& map, const std::map<std::string, Histogram>& histograms,
                             int k_new, const Catalog& catalog) {
  if (k_new <= map.k) {
    throw ValidationError("merge_for_k needs k_new > " + std::to_string(map.k) + ", got " + std::to_string(k_new));
  }
  ViewBuilder builder(histograms, catalog, map.c, k_new);
  builder.check_feasible();
  builder.init_partitions(map.partitions);
  builder.run();
  return builder.finish(map.hash_seed);
}

// ---------------------------------------------------------------------------
// Checking, partitioning, routing

nlohmann::json violation_to_json(const Violation& violation) {
  nlohmann::json line = {{"relation", violation.relation}, {"class_id", violation.class_id}, {"kind", violation.kind}};
  if (violation.host) line["host"] = *violation.host;
  return line;
}

std::string violations_to_jsonl(const std::vector<Violation>& violations) {
  std::string out;
  for (const auto& violation : violations) out += violation_to_json(violation).dump() + "\n";
  return out;
}

std::vector<Violation> check_view(const AnonymizationMap& map, const std::vector<RelationShard>& shards, int k,
                                  const Catalog& catalog) {
  std::vector<Violation> violations;
  int host_count = map.host_count;
  for (const auto& shard : shards) host_count = std::max(host_count, shard.owner + 1);

  for (const auto& [relation, attrs] : map.attrs) {
    const auto& def = catalog.relation(relation);
    std::vector<std::size_t> indices;
    for (const auto& attr : attrs) indices.push_back(def.index_of(attr));

    // Materialize without throwing so unmapped tuples become violations.
    std::map<std::string, std::vector<int64_t>> counts;
    std::set<ValueVector> unmapped;
    for (const auto& shard : shards) {
      if (shard.relation != relation) continue;
      for (const auto& tuple : shard.tuples) {
        ValueVector key;
        for (const auto index : indices) key.push_back(tuple.values.at(index));
        const auto& mapping = map.class_of.at(relation);
        const auto it = mapping.find(key);
        if (it == mapping.end()) {
          unmapped.insert(key);
          continue;
        }
        auto& per_host = counts[it->second];
        per_host.resize(static_cast<std::size_t>(host_count), 0);
        ++per_host[static_cast<std::size_t>(tuple.owner)];
      }
    }
    for (const auto& [id, pad] : map.padding) {
      const auto it = counts.find(id);
      if (it != counts.end()) it->second[static_cast<std::size_t>(pad.owner)] += pad.count;
    }
    for (const auto& key : unmapped) {
      std::string rendered;
      for (const auto& value : key) rendered += (rendered.empty() ? "" : ",") + format_scalar(value);
      violations.push_back({relation, "(" + rendered + ")", "unmapped", std::nullopt});
    }

    auto check = [&](const std::string& id, const std::vector<int64_t>& per_host, const std::string& size_kind) {
      if (sum(per_host) < k) violations.push_back({relation, id, size_kind, std::nullopt});
      const auto total = sum(per_host);
      for (std::size_t h = 0; h < per_host.size(); ++h) {
        const auto rest = total - per_host[h];
        if (rest > 0 && rest < k) {
          violations.push_back({relation, id, size_kind == "size" ? "federated" : size_kind, static_cast<HostId>(h)});
        }
      }
    };
    for (const auto& [id, per_host] : counts) check(id, per_host, "size");

    // Every proper projection of the class-id-rewritten relation.
    if (attrs.size() <= 3) {
      const unsigned full = (1u << attrs.size()) - 1;
      for (unsigned mask = 0; mask < full; ++mask) {
        std::map<std::string, std::vector<int64_t>> projected;
        for (const auto& [id, per_host] : counts) {
          const auto groups = map.groups_of(id);
          std::string projected_id = relation + "#";
          for (std::size_t j = 0; j < groups.size(); ++j) {
            if (j) projected_id += '.';
            projected_id += (mask >> j) & 1u ? std::to_string(groups[j]) : "*";
          }
          auto& target = projected[projected_id];
          target.resize(static_cast<std::size_t>(host_count), 0);
          for (std::size_t h = 0; h < per_host.size(); ++h) target[h] += per_host[h];
        }
        for (const auto& [id, per_host] : projected) check(id, per_host, "projection");
      }
    }
  }
  return violations;
}

HostId partition_host(uint64_t seed, const std::string& class_id, const std::vector<HostId>& hosts) {
  if (hosts.empty()) throw ValidationError("no hosts to partition over");
  return hosts[hash_bytes(seed, class_id) % hosts.size()];
}

PartitionAssignment assign_partitions(const AnonymizationMap& map, const std::vector<HostId>& hosts) {
  PartitionAssignment assignment;
  for (const auto& id : map.class_ids()) assignment[id] = partition_host(map.hash_seed, id, hosts);
  return assignment;
}

std::vector<EquivalenceClass> apply_view(const RelationShard& shard, const AnonymizationMap& map,
                                         const Catalog& catalog) {
  if (!map.covers(shard.relation)) throw MissingView("no view for relation '" + shard.relation + "'");
  const auto& def = catalog.relation(shard.relation);
  std::vector<std::size_t> indices;
  for (const auto& attr : map.attrs.at(shard.relation)) indices.push_back(def.index_of(attr));

  std::map<std::string, EquivalenceClass> classes;
  for (const auto& tuple : shard.tuples) {
    ValueVector key;
    key.reserve(indices.size());
    for (const auto index : indices) key.push_back(tuple.values.at(index));
    const auto& id = map.lookup(shard.relation, key);
    auto& cls = classes[id];
    if (cls.id.empty()) {
      cls.id = id;
      cls.relation = shard.relation;
    }
    cls.tuples.push_back(tuple);
    cls.covered_values.insert(std::move(key));
  }
  for (auto& [id, cls] : classes) {
    const auto pad = map.padding.find(id);
    if (pad == map.padding.end() || pad->second.owner != shard.owner) continue;
    auto dummy = cls.tuples.front();
    dummy.dummy = true;
    dummy.owner = shard.owner;
    for (int64_t i = 0; i < pad->second.count; ++i) cls.tuples.push_back(dummy);
  }
  std::vector<EquivalenceClass> result;
  result.reserve(classes.size());
  for (auto& [id, cls] : classes) result.push_back(std::move(cls));
  return result;
}

std::vector<EquivalenceClass> materialize_classes(const std::vector<RelationShard>& shards, const std::string& relation,
                                                  const AnonymizationMap& map, const Catalog& catalog) {
  std::vector<const RelationShard*> ordered;
  for (const auto& shard : shards) {
    if (shard.relation == relation) ordered.push_back(&shard);
  }
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) { return a->owner < b->owner; });
  std::map<std::string, EquivalenceClass> merged;
  for (const auto* shard : ordered) {
    for (auto& cls : apply_view(*shard, map, catalog)) {
      auto& target = merged[cls.id];
      if (target.id.empty()) {
        target = std::move(cls);
        continue;
      }
      target.tuples.insert(target.tuples.end(), cls.tuples.begin(), cls.tuples.end());
      target.covered_values.insert(cls.covered_values.begin(), cls.covered_values.end());
    }
  }
  std::vector<EquivalenceClass> result;
  for (auto& [id, cls] : merged) result.push_back(std::move(cls));
  return result;
}

}  // namespace kloak
