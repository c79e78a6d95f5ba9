#include "kloak/trace.hpp"

#include <algorithm>
#include <sstream>
#include <tuple>

#include "kloak/errors.hpp"
#include "kloak/hash.hpp"

namespace kloak {

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::ClassEmit:
      return "ClassEmit";
    case EventKind::ClassDrop:
      return "ClassDrop";
    case EventKind::PairEmit:
      return "PairEmit";
    case EventKind::BinEmit:
      return "BinEmit";
  }
  return "ClassEmit";
}

EventKind event_kind_from_string(std::string_view text) {
  if (text == "ClassEmit") return EventKind::ClassEmit;
  if (text == "ClassDrop") return EventKind::ClassDrop;
  if (text == "PairEmit") return EventKind::PairEmit;
  if (text == "BinEmit") return EventKind::BinEmit;
  throw ParseError("unknown trace event kind '" + std::string(text) + "'");
}

int64_t charge_class(int64_t class_size) { return class_size; }
int64_t charge_pair(int64_t left_size, int64_t right_size) { return left_size * right_size; }
int64_t charge_examined(int64_t examined) { return examined; }

void Trace::append(const Trace& other) { events_.insert(events_.end(), other.events_.begin(), other.events_.end()); }

void Trace::canonicalize() {
  std::stable_sort(events_.begin(), events_.end(), [](const TraceEvent& a, const TraceEvent& b) {
    return std::tie(a.node, a.class_id, a.class2) < std::tie(b.node, b.class_id, b.class2);
  });
}

std::map<int, NodeTotals> Trace::totals() const {
  std::map<int, NodeTotals> result;
  for (const auto& event : events_) {
    auto& totals = result[event.node];
    totals.comparisons += event.comparisons;
    totals.output_tuples += event.cardinality;
  }
  return result;
}

int64_t Trace::total_comparisons() const {
  int64_t sum = 0;
  for (const auto& event : events_) sum += event.comparisons;
  return sum;
}

int64_t Trace::output_tuples() const {
  const auto per_node = totals();
  return per_node.empty() ? 0 : per_node.rbegin()->second.output_tuples;
}

int64_t Trace::output_tuples(int node) const {
  int64_t sum = 0;
  for (const auto& event : events_) {
    if (event.node == node) sum += event.cardinality;
  }
  return sum;
}

namespace {

std::string event_line(const TraceEvent& event) {
  // Field order is part of the file format, so build it ordered.
  nlohmann::ordered_json line;
  line["node"] = event.node;
  line["kind"] = std::string(to_string(event.kind));
  line["class"] = event.class_id;
  if (event.kind == EventKind::PairEmit) line["class2"] = event.class2;
  line["card"] = event.cardinality;
  line["cmp"] = event.comparisons;
  return line.dump();
}

nlohmann::json event_to_json(const TraceEvent& event) { return nlohmann::json::parse(event_line(event)); }

TraceEvent event_from_json(const nlohmann::json& line) {
  TraceEvent event;
  event.node = line.at("node").get<int>();
  event.kind = event_kind_from_string(line.at("kind").get<std::string>());
  event.class_id = line.at("class").get<std::string>();
  if (line.contains("class2")) event.class2 = line.at("class2").get<std::string>();
  event.cardinality = line.at("card").get<int64_t>();
  event.comparisons = line.at("cmp").get<int64_t>();
  return event;
}

}  // namespace

std::string Trace::to_jsonl() const {
  std::string out;
  for (const auto& event : events_) out += event_line(event) + "\n";
  nlohmann::ordered_json nodes = nlohmann::ordered_json::object();
  for (const auto& [node, totals] : this->totals()) {
    nlohmann::ordered_json entry;
    entry["cmp"] = totals.comparisons;
    entry["out"] = totals.output_tuples;
    nodes[std::to_string(node)] = entry;
  }
  nlohmann::ordered_json summary;
  summary["totals"] = nodes;
  summary["cmp"] = total_comparisons();
  out += summary.dump() + "\n";
  return out;
}

Trace Trace::from_jsonl(std::string_view text) {
  Trace trace;
  std::istringstream stream{std::string(text)};
  std::string line;
  while (std::getline(stream, line)) {
    if (line.empty()) continue;
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("bad trace line: ") + e.what());
    }
    if (parsed.contains("totals")) continue;
    trace.record(event_from_json(parsed));
  }
  return trace;
}

nlohmann::json Trace::to_json() const {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& event : events_) events.push_back(event_to_json(event));
  return events;
}

Trace Trace::from_json(const nlohmann::json& document) {
  Trace trace;
  for (const auto& line : document) trace.record(event_from_json(line));
  return trace;
}

uint64_t Trace::digest() const { return hash_bytes(0x6b6c6f616bULL, to_jsonl()); }

std::string TraceComparison::describe() const {
  if (equal) return "traces equal";
  auto render = [](const std::optional<TraceEvent>& event) {
    return event ? event_line(*event) : std::string("<missing>");
  };
  return "first divergence at event " + std::to_string(index.value_or(0)) + ": " + render(left) + " vs " +
         render(right);
}

TraceComparison traces_equal(const Trace& a, const Trace& b) {
  const auto& left = a.events();
  const auto& right = b.events();
  const auto common = std::min(left.size(), right.size());
  for (std::size_t i = 0; i < common; ++i) {
    if (left[i] != right[i]) return {false, i, left[i], right[i]};
  }
  if (left.size() == right.size()) return {};
  TraceComparison result{false, common, std::nullopt, std::nullopt};
  if (common < left.size()) result.left = left[common];
  if (common < right.size()) result.right = right[common];
  return result;
}

}  // namespace kloak
