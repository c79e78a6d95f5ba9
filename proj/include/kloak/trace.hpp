#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace kloak {

enum class EventKind { ClassEmit, ClassDrop, PairEmit, BinEmit };

std::string_view to_string(EventKind kind);
EventKind event_kind_from_string(std::string_view text);

struct TraceEvent {
  int node = 0;
  EventKind kind = EventKind::ClassEmit;
  std::string class_id;
  std::string class2;  // PairEmit only
  int64_t cardinality = 0;
  int64_t comparisons = 0;

  bool operator==(const TraceEvent&) const = default;
};

struct NodeTotals {
  int64_t comparisons = 0;
  int64_t output_tuples = 0;

  bool operator==(const NodeTotals&) const = default;
};

// Cost model. Sizes are class cardinalities; `examined` is the tuple count
// scanned by an unpadded (plain/encrypted) operator.
int64_t charge_class(int64_t class_size);
int64_t charge_pair(int64_t left_size, int64_t right_size);
int64_t charge_examined(int64_t examined);

class Trace {
 public:
  void record(TraceEvent event) { events_.push_back(std::move(event)); }
  void append(const Trace& other);

  // Stable sort by (node, class, class2); recording order breaks ties.
  void canonicalize();

  const std::vector<TraceEvent>& events() const { return events_; }
  bool empty() const { return events_.empty(); }

  std::map<int, NodeTotals> totals() const;
  int64_t total_comparisons() const;
  // Output tuples of the highest node that recorded events.
  int64_t output_tuples() const;
  int64_t output_tuples(int node) const;

  // One event per line, then a {"totals": ...} line.
  std::string to_jsonl() const;
  static Trace from_jsonl(std::string_view text);
  nlohmann::json to_json() const;
  static Trace from_json(const nlohmann::json& document);

  uint64_t digest() const;

 private:
  std::vector<TraceEvent> events_;
};

struct TraceComparison {
  bool equal = true;
  std::optional<std::size_t> index;
  std::optional<TraceEvent> left;
  std::optional<TraceEvent> right;

  std::string describe() const;
};

TraceComparison traces_equal(const Trace& a, const Trace& b);

}  // namespace kloak
