#include <gtest/gtest.h>

#include "fig2.hpp"
#include "kloak/anonymizer.hpp"
#include "kloak/errors.hpp"

namespace kloak {
namespace {

// One relation r(pid, v), c = {r.v}.
struct Single {
  Catalog catalog{{{"r",
                    {{"pid", ScalarKind::Integer, Policy::Public, "pid"}, {"v", ScalarKind::Text, Policy::KAnon, "v"}},
                    "pid"}},
                  {}};
  ControlFlowSet c{std::set<ColumnRef>{{"r", "v"}}};
  std::vector<RelationShard> shards;

  explicit Single(int hosts) {
    for (HostId h = 0; h < hosts; ++h) shards.push_back({"r", h, {}});
  }
  void add(HostId host, const std::string& value, int copies = 1) {
    for (int i = 0; i < copies; ++i) {
      const auto pid = static_cast<int64_t>(shards[static_cast<std::size_t>(host)].tuples.size() + 100 * host);
      shards[static_cast<std::size_t>(host)].tuples.push_back({{pid, value}, false, host});
    }
  }
  std::map<std::string, Histogram> histograms() const {
    return collect_histograms(shards, catalog, c, static_cast<int>(shards.size()));
  }
};

std::map<std::string, std::size_t> class_sizes(const std::vector<EquivalenceClass>& classes) {
  std::map<std::string, std::size_t> sizes;
  for (const auto& cls : classes) sizes[cls.id] = cls.size();
  return sizes;
}

}  // namespace

TEST(HistogramTest, CountsValueVectors) {
  const auto fig = testing::load_fig2();
  const auto& relation = fig.data.catalog.relation("demographics");
  RelationShard shard{"demographics", 0, {{{int64_t{1}, std::string("F")}, false, 0},
                                          {{int64_t{2}, std::string("F")}, false, 0},
                                          {{int64_t{3}, std::string("M")}, false, 0}}};
  const auto histogram = build_histogram(shard, relation, {"pid", "sex"}, 1);
  ASSERT_EQ(histogram.rows.size(), 3u);
  for (const auto& row : histogram.rows) EXPECT_EQ(row.counts, std::vector<int64_t>{1});

  shard.tuples.clear();
  EXPECT_TRUE(build_histogram(shard, relation, {"pid", "sex"}, 1).rows.empty());

  for (int i = 0; i < 5; ++i) shard.tuples.push_back({{int64_t{1}, std::string("F")}, false, 0});
  const auto five = build_histogram(shard, relation, {"sex"}, 1);
  ASSERT_EQ(five.rows.size(), 1u);
  EXPECT_EQ(five.rows[0].total(), 5);
}

TEST(HistogramTest, MergeAddsHostColumns) {
  const auto fig = testing::load_fig2();
  const auto& relation = fig.data.catalog.relation("demographics");
  std::vector<Histogram> parts;
  for (HostId h = 0; h < 4; ++h) {
    parts.push_back(build_histogram({"demographics", h, {{{int64_t{1}, std::string("F")}, false, h}}}, relation,
                                    {"sex"}, 4));
  }
  const auto merged = merge_histograms(parts);
  ASSERT_EQ(merged.rows.size(), 1u);
  EXPECT_EQ(merged.rows[0].counts, (std::vector<int64_t>{1, 1, 1, 1}));
  EXPECT_EQ(merged.total(), 4);

  const auto empty = build_histogram({"demographics", 1, {}}, relation, {"sex"}, 4);
  const auto same = merge_histograms({parts[0], empty});
  EXPECT_EQ(histogram_to_json(same), histogram_to_json(parts[0]));

  EXPECT_THROW(merge_histograms({parts[0], build_histogram({"demographics", 0, {}}, relation, {"pid"}, 4)}),
               SchemaMismatch);
  EXPECT_EQ(histogram_to_json(histogram_from_json(histogram_to_json(merged))), histogram_to_json(merged));
}

TEST(ViewTest, Fig2HasThreeClassesPerRelation) {
  const auto fig = testing::load_fig2();
  const auto demographics = materialize_classes(fig.data.shards, "demographics", fig.map, fig.data.catalog);
  EXPECT_EQ(class_sizes(demographics),
            (std::map<std::string, std::size_t>{{"demographics#0.0", 2}, {"demographics#0.1", 2}, {"demographics#1.0", 2}}));
  // sex groups: F is group 0, M group 1; (0*,F), (0*,M), (1*,F)
  EXPECT_EQ(fig.map.lookup("demographics", {int64_t{3}, std::string("M")}), "demographics#0.1");
  EXPECT_EQ(materialize_classes(fig.data.shards, "diagnosis", fig.map, fig.data.catalog).size(), 3u);
  EXPECT_TRUE(check_view(fig.map, fig.data.shards, 2, fig.data.catalog).empty());
}

TEST(ViewTest, Fig2AtK3ListsEverySizeTwoClass) {
  const auto fig = testing::load_fig2();
  std::set<std::string> undersized;
  for (const auto& violation : check_view(fig.map, fig.data.shards, 3, fig.data.catalog)) {
    if (violation.kind == "size") undersized.insert(violation.class_id);
  }
  EXPECT_EQ(undersized.size(), 6u);
}

TEST(ViewTest, KOneKeepsEveryVector) {
  Single r(2);
  r.add(0, "a");
  r.add(0, "b");
  r.add(1, "c");
  const auto map = generate_view(r.histograms(), 1, r.catalog, r.c, 42);
  EXPECT_EQ(map.class_ids().size(), 3u);
  EXPECT_TRUE(map.padding.empty());
}

TEST(ViewTest, MergesSmallClasses) {
  Single r(1);
  r.add(0, "a", 3);
  r.add(0, "b", 1);
  r.add(0, "c", 1);
  r.add(0, "d", 4);
  const auto map = generate_view(r.histograms(), 3, r.catalog, r.c, 42);
  EXPECT_TRUE(check_view(map, r.shards, 3, r.catalog).empty());
  EXPECT_GE(map.class_ids().size(), 2u);
  EXPECT_EQ(map, generate_view(r.histograms(), 3, r.catalog, r.c, 42));
}

TEST(ViewTest, SkewAcrossHostsIsInfeasible) {
  Single r(2);
  r.add(0, "a", 5);
  r.add(1, "a", 1);
  try {
    generate_view(r.histograms(), 5, r.catalog, r.c, 42);
    FAIL() << "expected ViewInfeasible";
  } catch (const ViewInfeasible& e) {
    EXPECT_EQ(e.relation(), "r");
    EXPECT_EQ(e.host(), 0);
  }
}

TEST(ViewTest, RelationOnOneHostIsPadded) {
  Single r(3);
  r.add(1, "a", 2);
  r.add(1, "b", 1);
  const auto map = generate_view(r.histograms(), 5, r.catalog, r.c, 42);
  ASSERT_EQ(map.padding.size(), 1u);
  EXPECT_EQ(map.padding.begin()->second, (ClassPadding{2, 1}));
  EXPECT_TRUE(check_view(map, r.shards, 5, r.catalog).empty());
  const auto classes = apply_view(r.shards[1], map, r.catalog);
  ASSERT_EQ(classes.size(), 1u);
  EXPECT_EQ(classes[0].size(), 5u);
  EXPECT_EQ(std::count_if(classes[0].tuples.begin(), classes[0].tuples.end(), [](const Tuple& t) { return t.dummy; }), 2);
}

TEST(ViewTest, OneHostClassHasNoFederatedViolation) {
  Single r(2);
  r.add(0, "a", 4);
  r.add(1, "b", 2);
  const auto map = generate_view(r.histograms(), 2, r.catalog, r.c, 42);
  EXPECT_TRUE(check_view(map, r.shards, 2, r.catalog).empty());
  EXPECT_EQ(map.class_ids().size(), 2u);
}

TEST(ViewTest, FederatedViolationIsReported) {
  Single r(2);
  r.add(0, "a", 4);
  r.add(1, "a", 1);
  const auto map = build_view(r.histograms(), 2, r.catalog, r.c, 42, {});
  const auto violations = check_view(map, r.shards, 2, r.catalog);
  // The empty projection repeats the finding under its own kind.
  ASSERT_EQ(violations.size(), 2u);
  EXPECT_EQ(violations[0].kind, "federated");
  EXPECT_EQ(violations[0].host, 0);
  EXPECT_EQ(violations[1].kind, "projection");
}

TEST(ViewTest, ProjectionViolationIsReported) {
  // Classes (a,x) and (b,x) of two; at k=3 the projection onto v1 is short too.
  Catalog catalog{{{"r",
                    {{"pid", ScalarKind::Integer, Policy::Public, "pid"},
                     {"v1", ScalarKind::Text, Policy::KAnon, "v1"},
                     {"v2", ScalarKind::Text, Policy::KAnon, "v2"}},
                    "pid"}},
                  {}};
  const ControlFlowSet c{std::set<ColumnRef>{{"r", "v1"}, {"r", "v2"}}};
  RelationShard shard{"r", 0, {}};
  for (int i = 0; i < 2; ++i) shard.tuples.push_back({{int64_t{i}, std::string("a"), std::string("x")}, false, 0});
  for (int i = 0; i < 2; ++i) shard.tuples.push_back({{int64_t{i}, std::string("b"), std::string("x")}, false, 0});
  const auto histograms = collect_histograms({shard}, catalog, c, 1);
  const auto map = build_view(histograms, 2, catalog, c, 42, {});
  EXPECT_TRUE(check_view(map, {shard}, 2, catalog).empty());
  const auto at3 = check_view(map, {shard}, 3, catalog);
  EXPECT_TRUE(std::any_of(at3.begin(), at3.end(), [](const Violation& v) { return v.kind == "projection"; }));
}

TEST(ViewTest, MergeForKCoarsens) {
  // pid groups {1..4} {5..8}, each with two F and two M.
  Catalog catalog{{{"d",
                    {{"pid", ScalarKind::Integer, Policy::Public, "pid"}, {"sex", ScalarKind::Text, Policy::KAnon, "sex"}},
                    "pid"}},
                  {}};
  const ControlFlowSet c{std::set<ColumnRef>{{"d", "pid"}, {"d", "sex"}}};
  RelationShard shard{"d", 0, {}};
  for (int64_t pid = 1; pid <= 8; ++pid) shard.tuples.push_back({{pid, std::string(pid % 2 ? "F" : "M")}, false, 0});
  const auto histograms = collect_histograms({shard}, catalog, c, 1);
  std::map<std::string, std::vector<std::vector<Scalar>>> groups = {
      {"pid", {{int64_t{1}, int64_t{2}, int64_t{3}, int64_t{4}}, {int64_t{5}, int64_t{6}, int64_t{7}, int64_t{8}}}}};
  const auto map = build_view(histograms, 2, catalog, c, 42, groups);
  ASSERT_EQ(map.class_ids().size(), 4u);

  const auto merged = merge_for_k(map, histograms, 4, catalog);
  EXPECT_EQ(merged.k, 4);
  EXPECT_TRUE(check_view(merged, {shard}, 4, catalog).empty());
  // Either domain may be coarsened; both leave two classes of four.
  const auto classes = materialize_classes({shard}, "d", merged, catalog);
  ASSERT_EQ(classes.size(), 2u);
  EXPECT_EQ(classes[0].size(), 4u);
  EXPECT_EQ(classes[1].size(), 4u);

  EXPECT_THROW(merge_for_k(map, histograms, 2, catalog), ValidationError);
}

TEST(ViewTest, SingleClassOnlyUpdatesK) {
  Single r(1);
  r.add(0, "a", 6);
  const auto map = generate_view(r.histograms(), 2, r.catalog, r.c, 42);
  const auto merged = merge_for_k(map, r.histograms(), 5, r.catalog);
  EXPECT_EQ(merged.k, 5);
  EXPECT_EQ(merged.class_of, map.class_of);
  EXPECT_EQ(merged.partitions, map.partitions);
}

TEST(ViewTest, MapJsonRoundTrips) {
  const auto fig = testing::load_fig2();
  EXPECT_EQ(map_from_json(map_to_json(fig.map)), fig.map);
  EXPECT_EQ(serialize_map(map_from_json(nlohmann::json::parse(serialize_map(fig.map)))), serialize_map(fig.map));
}

TEST(ApplyViewTest, EmptyAndUnmapped) {
  const auto fig = testing::load_fig2();
  EXPECT_TRUE(apply_view({"demographics", 0, {}}, fig.map, fig.data.catalog).empty());
  RelationShard stale{"demographics", 0, {{{int64_t{99}, std::string("F")}, false, 0}}};
  EXPECT_THROW(apply_view(stale, fig.map, fig.data.catalog), UnmappedValue);
  const auto violations = check_view(fig.map, {stale}, 2, fig.data.catalog);
  ASSERT_FALSE(violations.empty());
  EXPECT_EQ(violations[0].kind, "unmapped");
}

TEST(PartitionTest, MatchesReferenceHashes) {
  // hash_bytes(42, id) % 4, computed independently.
  const std::vector<HostId> hosts = {0, 1, 2, 3};
  EXPECT_EQ(partition_host(42, "a", hosts), 0);
  EXPECT_EQ(partition_host(42, "b", hosts), 1);
  EXPECT_EQ(partition_host(42, "c", hosts), 0);
  EXPECT_EQ(partition_host(42, "a", {5}), 5);
  EXPECT_THROW(partition_host(42, "a", {}), ValidationError);
}

TEST(PartitionTest, SeedChangesAssignment) {
  const std::vector<HostId> hosts = {0, 1, 2, 3};
  int moved = 0;
  for (int i = 0; i < 8; ++i) {
    const auto id = "c" + std::to_string(i);
    moved += partition_host(42, id, hosts) != partition_host(43, id, hosts);
  }
  EXPECT_EQ(moved, 4);
}

}  // namespace kloak
