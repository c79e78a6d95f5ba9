#include <gtest/gtest.h>

#include "fig2.hpp"
#include "kloak/bench.hpp"
#include "kloak/errors.hpp"
#include "kloak/planner.hpp"

namespace kloak {
namespace {

std::vector<NodeKind> kinds(const QueryPlan& plan) {
  std::vector<NodeKind> out;
  for (const auto& node : plan.nodes) out.push_back(node.kind);
  return out;
}

std::set<std::string> names(const ControlFlowSet& c) {
  const auto strings = c.to_strings();
  return {strings.begin(), strings.end()};
}

ControlFlowSet set_of(std::initializer_list<ColumnRef> columns) { return ControlFlowSet(std::set<ColumnRef>(columns)); }

// r(pid, x public, q kanon) and s(pid, y public).
Catalog branch_catalog() {
  return Catalog({{"r",
                   {{"pid", ScalarKind::Integer, Policy::Public, "pid"},
                    {"x", ScalarKind::Integer, Policy::Public, "x"},
                    {"q", ScalarKind::Text, Policy::KAnon, "q"}},
                   "pid"},
                  {"s",
                   {{"pid", ScalarKind::Integer, Policy::Public, "pid"}, {"y", ScalarKind::Integer, Policy::Public, "y"}},
                   "pid"}},
                 {});
}

}  // namespace

TEST(ParseTest, Fig2QueryIsFiveNodes) {
  const auto fig = testing::load_fig2();
  const auto plan = parse_query(fig.query, fig.data.catalog);
  EXPECT_EQ(kinds(plan), (std::vector<NodeKind>{NodeKind::Scan, NodeKind::Scan, NodeKind::Filter, NodeKind::Join,
                                                NodeKind::Aggregate}));
  EXPECT_EQ(plan.root, 4);
  const auto* aggregate = plan.aggregate_node();
  ASSERT_NE(aggregate, nullptr);
  ASSERT_TRUE(aggregate->entity);
  EXPECT_EQ(aggregate->entity->attr, "pid");
}

TEST(ParseTest, MinimalQuery) {
  const auto fig = testing::load_fig2();
  const auto plan = parse_query("SELECT pid FROM diagnosis", fig.data.catalog);
  EXPECT_EQ(kinds(plan), (std::vector<NodeKind>{NodeKind::Scan, NodeKind::Project}));
}

TEST(ParseTest, ComorbidityQueryHasSortAndLimit) {
  const auto catalog = gen_health(5, 1, 0.0).catalog;
  const auto plan = parse_query(
      "SELECT diag, COUNT(*) AS cnt FROM diagnoses, cdiff_cohort WHERE diagnoses.pid = cdiff_cohort.pid "
      "AND diag <> 'cdiff' GROUP BY diag ORDER BY cnt DESC LIMIT 10",
      catalog);
  const auto k = kinds(plan);
  EXPECT_NE(std::find(k.begin(), k.end(), NodeKind::Sort), k.end());
  EXPECT_EQ(k.back(), NodeKind::Limit);
  EXPECT_EQ(plan.node(plan.root).limit, 10);
  EXPECT_EQ(plan.node(plan.engine_root()).kind, NodeKind::Aggregate);
}

TEST(ParseTest, Errors) {
  const auto fig = testing::load_fig2();
  const auto& catalog = fig.data.catalog;
  try {
    parse_query("SELECT pid FROM diagnosis WHERE", catalog);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GT(e.position(), 0u);
  }
  EXPECT_THROW(parse_query("SELECT nope FROM diagnosis", catalog), UnknownAttribute);
  EXPECT_THROW(parse_query("SELECT pid FROM nowhere", catalog), UnknownAttribute);
  // pid lives in both relations
  EXPECT_THROW(parse_query("SELECT pid FROM demographics, diagnosis WHERE demographics.pid = diagnosis.pid", catalog),
               Error);
  EXPECT_THROW(parse_query("SELECT diag, COUNT(*) FROM diagnosis GROUP BY diag HAVING COUNT(*) > 1", catalog),
               UnsupportedFeature);
  EXPECT_THROW(parse_query("SELECT pid FROM diagnosis WHERE pid = 'x'", catalog), TypeError);
}

TEST(ControlFlowTest, Fig2AnonymizesSexAndPid) {
  const auto fig = testing::load_fig2();
  EXPECT_EQ(names(fig.c), (std::set<std::string>{"demographics.pid", "demographics.sex", "diagnosis.diag",
                                                 "diagnosis.pid"}));
}

TEST(ControlFlowTest, PublicOnlyPlanIsEmpty) {
  const auto fig = testing::load_fig2();
  const auto plan = parse_query("SELECT pid FROM demographics WHERE pid > 2", fig.data.catalog);
  EXPECT_TRUE(derive_control_flow(plan, fig.data.catalog).empty());
}

TEST(ControlFlowTest, TaintReachesJoinKeysBelow) {
  // Scan r, Scan s, Filter r.q (kanon), Filter s.y (public), Join, Project.
  const auto catalog = branch_catalog();
  const auto plan = parse_query("SELECT s.y FROM r, s WHERE r.pid = s.pid AND r.q = 'a' AND s.y > 3", catalog);
  ASSERT_EQ(plan.nodes.size(), 6u);
  const auto c = derive_control_flow(plan, catalog);
  // The join consumes anonymized classes, so its public keys join C. The
  // public filter under it runs before anonymization and stays out.
  EXPECT_EQ(names(c), (std::set<std::string>{"r.pid", "r.q", "s.pid"}));

  const auto moded = assign_modes(plan, c);
  EXPECT_TRUE(secure_frontier_is_upward_closed(moded));
  for (const auto& node : moded.nodes) {
    if (node.kind == NodeKind::Filter) {
      const bool kanon_filter = node.predicates.front().column.attr == "q";
      EXPECT_EQ(node.placement, kanon_filter ? Placement::Secure : Placement::Plain);
    }
    if (node.kind == NodeKind::Join || node.kind == NodeKind::Project) EXPECT_EQ(node.placement, Placement::Secure);
  }
}

TEST(ControlFlowTest, AggregateAboveJoinTaintsKeys) {
  const auto catalog = branch_catalog();
  const auto plan = parse_query("SELECT r.q, COUNT(*) FROM r, s WHERE r.pid = s.pid GROUP BY r.q", catalog);
  EXPECT_EQ(names(derive_control_flow(plan, catalog)), (std::set<std::string>{"r.pid", "r.q", "s.pid"}));
}

TEST(ModesTest, EmptyCIsAllPlain) {
  const auto fig = testing::load_fig2();
  const auto plan = assign_modes(parse_query(fig.query + " ORDER BY diag LIMIT 1", fig.data.catalog), {});
  for (const auto& node : plan.nodes) {
    const bool client = node.kind == NodeKind::Sort || node.kind == NodeKind::Limit;
    EXPECT_EQ(node.placement, client ? Placement::Client : Placement::Plain);
  }
}

TEST(ModesTest, Fig2ScansPlainRestSecure) {
  const auto fig = testing::load_fig2();
  const auto plan = assign_modes(parse_query(fig.query, fig.data.catalog), fig.c);
  for (const auto& node : plan.nodes) {
    EXPECT_EQ(node.placement, node.kind == NodeKind::Scan ? Placement::Plain : Placement::Secure);
  }
  EXPECT_TRUE(secure_frontier_is_upward_closed(plan));
}

TEST(ModesTest, FrontierCheckCatchesPlainAboveSecure) {
  const auto fig = testing::load_fig2();
  auto plan = assign_modes(parse_query(fig.query, fig.data.catalog), fig.c);
  plan.nodes.back().placement = Placement::Plain;
  EXPECT_FALSE(secure_frontier_is_upward_closed(plan));
}

TEST(ModesTest, RequiredColumnsPruneTheFrontier) {
  const auto fig = testing::load_fig2();
  const auto plan = assign_modes(parse_query(fig.query, fig.data.catalog), fig.c);
  EXPECT_EQ(required_columns(plan, fig.data.catalog, "diagnosis"), (std::vector<std::string>{"pid", "diag"}));
}

class AdmitTest : public ::testing::Test {
 protected:
  const ColumnRef sex{"demographics", "sex"};
  const ColumnRef pid{"demographics", "pid"};
  const ColumnRef diag{"diagnosis", "diag"};
  const WorkloadState state{set_of({sex, pid}), 5};
};

TEST_F(AdmitTest, SubsetReuses) {
  EXPECT_EQ(admit(set_of({sex}), 5, state).name(), "reuse");
  EXPECT_EQ(admit(set_of({sex, pid}), 3, state).name(), "reuse");
}

TEST_F(AdmitTest, LargerKMerges) {
  const auto decision = admit(set_of({sex, pid}), 10, state);
  EXPECT_EQ(decision.name(), "merge");
  EXPECT_EQ(std::get<AdmissionDecision::MergeClasses>(decision.value).k_new, 10);
}

TEST_F(AdmitTest, DisjointAugments) {
  const auto decision = admit(set_of({diag}), 5, state);
  EXPECT_EQ(decision.name(), "augment");
  EXPECT_EQ(std::get<AdmissionDecision::AugmentView>(decision.value).c_union, set_of({sex, pid, diag}));
}

TEST_F(AdmitTest, OverlapFallsBackToOblivious) {
  EXPECT_EQ(admit(set_of({sex, diag}), 5, state).name(), "oblivious");
}

TEST_F(AdmitTest, FreshStateAugments) {
  EXPECT_EQ(admit(set_of({sex}), 2, WorkloadState{}).name(), "augment");
}

}  // namespace kloak
