#include <gtest/gtest.h>

#include "fig2.hpp"
#include "kloak/errors.hpp"
#include "kloak/schema.hpp"

namespace kloak {
namespace {

std::string error_of(const std::string& text) {
  try {
    load_catalog(text);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

Catalog catalog_of(const std::vector<std::vector<std::string>>& relations, std::vector<FunctionalDependency> fds) {
  std::vector<RelationDef> defs;
  for (std::size_t i = 0; i < relations.size(); ++i) {
    RelationDef def{"r" + std::to_string(i), {}, relations[i].front()};
    for (const auto& attr : relations[i]) def.attributes.push_back({attr, ScalarKind::Integer, Policy::Public, attr});
    defs.push_back(def);
  }
  return Catalog(defs, std::move(fds));
}

}  // namespace

TEST(CatalogTest, LoadsTheHealthCatalog) {
  const auto fig = testing::load_fig2();
  EXPECT_EQ(fig.data.catalog.relations().size(), 2u);
  EXPECT_EQ(fig.data.catalog.kanon_attribute_count(), 2u);
  EXPECT_EQ(fig.data.catalog.attribute("diagnosis", "diag").policy, Policy::KAnon);
  // domain defaults to the attribute name
  EXPECT_EQ(fig.data.catalog.attribute("demographics", "pid").domain, "pid");
  EXPECT_EQ(catalog_from_json(catalog_to_json(fig.data.catalog)), fig.data.catalog);
}

TEST(CatalogTest, RejectsBadDocuments) {
  EXPECT_EQ(error_of(R"({"relations": []})"), "no relations");
  EXPECT_NE(error_of(R"({"relations": [{"name": "r", "entity_attr": "pid", "attributes": [
      {"name": "pid", "kind": "integer", "policy": "public"},
      {"name": "pid", "kind": "integer", "policy": "public"}]}]})")
                .find("'pid'"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"relations": [{"name": "r", "entity_attr": "nope", "attributes": [
      {"name": "pid", "kind": "integer", "policy": "public"}]}]})")
                .find("entity_attr"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"relations": [{"name": "r", "entity_attr": "pid", "attributes": [
      {"name": "pid", "kind": "integer", "policy": "secret"}]}]})")
                .find("unknown policy"),
            std::string::npos);
  EXPECT_THROW(load_catalog("{not json"), ParseError);
  // one domain, two kinds
  EXPECT_THROW(load_catalog(R"({"relations": [{"name": "r", "entity_attr": "a", "attributes": [
      {"name": "a", "kind": "integer", "policy": "public", "domain": "d"},
      {"name": "b", "kind": "text", "policy": "public", "domain": "d"}]}]})"),
               ValidationError);
}

TEST(CatalogTest, UnknownNamesThrow) {
  const auto fig = testing::load_fig2();
  EXPECT_THROW(fig.data.catalog.relation("nope"), UnknownAttribute);
  EXPECT_THROW(fig.data.catalog.attribute("diagnosis", "sex"), UnknownAttribute);
}

TEST(ShardTest, CsvRoundTripAndValidation) {
  const auto fig = testing::load_fig2();
  const auto& relation = fig.data.catalog.relation("diagnosis");
  RelationShard shard{"diagnosis", 1, {{{int64_t{7}, std::string("a, \"b\"")}, false, 1}, {{int64_t{8}, std::string("flu")}, false, 1}}};
  const auto text = write_shard_csv(shard, relation);
  const auto back = read_shard_csv(text, relation, 1);
  EXPECT_EQ(back.tuples, shard.tuples);

  EXPECT_THROW(read_shard_csv("1,flu,extra\n", relation, 0), ValidationError);
  EXPECT_THROW(read_shard_csv("x,flu\n", relation, 0), Error);
  RelationShard dummy{"diagnosis", 0, {{{int64_t{1}, std::string("flu")}, true, 0}}};
  EXPECT_THROW(validate_shard(dummy, fig.data.catalog), ValidationError);
  RelationShard short_row{"diagnosis", 0, {{{int64_t{1}}, false, 0}}};
  EXPECT_THROW(validate_shard(short_row, fig.data.catalog), ValidationError);
}

TEST(DecompositionTest, Fig2IsLossless) {
  const auto report = validate_decomposition(testing::load_fig2().data.catalog);
  EXPECT_TRUE(report.lossless);
  EXPECT_TRUE(report.dependency_preserving);
  EXPECT_FALSE(report.witness_row);
}

TEST(DecompositionTest, SingleRelationIsLossless) {
  EXPECT_TRUE(validate_decomposition(catalog_of({{"a", "b"}}, {})).lossless);
}

TEST(DecompositionTest, DisjointRelationsAreLossy) {
  const auto report = validate_decomposition(catalog_of({{"a", "b"}, {"c", "d"}}, {}));
  EXPECT_FALSE(report.lossless);
  ASSERT_TRUE(report.witness_row);
  EXPECT_EQ(report.universe, (std::vector<std::string>{"a", "b", "c", "d"}));
  // The witness keeps its own two columns distinguished and nothing else.
  const auto& row = report.tableau.at(*report.witness_row);
  EXPECT_EQ(std::count(row.begin(), row.end(), "a"), 2);
}

TEST(DecompositionTest, ChaseUsesDependencies) {
  // r0(a,b), r1(b,c): lossless only once b -> c is known.
  EXPECT_FALSE(validate_decomposition(catalog_of({{"a", "b"}, {"b", "c"}}, {})).lossless);
  EXPECT_TRUE(validate_decomposition(catalog_of({{"a", "b"}, {"b", "c"}}, {{{"b"}, {"c"}}})).lossless);
}

TEST(DecompositionTest, ReportsUnpreservedDependencies) {
  // r0(a,b), r1(a,c) with a -> b, b -> c: b -> c spans both relations.
  const auto report = validate_decomposition(catalog_of({{"a", "b"}, {"a", "c"}}, {{{"a"}, {"b"}}, {{"b"}, {"c"}}}));
  EXPECT_TRUE(report.lossless);
  EXPECT_FALSE(report.dependency_preserving);
  ASSERT_EQ(report.unpreserved.size(), 1u);
  EXPECT_EQ(report.unpreserved[0].lhs, std::vector<std::string>{"b"});
}

}  // namespace kloak
