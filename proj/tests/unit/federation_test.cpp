#include <gtest/gtest.h>

#include <thread>

#include "fig2.hpp"
#include "kloak/errors.hpp"
#include "kloak/federation.hpp"
#include "kloak/simulator.hpp"

namespace kloak {

namespace {

std::string fig2_expected() {
  return format_result({{"diag", "count(*)"},
                        {{Scalar{std::string("flu")}, Scalar{int64_t{1}}},
                         {Scalar{std::string("infection")}, Scalar{int64_t{2}}}}});
}

}  // namespace

TEST(FrameTest, RoundTripsAndCarriesSealedMarker) {
  const Frame frame{FrameType::ViewMap, 17, {{"x", 1}}};
  const auto bytes = encode_frame(frame);
  EXPECT_EQ(static_cast<uint8_t>(bytes[4]), 0x85);
  std::size_t consumed = 0;
  const auto decoded = decode_frame(bytes + "tail", &consumed);
  ASSERT_TRUE(decoded);
  EXPECT_EQ(consumed, bytes.size());
  EXPECT_EQ(decoded->type, FrameType::ViewMap);
  EXPECT_EQ(decoded->qid, 17u);
  EXPECT_EQ(decoded->body, frame.body);
  EXPECT_FALSE(decode_frame(bytes.substr(0, bytes.size() - 1)));
}

TEST(FrameTest, RejectsUnsealedAndUnknownTypes) {
  auto bytes = encode_frame({FrameType::Hello, 0, {}});
  bytes[4] = 0x01;
  EXPECT_THROW(decode_frame(bytes), TransportError);
  bytes[4] = static_cast<char>(0x80 | 12);
  EXPECT_THROW(decode_frame(bytes), TransportError);
}

TEST(FrameTest, ErrorFramesRaiseTheirKind) {
  const auto frame = error_frame(3, ViewInfeasible("diagnosis", 1, "too few"));
  try {
    raise_error_frame(frame);
    FAIL();
  } catch (const ViewInfeasible& e) {
    EXPECT_EQ(e.relation(), "diagnosis");
    EXPECT_EQ(e.host(), 1);
  }
  EXPECT_THROW(raise_error_frame(error_frame(1, ParseError("x"))), ParseError);
}

TEST(ElectionTest, SeedZeroPicksHostZero) {
  EXPECT_EQ(elect_coordinator(4, 0), 0);
  for (uint64_t seed = 1; seed < 50; ++seed) {
    const auto host = elect_coordinator(3, seed);
    EXPECT_GE(host, 0);
    EXPECT_LT(host, 3);
  }
  EXPECT_THROW(elect_coordinator(0, 1), ValidationError);
}

class Fig2FederationTest : public ::testing::Test {
 protected:
  void SetUp() override {
    fig_ = testing::load_fig2();
    fed_ = make_local_federation(fig_.data, 42);
    fed_.coordinator->install_view(fig_.map);
  }

  testing::Fig2 fig_;
  LocalFederation fed_;
};

TEST_F(Fig2FederationTest, KAnonMatchesPlainResult) {
  const auto outcome = fed_.coordinator->run_query(fig_.query, 2, Mode::KAnon);
  EXPECT_EQ(format_result(outcome.result), fig2_expected());
  EXPECT_EQ(outcome.executed_mode, Mode::KAnon);
  EXPECT_EQ(std::string(outcome.decision.name()), "reuse");
}

TEST_F(Fig2FederationTest, TraceEqualsSimulatorOverView) {
  const auto outcome = fed_.coordinator->run_query(fig_.query, 2, Mode::KAnon);
  const auto plan = assign_modes(parse_query(fig_.query, fig_.data.catalog), fig_.c);
  const auto view = anonymized_view(plan, fig_.data.catalog, fig_.data.shards, fig_.map);
  const auto reference = simulate_reference(plan, view, 2);
  const auto cmp = traces_equal(outcome.trace, reference);
  EXPECT_TRUE(cmp.equal) << cmp.describe();
}

TEST_F(Fig2FederationTest, TraceEqualsSingleProcessExecution) {
  const auto outcome = fed_.coordinator->run_query(fig_.query, 2, Mode::KAnon);
  const auto local = run_local(fig_.query, fig_.data.catalog, Mode::KAnon, fig_.data.shards, &fig_.map);
  EXPECT_EQ(outcome.trace.to_jsonl(), local.trace.to_jsonl());
}

TEST_F(Fig2FederationTest, ReuseSendsNoHistogramRequests) {
  fed_.coordinator->run_query(fig_.query, 2, Mode::KAnon);
  EXPECT_EQ(fed_.coordinator->frames_sent().count(FrameType::HistogramRequest), 0u);
}

TEST_F(Fig2FederationTest, EveryModeAgreesWithPlain) {
  for (const auto mode : {Mode::Plain, Mode::Encrypted, Mode::Oblivious}) {
    const auto outcome = fed_.coordinator->run_query(fig_.query, 2, mode);
    EXPECT_EQ(format_result(outcome.result), fig2_expected()) << to_string(mode);
  }
}

TEST_F(Fig2FederationTest, ClassesLandOnTheirPartitionOwners) {
  const auto assignment = fed_.coordinator->assignment();
  ASSERT_TRUE(assignment);
  std::size_t held = 0;
  for (const auto& owner : fed_.owners) {
    for (const auto& [id, size] : owner->held_class_sizes()) {
      EXPECT_EQ(assignment->at(id), owner->host()) << id;
      held += size;
    }
  }
  EXPECT_EQ(held, 12u);
}

TEST(FederationTest, AugmentThenMergeAvoidsNewHistograms) {
  auto fig = testing::load_fig2();
  auto fed = make_local_federation(fig.data, 42);
  const auto first = fed.coordinator->run_query(fig.query, 2, Mode::KAnon);
  EXPECT_EQ(std::string(first.decision.name()), "augment");
  EXPECT_EQ(format_result(first.result), fig2_expected());
  const auto histogram_rounds = fed.coordinator->frames_sent().at(FrameType::HistogramRequest);
  // Fig.2 is infeasible beyond k=2, so a merge to 3 must fail loudly.
  EXPECT_THROW(fed.coordinator->run_query(fig.query, 3, Mode::KAnon), ViewInfeasible);
  EXPECT_EQ(fed.coordinator->frames_sent().at(FrameType::HistogramRequest), histogram_rounds);
}

TEST(FederationTest, SingleHostSendsNoClassTransfers) {
  auto fig = testing::load_fig2();
  Dataset merged = fig.data;
  merged.host_count = 1;
  for (auto& shard : merged.shards) shard.owner = 0;
  auto fed = make_local_federation(merged, 42);
  fed.coordinator->setup_views(fig.c, 2);
  const auto outcome = fed.coordinator->run_query(fig.query, 2, Mode::KAnon);
  EXPECT_EQ(format_result(outcome.result), fig2_expected());
  EXPECT_EQ(fed.coordinator->frames_sent().count(FrameType::ClassTransfer), 0u);
}

TEST(FederationTest, WireBytesAreDeterministic) {
  auto fig = testing::load_fig2();
  auto once = [&] {
    auto fed = make_local_federation(fig.data, 42);
    fed.coordinator->run_query(fig.query, 2, Mode::KAnon);
    fed.coordinator->run_query(fig.query, 2, Mode::Oblivious);
    return fed.wire_bytes();
  };
  const auto a = once();
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, once());
}

TEST(FederationTest, ErrorsComeBackAsFrames) {
  auto fig = testing::load_fig2();
  auto fed = make_local_federation(fig.data, 42);
  const auto reply = fed.coordinator->handle({FrameType::SubmitQuery, 0, {{"text", "SELECT nope FROM demographics"}}});
  EXPECT_EQ(reply.type, FrameType::Error);
  EXPECT_EQ(reply.body.at("kind"), "UnknownAttribute");
}

TEST(FederationTest, TcpRoundTrip) {
  auto fig = testing::load_fig2();
  std::vector<std::unique_ptr<TcpServer>> servers;
  std::vector<std::shared_ptr<DataOwner>> owners;
  std::vector<std::thread> threads;
  for (HostId host = 0; host < fig.data.host_count; ++host) {
    servers.push_back(std::make_unique<TcpServer>("127.0.0.1", 0));
    owners.push_back(std::make_shared<DataOwner>(host, fig.data.shards_of(host)));
  }
  for (std::size_t i = 0; i < servers.size(); ++i) {
    threads.emplace_back([&, i] {
      servers[i]->serve_connection([owner = owners[i]](const Frame& f) { return owner->handle(f); });
    });
  }
  {
    std::vector<std::unique_ptr<Channel>> channels;
    for (const auto& server : servers) channels.push_back(std::make_unique<TcpChannel>("127.0.0.1", server->port()));
    Coordinator coordinator(fig.data.catalog, std::move(channels), 42);
    coordinator.connect();
    coordinator.install_view(fig.map);
    EXPECT_EQ(format_result(coordinator.run_query(fig.query, 2, Mode::KAnon).result), fig2_expected());
  }
  for (auto& thread : threads) thread.join();
}

TEST(EndpointTest, Parses) {
  EXPECT_EQ(parse_endpoint("localhost:7000"), (std::pair<std::string, uint16_t>{"localhost", 7000}));
  EXPECT_THROW(parse_endpoint("nohost"), ValidationError);
}

}  // namespace kloak
