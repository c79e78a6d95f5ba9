#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kloak/anonymizer.hpp"
#include "kloak/dataset.hpp"
#include "kloak/executor.hpp"
#include "kloak/planner.hpp"
#include "kloak/trace.hpp"

namespace kloak {

// ---------------------------------------------------------------------------
// Wire protocol

enum class FrameType : uint8_t {
  Hello = 1,
  AttestStub = 2,
  HistogramRequest = 3,
  HistogramResponse = 4,
  ViewMap = 5,
  ClassTransfer = 6,
  Execute = 7,
  ResultShard = 8,
  SubmitQuery = 9,
  QueryResult = 10,
  Error = 11,
};

std::string_view to_string(FrameType type);

// Set on the type byte of every frame: the envelope standing in for the
// encrypted channel.
inline constexpr uint8_t kSealedMarker = 0x80;

struct Frame {
  FrameType type = FrameType::Hello;
  uint64_t qid = 0;
  nlohmann::json body = nlohmann::json::object();
};

// 4-byte big-endian payload length, type byte, JSON payload {"qid","body"}.
std::string encode_frame(const Frame& frame);
// Returns nullopt while `bytes` holds less than one frame. Throws
// TransportError on malformed frames.
std::optional<Frame> decode_frame(std::string_view bytes, std::size_t* consumed = nullptr);

// The response type a request expects (Error may always replace it).
FrameType response_type(FrameType request);

Frame error_frame(uint64_t qid, const std::exception& error);
// Rethrows an Error frame as the matching exception type.
[[noreturn]] void raise_error_frame(const Frame& frame);

using FrameHandler = std::function<Frame(const Frame&)>;

class Channel {
 public:
  virtual ~Channel() = default;
  // Sends a request and waits for its response.
  virtual Frame call(const Frame& request) = 0;
};

// In-process transport. Frames still go through encode/decode and every
// encoded frame is kept, so wire behavior can be audited.
class LocalChannel : public Channel {
 public:
  explicit LocalChannel(FrameHandler handler) : handler_(std::move(handler)) {}
  Frame call(const Frame& request) override;

  const std::vector<std::string>& wire() const { return wire_; }

 private:
  FrameHandler handler_;
  std::vector<std::string> wire_;
};

class TcpChannel : public Channel {
 public:
  TcpChannel(const std::string& host, uint16_t port);
  ~TcpChannel() override;
  TcpChannel(const TcpChannel&) = delete;
  TcpChannel& operator=(const TcpChannel&) = delete;

  Frame call(const Frame& request) override;

 private:
  int fd_ = -1;
  std::string buffer_;
};

// Sequential frame server: one connection at a time, one request at a time.
class TcpServer {
 public:
  TcpServer(const std::string& address, uint16_t port);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  uint16_t port() const { return port_; }
  // Serves a single connection until the peer closes it.
  void serve_connection(const FrameHandler& handler);
  void run(const FrameHandler& handler);

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

std::pair<std::string, uint16_t> parse_endpoint(const std::string& text);

// ---------------------------------------------------------------------------
// Roles

HostId elect_coordinator(int host_count, uint64_t seed);

// One data owner. Handles Hello, AttestStub, HistogramRequest, ViewMap,
// ClassTransfer and Execute frames; message handling is serialized.
class DataOwner {
 public:
  DataOwner(HostId host, std::vector<RelationShard> shards);
  // Shards are loaded from <data_dir>/host<id> once the catalog arrives.
  DataOwner(HostId host, std::filesystem::path data_dir);

  Frame handle(const Frame& request);

  HostId host() const { return host_; }
  const std::optional<AnonymizationMap>& view() const { return map_; }
  // Base classes held as partition owner: class id -> tuples.
  std::map<std::string, std::size_t> held_class_sizes() const;

 private:
  struct QueryState {
    QueryPlan plan;
    Mode mode = Mode::Plain;
    HostId home = 0;
    std::map<int, std::vector<Column>> columns;
    // Frontier pieces by (stream, class id), kept with their source host.
    std::map<int, std::map<std::string, std::vector<std::pair<HostId, StreamClass>>>> pending;
    std::map<int, std::map<std::string, StreamClass>> owned;
    std::map<int, std::map<std::string, StreamClass>> copies;  // right join inputs
    Trace trace;
  };

  nlohmann::json on_hello(const nlohmann::json& body);
  nlohmann::json on_histograms(const nlohmann::json& body) const;
  nlohmann::json on_view(const nlohmann::json& body);
  nlohmann::json on_transfer(uint64_t qid, const nlohmann::json& body);
  nlohmann::json on_execute(uint64_t qid, const nlohmann::json& body);

  QueryState& query(uint64_t qid);
  void settle_pending(QueryState& state);
  const StreamClass& find_class(QueryState& state, int stream, const std::string& id);

  HostId host_;
  int host_count_ = 1;
  std::optional<std::filesystem::path> data_dir_;
  Catalog catalog_;
  bool has_catalog_ = false;
  std::vector<RelationShard> shards_;
  std::optional<AnonymizationMap> map_;
  std::map<std::string, std::map<std::string, std::vector<std::pair<HostId, StreamClass>>>> held_;
  std::map<uint64_t, QueryState> queries_;
};

struct QueryOutcome {
  uint64_t qid = 0;
  ResultSet result;
  Trace trace;
  ControlFlowSet c;
  AdmissionDecision decision;
  Mode requested_mode = Mode::Plain;
  Mode executed_mode = Mode::Plain;
};

nlohmann::json outcome_to_json(const QueryOutcome& outcome);

// Drives the protocol over a star of channels. It plays the elected
// coordinator: gathers histograms, generates and distributes views, relays
// class transfers and runs queries in barrier rounds.
class Coordinator {
 public:
  Coordinator(Catalog catalog, std::vector<std::unique_ptr<Channel>> nodes, uint64_t seed);

  // Hello + AttestStub round.
  void connect();

  HostId coordinator_host() const { return coordinator_host_; }
  int host_count() const { return static_cast<int>(nodes_.size()); }
  const WorkloadState& state() const { return state_; }
  const std::optional<AnonymizationMap>& view() const { return map_; }
  std::optional<PartitionAssignment> assignment() const;

  // Histograms, generate_view, ViewMap broadcast and class shuffle.
  void setup_views(const ControlFlowSet& c, int k);
  // Distributes a prebuilt map (and shuffles classes).
  void install_view(AnonymizationMap map);

  QueryOutcome run_query(std::string_view text, int k, Mode mode, const std::string& client = "");

  // Serves SubmitQuery frames from clients.
  Frame handle(const Frame& request);

  // Request frames sent so far, by type.
  const std::map<FrameType, int>& frames_sent() const { return frames_sent_; }
  int64_t rounds() const { return rounds_; }

 private:
  Frame call(HostId host, FrameType type, uint64_t qid, nlohmann::json body);
  std::vector<Frame> broadcast(FrameType type, uint64_t qid, const nlohmann::json& body);
  std::map<std::string, Histogram> gather_histograms(const ControlFlowSet& c);
  void relay_transfers(uint64_t qid, const std::string& purpose, const std::vector<Frame>& responses);
  QueryOutcome execute(uint64_t qid, const QueryPlan& plan, Mode mode);

  Catalog catalog_;
  std::vector<std::unique_ptr<Channel>> nodes_;
  uint64_t seed_;
  HostId coordinator_host_ = 0;
  WorkloadState state_;
  std::optional<AnonymizationMap> map_;
  std::map<std::string, Histogram> histograms_;  // keyed on c_system, for merges
  uint64_t next_qid_ = 1;
  int64_t rounds_ = 0;
  std::map<FrameType, int> frames_sent_;
};

struct ClientResult {
  uint64_t qid = 0;
  ResultSet result;
  Trace trace;
  std::string decision;
  std::string mode;
};

class Client {
 public:
  explicit Client(std::unique_ptr<Channel> coordinator, std::string id = "client")
      : channel_(std::move(coordinator)), id_(std::move(id)) {}

  ClientResult submit(std::string_view text, int k, Mode mode);

 private:
  std::unique_ptr<Channel> channel_;
  std::string id_;
};

// All data owners in this process, wired to a coordinator over LocalChannels.
struct LocalFederation {
  std::vector<std::shared_ptr<DataOwner>> owners;
  std::vector<LocalChannel*> channels;  // owned by the coordinator
  std::unique_ptr<Coordinator> coordinator;

  // Concatenated wire bytes of every channel, for determinism audits.
  std::string wire_bytes() const;
};

LocalFederation make_local_federation(const Dataset& dataset, uint64_t seed);

}  // namespace kloak
