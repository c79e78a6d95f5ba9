#include "kloak/federation.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <set>

#include "kloak/errors.hpp"
#include "kloak/hash.hpp"

namespace kloak {

std::string_view to_string(FrameType type) {
  switch (type) {
    case FrameType::Hello:
      return "Hello";
    case FrameType::AttestStub:
      return "AttestStub";
    case FrameType::HistogramRequest:
      return "HistogramRequest";
    case FrameType::HistogramResponse:
      return "HistogramResponse";
    case FrameType::ViewMap:
      return "ViewMap";
    case FrameType::ClassTransfer:
      return "ClassTransfer";
    case FrameType::Execute:
      return "Execute";
    case FrameType::ResultShard:
      return "ResultShard";
    case FrameType::SubmitQuery:
      return "SubmitQuery";
    case FrameType::QueryResult:
      return "QueryResult";
    case FrameType::Error:
      return "Error";
  }
  return "Error";
}

std::string encode_frame(const Frame& frame) {
  const auto payload = nlohmann::json{{"qid", frame.qid}, {"body", frame.body}}.dump();
  const auto length = static_cast<uint32_t>(payload.size());
  std::string out;
  out.reserve(payload.size() + 5);
  out.push_back(static_cast<char>((length >> 24) & 0xff));
  out.push_back(static_cast<char>((length >> 16) & 0xff));
  out.push_back(static_cast<char>((length >> 8) & 0xff));
  out.push_back(static_cast<char>(length & 0xff));
  out.push_back(static_cast<char>(static_cast<uint8_t>(frame.type) | kSealedMarker));
  out += payload;
  return out;
}

std::optional<Frame> decode_frame(std::string_view bytes, std::size_t* consumed) {
  if (bytes.size() < 5) return std::nullopt;
  const auto byte = [&](std::size_t i) { return static_cast<uint32_t>(static_cast<unsigned char>(bytes[i])); };
  const uint32_t length = (byte(0) << 24) | (byte(1) << 16) | (byte(2) << 8) | byte(3);
  if (bytes.size() < 5 + static_cast<std::size_t>(length)) return std::nullopt;
  const auto type_byte = static_cast<uint8_t>(byte(4));
  if (!(type_byte & kSealedMarker)) throw TransportError("frame is missing the sealed envelope marker");
  const auto type = static_cast<uint8_t>(type_byte & ~kSealedMarker);
  if (type < 1 || type > 11) throw TransportError("unknown frame type " + std::to_string(type));
  Frame frame;
  frame.type = static_cast<FrameType>(type);
  try {
    const auto payload = nlohmann::json::parse(bytes.substr(5, length));
    frame.qid = payload.at("qid").get<uint64_t>();
    frame.body = payload.at("body");
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("malformed frame payload: ") + e.what());
  }
  if (consumed) *consumed = 5 + length;
  return frame;
}

FrameType response_type(FrameType request) {
  switch (request) {
    case FrameType::Hello:
      return FrameType::Hello;
    case FrameType::AttestStub:
      return FrameType::AttestStub;
    case FrameType::HistogramRequest:
      return FrameType::HistogramResponse;
    case FrameType::ViewMap:
      return FrameType::ViewMap;
    case FrameType::ClassTransfer:
      return FrameType::ClassTransfer;
    case FrameType::Execute:
      return FrameType::ResultShard;
    case FrameType::SubmitQuery:
      return FrameType::QueryResult;
    default:
      throw TransportError(std::string(to_string(request)) + " is not a request");
  }
}

Frame error_frame(uint64_t qid, const std::exception& error) {
  nlohmann::json body = {{"kind", "Error"}, {"message", error.what()}};
  if (const auto* known = dynamic_cast<const Error*>(&error)) body["kind"] = known->kind();
  if (const auto* infeasible = dynamic_cast<const ViewInfeasible*>(&error)) {
    body["relation"] = infeasible->relation();
    body["host"] = infeasible->host();
    body["detail"] = infeasible->detail();
  }
  return {FrameType::Error, qid, body};
}

void raise_error_frame(const Frame& frame) {
  const auto kind = frame.body.value("kind", std::string("Error"));
  const auto message = frame.body.value("message", std::string("remote error"));
  if (kind == "ViewInfeasible") {
    throw ViewInfeasible(frame.body.value("relation", std::string()), frame.body.value("host", 0),
                         frame.body.value("detail", message));
  }
  if (kind == "ParseError") throw ParseError(message);
  if (kind == "ValidationError") throw ValidationError(message);
  if (kind == "UnsupportedFeature") throw UnsupportedFeature(message);
  if (kind == "UnknownAttribute") throw UnknownAttribute(message);
  if (kind == "SchemaMismatch") throw SchemaMismatch(message);
  if (kind == "UnmappedValue") throw UnmappedValue(message);
  if (kind == "TypeError") throw TypeError(message);
  if (kind == "DomainMismatch") throw DomainMismatch(message);
  if (kind == "MissingView") throw MissingView(message);
  if (kind == "MissingShard") throw MissingShard(message);
  if (kind == "ResourceLimit") throw ResourceLimit(message);
  if (kind == "TransportError") throw TransportError(message);
  throw Error(message);
}

namespace {

Frame checked_response(const Frame& request, const Frame& response) {
  if (response.type != FrameType::Error && response.type != response_type(request.type)) {
    throw TransportError("expected " + std::string(to_string(response_type(request.type))) + " in reply to " +
                         std::string(to_string(request.type)) + ", got " + std::string(to_string(response.type)));
  }
  return response;
}

void write_all(int fd, const std::string& bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const auto n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

// Reads until one full frame is buffered; false on a clean EOF.
bool read_frame(int fd, std::string& buffer, Frame& frame) {
  for (;;) {
    std::size_t consumed = 0;
    if (auto decoded = decode_frame(buffer, &consumed)) {
      buffer.erase(0, consumed);
      frame = std::move(*decoded);
      return true;
    }
    char chunk[65536];
    const auto n = ::recv(fd, chunk, sizeof(chunk), 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("recv failed: ") + std::strerror(errno));
    }
    if (n == 0) {
      if (!buffer.empty()) throw TransportError("connection closed mid-frame");
      return false;
    }
    buffer.append(chunk, static_cast<std::size_t>(n));
  }
}

}  // namespace

Frame LocalChannel::call(const Frame& request) {
  wire_.push_back(encode_frame(request));
  const auto delivered = decode_frame(wire_.back());
  const auto response = handler_(*delivered);
  wire_.push_back(encode_frame(response));
  return checked_response(request, *decode_frame(wire_.back()));
}

std::pair<std::string, uint16_t> parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw ValidationError("endpoint '" + text + "' must be host:port");
  const auto port = std::stoi(text.substr(colon + 1));
  if (port < 0 || port > 65535) throw ValidationError("bad port in '" + text + "'");
  return {text.substr(0, colon), static_cast<uint16_t>(port)};
}

TcpChannel::TcpChannel(const std::string& host, uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* result = nullptr;
  const auto service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &result); rc != 0) {
    throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  }
  for (auto* entry = result; entry; entry = entry->ai_next) {
    fd_ = ::socket(entry->ai_family, entry->ai_socktype, entry->ai_protocol);
    if (fd_ < 0) continue;
    if (::connect(fd_, entry->ai_addr, entry->ai_addrlen) == 0) break;
    ::close(fd_);
    fd_ = -1;
  }
  ::freeaddrinfo(result);
  if (fd_ < 0) throw TransportError("cannot connect to " + host + ":" + service);
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

TcpChannel::~TcpChannel() {
  if (fd_ >= 0) ::close(fd_);
}

Frame TcpChannel::call(const Frame& request) {
  write_all(fd_, encode_frame(request));
  Frame response;
  if (!read_frame(fd_, buffer_, response)) throw TransportError("peer closed the connection");
  return checked_response(request, response);
}

TcpServer::TcpServer(const std::string& address, uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw TransportError(std::string("socket failed: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  const auto host = address.empty() || address == "*" ? std::string("0.0.0.0") : address;
  if (::inet_pton(AF_INET, host == "localhost" ? "127.0.0.1" : host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw TransportError("bad listen address '" + address + "'");
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd_, 8) != 0) {
    const std::string reason = std::strerror(errno);
    ::close(fd_);
    throw TransportError("cannot listen on " + host + ":" + std::to_string(port) + ": " + reason);
  }
  socklen_t length = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &length);
  port_ = ntohs(addr.sin_port);
}

TcpServer::~TcpServer() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpServer::serve_connection(const FrameHandler& handler) {
  const int client = ::accept(fd_, nullptr, nullptr);
  if (client < 0) throw TransportError(std::string("accept failed: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(client, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  std::string buffer;
  try {
    Frame request;
    while (read_frame(client, buffer, request)) write_all(client, encode_frame(handler(request)));
  } catch (...) {
    ::close(client);
    throw;
  }
  ::close(client);
}

void TcpServer::run(const FrameHandler& handler) {
  for (;;) serve_connection(handler);
}

HostId elect_coordinator(int host_count, uint64_t seed) {
  if (host_count < 1) throw ValidationError("a federation needs at least one host");
  if (seed == 0) return 0;
  return static_cast<HostId>(mix64(seed) % static_cast<uint64_t>(host_count));
}

// ---------------------------------------------------------------------------
// DataOwner

namespace {

std::vector<HostId> host_list(int count) {
  std::vector<HostId> hosts(static_cast<std::size_t>(count));
  for (int h = 0; h < count; ++h) hosts[static_cast<std::size_t>(h)] = h;
  return hosts;
}

nlohmann::json class_meta(const StreamClass& cls) {
  return {{"id", cls.id}, {"size", cls.size()}, {"groups", cls.groups}, {"owner", cls.owner}};
}

QueryPlan plan_for(std::string_view text, const Catalog& catalog) {
  auto plan = parse_query(text, catalog);
  const auto c = derive_control_flow(plan, catalog);
  return assign_modes(std::move(plan), c);
}

// Chain top -> scan id, for chains whose parent is secure (the frontier).
std::map<int, int> frontier_streams(const QueryPlan& plan) {
  std::map<int, int> streams;
  for (const auto scan : plan.scan_ids()) {
    const auto chain = local_chain(plan, scan);
    const auto top = chain.empty() ? scan : chain.back();
    const auto parent = plan.parent_of(top);
    if (parent && plan.node(*parent).placement == Placement::Secure) streams[top] = scan;
  }
  return streams;
}

}  // namespace

DataOwner::DataOwner(HostId host, std::vector<RelationShard> shards) : host_(host), shards_(std::move(shards)) {
  for (auto& shard : shards_) {
    shard.owner = host_;
    for (auto& tuple : shard.tuples) tuple.owner = host_;
  }
}

DataOwner::DataOwner(HostId host, std::filesystem::path data_dir) : host_(host), data_dir_(std::move(data_dir)) {}

Frame DataOwner::handle(const Frame& request) {
  try {
    nlohmann::json body;
    switch (request.type) {
      case FrameType::Hello:
        body = on_hello(request.body);
        break;
      case FrameType::AttestStub: {
        // No real attestation: a quote derived from the nonce and host id.
        const auto nonce = request.body.value("nonce", uint64_t{0});
        body = {{"host_id", host_}, {"quote", hex64(hash_bytes(nonce, "host" + std::to_string(host_)))}};
        break;
      }
      case FrameType::HistogramRequest:
        body = on_histograms(request.body);
        break;
      case FrameType::ViewMap:
        body = on_view(request.body);
        break;
      case FrameType::ClassTransfer:
        body = on_transfer(request.qid, request.body);
        break;
      case FrameType::Execute:
        body = on_execute(request.qid, request.body);
        break;
      default:
        throw TransportError("data owner cannot handle " + std::string(to_string(request.type)));
    }
    if (request.type != FrameType::Hello && !has_catalog_) throw ValidationError("no Hello received yet");
    return {response_type(request.type), request.qid, std::move(body)};
  } catch (const std::exception& e) {
    return error_frame(request.qid, e);
  }
}

std::map<std::string, std::size_t> DataOwner::held_class_sizes() const {
  std::map<std::string, std::size_t> sizes;
  for (const auto& [relation, classes] : held_) {
    for (const auto& [id, pieces] : classes) {
      for (const auto& [source, piece] : pieces) sizes[id] += piece.tuples.size();
    }
  }
  return sizes;
}

nlohmann::json DataOwner::on_hello(const nlohmann::json& body) {
  const auto host = body.at("host_id").get<HostId>();
  if (host != host_) {
    throw ValidationError("Hello for host " + std::to_string(host) + " reached host " + std::to_string(host_));
  }
  host_count_ = body.at("host_count").get<int>();
  catalog_ = catalog_from_json(body.at("catalog"));
  if (data_dir_) {
    shards_ = load_host_shards(*data_dir_, catalog_, host_);
  } else {
    for (const auto& shard : shards_) validate_shard(shard, catalog_);
  }
  has_catalog_ = true;
  int64_t tuples = 0;
  for (const auto& shard : shards_) tuples += static_cast<int64_t>(shard.tuples.size());
  nlohmann::json reply = {{"host_id", host_}, {"tuples", tuples}, {"has_view", map_.has_value()}};
  if (map_) reply["map"] = map_to_json(*map_);
  return reply;
}

nlohmann::json DataOwner::on_histograms(const nlohmann::json& body) const {
  const auto c = ControlFlowSet::parse(body.at("c").get<std::vector<std::string>>(), catalog_);
  nlohmann::json histograms = nlohmann::json::object();
  for (const auto& [relation, histogram] : collect_histograms(shards_, catalog_, c, host_count_)) {
    histograms[relation] = histogram_to_json(histogram);
  }
  return {{"histograms", histograms}};
}

nlohmann::json DataOwner::on_view(const nlohmann::json& body) {
  map_ = map_from_json(body.at("map"));
  const auto hosts = host_list(host_count_);
  held_.clear();
  nlohmann::json transfers = nlohmann::json::array();
  for (const auto& shard : shards_) {
    if (!map_->covers(shard.relation)) continue;
    for (auto& eq : apply_view(shard, *map_, catalog_)) {
      StreamClass cls;
      cls.id = eq.id;
      cls.tuples = std::move(eq.tuples);
      cls.lineage = {eq.id};
      cls.owner = partition_host(map_->hash_seed, eq.id, hosts);
      if (cls.owner == host_) {
        held_[shard.relation][cls.id].emplace_back(host_, std::move(cls));
      } else {
        transfers.push_back({{"to", cls.owner}, {"key", shard.relation}, {"class", class_to_json(cls)}});
      }
    }
  }
  return {{"installed", true}, {"k", map_->k}, {"transfers", transfers}};
}

nlohmann::json DataOwner::on_transfer(uint64_t qid, const nlohmann::json& body) {
  const auto purpose = body.at("purpose").get<std::string>();
  int received = 0;
  for (const auto& item : body.at("items")) {
    auto cls = class_from_json(item.at("class"));
    const auto source = item.at("source").get<HostId>();
    ++received;
    if (purpose == "view") {
      held_[item.at("key").get<std::string>()][cls.id].emplace_back(source, std::move(cls));
      continue;
    }
    auto& state = query(qid);
    const auto stream = item.at("key").get<int>();
    if (purpose == "query") {
      state.pending[stream][cls.id].emplace_back(source, std::move(cls));
    } else if (purpose == "copy") {
      state.copies[stream][cls.id] = std::move(cls);
    } else {
      throw ValidationError("unknown transfer purpose '" + purpose + "'");
    }
  }
  return {{"received", received}};
}

DataOwner::QueryState& DataOwner::query(uint64_t qid) {
  const auto it = queries_.find(qid);
  if (it == queries_.end()) throw MissingShard("query " + std::to_string(qid) + " was not prepared on this host");
  return it->second;
}

void DataOwner::settle_pending(QueryState& state) {
  for (auto& [stream, classes] : state.pending) {
    for (auto& [id, pieces] : classes) {
      std::stable_sort(pieces.begin(), pieces.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      auto& target = state.owned[stream][id];
      for (auto& [source, piece] : pieces) {
        if (target.id.empty()) {
          target = std::move(piece);
          target.owner = host_;
          continue;
        }
        target.tuples.insert(target.tuples.end(), piece.tuples.begin(), piece.tuples.end());
      }
    }
  }
  state.pending.clear();
}

const StreamClass& DataOwner::find_class(QueryState& state, int stream, const std::string& id) {
  const auto owned = state.owned[stream].find(id);
  if (owned != state.owned[stream].end()) return owned->second;
  const auto copy = state.copies[stream].find(id);
  if (copy != state.copies[stream].end()) return copy->second;
  throw MissingShard("class " + id + " of stream " + std::to_string(stream) + " is not on host " +
                     std::to_string(host_));
}

nlohmann::json DataOwner::on_execute(uint64_t qid, const nlohmann::json& body) {
  const auto step = body.at("step").get<std::string>();

  if (step == "plain") {
    const auto plan = plan_for(body.at("text").get<std::string>(), catalog_);
    nlohmann::json shards = nlohmann::json::array();
    for (const auto& shard : shards_) {
      if (std::find(plan.relations.begin(), plan.relations.end(), shard.relation) == plan.relations.end()) continue;
      nlohmann::json tuples = nlohmann::json::array();
      for (const auto& tuple : shard.tuples) tuples.push_back(values_to_json(tuple.values));
      shards.push_back({{"relation", shard.relation}, {"tuples", tuples}});
    }
    return {{"shards", shards}};
  }

  if (step == "prepare") {
    auto& state = queries_[qid];
    state = QueryState{};
    state.plan = plan_for(body.at("text").get<std::string>(), catalog_);
    state.mode = mode_from_string(body.at("mode").get<std::string>());
    state.home = body.at("home").get<HostId>();
    if (state.mode == Mode::KAnon && !map_) throw MissingView("host " + std::to_string(host_) + " has no view");
    const auto hosts = host_list(host_count_);

    nlohmann::json meta = nlohmann::json::array();
    nlohmann::json transfers = nlohmann::json::array();
    for (const auto& [top, scan] : frontier_streams(state.plan)) {
      const auto& relation = state.plan.node(scan).relation;
      state.columns[top] = frontier_columns(state.plan, catalog_, relation);
      RelationShard filtered{relation, host_, {}};
      for (const auto& shard : shards_) {
        if (shard.relation == relation) filtered.tuples.insert(filtered.tuples.end(), shard.tuples.begin(), shard.tuples.end());
      }
      filtered.tuples =
          run_local_chain(state.plan, local_chain(state.plan, scan), catalog_.relation(relation), filtered.tuples);
      for (auto& piece : route_shard(state.mode, state.plan, catalog_, filtered, map_ ? &*map_ : nullptr)) {
        piece.owner = state.mode == Mode::KAnon ? partition_host(map_->hash_seed, piece.id, hosts) : state.home;
        meta.push_back({{"key", top}, {"meta", class_meta(piece)}});
        if (piece.owner == host_) {
          state.pending[top][piece.id].emplace_back(host_, std::move(piece));
        } else {
          const auto to = piece.owner;
          transfers.push_back({{"to", to}, {"key", top}, {"class", class_to_json(piece)}});
        }
      }
    }
    return {{"meta", meta}, {"transfers", transfers}};
  }

  auto& state = query(qid);
  settle_pending(state);

  if (step == "eval") {
    const auto& node = state.plan.node(body.at("node").get<int>());
    const OperatorContext ctx{state.mode, node.id, map_ ? map_->k : 1, &state.trace};
    auto& output = state.owned[node.id];
    switch (node.kind) {
      case NodeKind::Filter: {
        const auto child = node.children.at(0);
        state.columns[node.id] = state.columns.at(child);
        for (const auto& [id, cls] : state.owned[child]) {
          if (auto kept = filter_class(ctx, state.columns.at(child), cls, node.predicates)) output[id] = std::move(*kept);
        }
        break;
      }
      case NodeKind::Aggregate: {
        const auto child = node.children.at(0);
        const auto spec = aggregate_spec(node);
        state.columns[node.id] = aggregate_columns(state.columns.at(child), spec);
        for (const auto& [id, cls] : state.owned[child]) output[id] = aggregate_class(ctx, state.columns.at(child), cls, spec);
        break;
      }
      case NodeKind::Project: {
        const auto child = node.children.at(0);
        state.columns[node.id] = project_columns(state.columns.at(child), node.projection);
        for (const auto& [id, cls] : state.owned[child]) {
          output[id] = project_class(ctx, state.columns.at(child), cls, node.projection);
        }
        break;
      }
      case NodeKind::Join: {
        const auto left = node.children.at(0);
        const auto right = node.children.at(1);
        state.columns[node.id] = join_columns(state.columns.at(left), state.columns.at(right));
        for (const auto& pair : body.at("pairs")) {
          const auto& l = find_class(state, left, pair.at(0).get<std::string>());
          const auto& r = find_class(state, right, pair.at(1).get<std::string>());
          auto joined = join_pair(ctx, state.columns.at(left), l, state.columns.at(right), r, node.join_keys);
          joined.owner = host_;
          output[joined.id] = std::move(joined);
        }
        break;
      }
      default:
        throw ValidationError("node " + std::to_string(node.id) + " is not a secure operator");
    }
    nlohmann::json meta = nlohmann::json::array();
    for (const auto& [id, cls] : output) meta.push_back(class_meta(cls));
    return {{"meta", meta}};
  }

  if (step == "fetch") {
    const auto stream = body.at("key").get<int>();
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& id : body.at("ids")) classes.push_back(class_to_json(find_class(state, stream, id.get<std::string>())));
    return {{"classes", classes}};
  }

  if (step == "collect") {
    const auto node = body.at("node").get<int>();
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& [id, cls] : state.owned[node]) classes.push_back(class_to_json(cls));
    nlohmann::json reply = {{"columns", columns_to_json(state.columns.at(node))},
                            {"classes", classes},
                            {"events", state.trace.to_json()}};
    queries_.erase(qid);
    return reply;
  }

  throw ValidationError("unknown execute step '" + step + "'");
}

// ---------------------------------------------------------------------------
// Coordinator

nlohmann::json outcome_to_json(const QueryOutcome& outcome) {
  return {{"qid", outcome.qid},
          {"result", result_to_json(outcome.result)},
          {"trace", outcome.trace.to_jsonl()},
          {"decision", std::string(outcome.decision.name())},
          {"requested_mode", std::string(to_string(outcome.requested_mode))},
          {"mode", std::string(to_string(outcome.executed_mode))},
          {"c", outcome.c.to_strings()}};
}

Coordinator::Coordinator(Catalog catalog, std::vector<std::unique_ptr<Channel>> nodes, uint64_t seed)
    : catalog_(std::move(catalog)), nodes_(std::move(nodes)), seed_(seed) {
  coordinator_host_ = elect_coordinator(static_cast<int>(nodes_.size()), seed_);
}

Frame Coordinator::call(HostId host, FrameType type, uint64_t qid, nlohmann::json body) {
  ++frames_sent_[type];
  const Frame request{type, qid, std::move(body)};
  auto response = nodes_.at(static_cast<std::size_t>(host))->call(request);
  if (response.type == FrameType::Error) raise_error_frame(response);
  return response;
}

std::vector<Frame> Coordinator::broadcast(FrameType type, uint64_t qid, const nlohmann::json& body) {
  std::vector<Frame> responses;
  for (HostId host = 0; host < host_count(); ++host) responses.push_back(call(host, type, qid, body));
  ++rounds_;
  return responses;
}

void Coordinator::connect() {
  for (HostId host = 0; host < host_count(); ++host) {
    call(host, FrameType::Hello, 0,
         {{"host_id", host}, {"host_count", host_count()}, {"catalog", catalog_to_json(catalog_)}, {"seed", seed_}});
  }
  ++rounds_;
  for (HostId host = 0; host < host_count(); ++host) {
    call(host, FrameType::AttestStub, 0, {{"nonce", seed_ ^ static_cast<uint64_t>(host)}});
  }
  ++rounds_;
}

std::optional<PartitionAssignment> Coordinator::assignment() const {
  if (!map_) return std::nullopt;
  return assign_partitions(*map_, host_list(host_count()));
}

std::map<std::string, Histogram> Coordinator::gather_histograms(const ControlFlowSet& c) {
  std::map<std::string, std::vector<Histogram>> parts;
  for (const auto& response : broadcast(FrameType::HistogramRequest, 0, {{"c", c.to_strings()}})) {
    for (const auto& [relation, histogram] : response.body.at("histograms").items()) {
      parts[relation].push_back(histogram_from_json(histogram));
    }
  }
  std::map<std::string, Histogram> merged;
  for (const auto& [relation, list] : parts) merged.emplace(relation, merge_histograms(list));
  return merged;
}

void Coordinator::relay_transfers(uint64_t qid, const std::string& purpose, const std::vector<Frame>& responses) {
  std::map<HostId, nlohmann::json> items;
  for (HostId source = 0; source < static_cast<HostId>(responses.size()); ++source) {
    for (const auto& transfer : responses[static_cast<std::size_t>(source)].body.at("transfers")) {
      const auto to = transfer.at("to").get<HostId>();
      if (!items.count(to)) items[to] = nlohmann::json::array();
      items[to].push_back({{"key", transfer.at("key")}, {"source", source}, {"class", transfer.at("class")}});
    }
  }
  for (const auto& [to, list] : items) call(to, FrameType::ClassTransfer, qid, {{"purpose", purpose}, {"items", list}});
  ++rounds_;
}

void Coordinator::setup_views(const ControlFlowSet& c, int k) {
  auto histograms = gather_histograms(c);
  auto map = generate_view(histograms, k, catalog_, c, seed_);
  install_view(std::move(map));
  histograms_ = std::move(histograms);
}

void Coordinator::install_view(AnonymizationMap map) {
  const auto responses = broadcast(FrameType::ViewMap, 0, {{"map", map_to_json(map)}});
  relay_transfers(0, "view", responses);
  state_ = WorkloadState{map.c, map.k};
  histograms_.clear();
  map_ = std::move(map);
}

QueryOutcome Coordinator::run_query(std::string_view text, int k, Mode mode, const std::string& client) {
  (void)client;  // any client may query; the id is accepted, not arbitrated
  QueryOutcome outcome;
  outcome.qid = next_qid_++;
  outcome.requested_mode = mode;
  auto plan = parse_query(text, catalog_);
  outcome.c = derive_control_flow(plan, catalog_);
  outcome.executed_mode = mode;

  if (mode == Mode::KAnon) {
    outcome.decision = admit(outcome.c, k, state_);
    std::visit(
        [&](const auto& decision) {
          using T = std::decay_t<decltype(decision)>;
          if constexpr (std::is_same_v<T, AdmissionDecision::MergeClasses>) {
            if (!map_) {
              state_.k_system = decision.k_new;
              return;
            }
            // Cached histograms: no HistogramRequest round for a merge.
            auto histograms = histograms_.empty() ? gather_histograms(map_->c) : histograms_;
            auto merged = merge_for_k(*map_, histograms, decision.k_new, catalog_);
            install_view(std::move(merged));
            histograms_ = std::move(histograms);
          } else if constexpr (std::is_same_v<T, AdmissionDecision::AugmentView>) {
            setup_views(decision.c_union, std::max(k, state_.k_system));
          } else if constexpr (std::is_same_v<T, AdmissionDecision::ObliviousFallback>) {
            outcome.executed_mode = Mode::Oblivious;
          }
        },
        outcome.decision.value);
  }

  plan = assign_modes(std::move(plan), outcome.c);
  auto executed = execute(outcome.qid, plan, outcome.executed_mode);
  outcome.result = std::move(executed.result);
  outcome.trace = std::move(executed.trace);
  return outcome;
}

QueryOutcome Coordinator::execute(uint64_t qid, const QueryPlan& plan, Mode mode) {
  QueryOutcome outcome;
  const bool any_secure = std::any_of(plan.nodes.begin(), plan.nodes.end(),
                                      [](const PlanNode& node) { return node.placement == Placement::Secure; });
  if (!any_secure) {
    // Nothing touches C: plaintext data may move, evaluate here.
    std::vector<RelationShard> shards;
    const auto responses = broadcast(FrameType::Execute, qid, {{"step", "plain"}, {"text", plan.text}});
    for (HostId host = 0; host < host_count(); ++host) {
      for (const auto& shard : responses[static_cast<std::size_t>(host)].body.at("shards")) {
        RelationShard copy{shard.at("relation").get<std::string>(), host, {}};
        for (const auto& values : shard.at("tuples")) copy.tuples.push_back({values_from_json(values), false, host});
        shards.push_back(std::move(copy));
      }
    }
    const auto stream = exec_plan(plan, catalog_, Mode::Plain, shards, nullptr, outcome.trace);
    outcome.result = assemble_result(plan, stream);
    return outcome;
  }

  // Prepare: local chains, routing, and shipping pieces to class owners.
  const auto prepared = broadcast(FrameType::Execute, qid,
                                  {{"step", "prepare"},
                                   {"text", plan.text},
                                   {"mode", std::string(to_string(mode))},
                                   {"home", coordinator_host_}});
  std::map<int, std::map<std::string, StreamClass>> meta;  // stream -> id -> class without tuples
  std::map<int, std::map<std::string, int64_t>> sizes;
  for (const auto& response : prepared) {
    for (const auto& entry : response.body.at("meta")) {
      const auto stream = entry.at("key").get<int>();
      const auto& m = entry.at("meta");
      const auto id = m.at("id").get<std::string>();
      auto& cls = meta[stream][id];
      cls.id = id;
      cls.groups = m.at("groups").get<std::map<std::string, int>>();
      cls.owner = m.at("owner").get<HostId>();
      sizes[stream][id] += m.at("size").get<int64_t>();
    }
  }
  relay_transfers(qid, "query", prepared);

  auto as_stream = [&](int stream) {
    ClassStream result;
    for (const auto& [id, cls] : meta[stream]) result.classes.push_back(cls);
    return result;
  };

  for (const auto& node : plan.nodes) {
    if (node.placement != Placement::Secure) continue;
    std::vector<Frame> responses;
    if (node.kind == NodeKind::Join) {
      const auto left = as_stream(node.children[0]);
      const auto right = as_stream(node.children[1]);
      std::map<HostId, nlohmann::json> pairs;
      std::map<HostId, std::map<HostId, std::set<std::string>>> copies;  // from -> to -> ids
      for (const auto& [l, r] : matched_pairs(mode, left, right, node.join_keys)) {
        const auto& lc = left.classes[l];
        const auto& rc = right.classes[r];
        if (!pairs.count(lc.owner)) pairs[lc.owner] = nlohmann::json::array();
        pairs[lc.owner].push_back({lc.id, rc.id});
        if (rc.owner != lc.owner) copies[rc.owner][lc.owner].insert(rc.id);
      }
      for (const auto& [from, targets] : copies) {
        std::set<std::string> ids;
        for (const auto& [to, wanted] : targets) ids.insert(wanted.begin(), wanted.end());
        const auto fetched = call(from, FrameType::Execute, qid,
                                  {{"step", "fetch"}, {"key", node.children[1]}, {"ids", ids}});
        std::map<std::string, nlohmann::json> by_id;
        for (const auto& cls : fetched.body.at("classes")) by_id[cls.at("id").get<std::string>()] = cls;
        for (const auto& [to, wanted] : targets) {
          nlohmann::json items = nlohmann::json::array();
          for (const auto& id : wanted) items.push_back({{"key", node.children[1]}, {"source", from}, {"class", by_id.at(id)}});
          call(to, FrameType::ClassTransfer, qid, {{"purpose", "copy"}, {"items", items}});
        }
      }
      for (HostId host = 0; host < host_count(); ++host) {
        const auto it = pairs.find(host);
        responses.push_back(call(host, FrameType::Execute, qid,
                                 {{"step", "eval"},
                                  {"node", node.id},
                                  {"pairs", it == pairs.end() ? nlohmann::json::array() : it->second}}));
      }
      ++rounds_;
    } else {
      responses = broadcast(FrameType::Execute, qid, {{"step", "eval"}, {"node", node.id}});
    }
    for (const auto& response : responses) {
      for (const auto& m : response.body.at("meta")) {
        StreamClass cls;
        cls.id = m.at("id").get<std::string>();
        cls.groups = m.at("groups").get<std::map<std::string, int>>();
        cls.owner = m.at("owner").get<HostId>();
        meta[node.id][cls.id] = std::move(cls);
      }
    }
  }

  const auto root = plan.engine_root();
  ClassStream stream;
  for (const auto& response : broadcast(FrameType::Execute, qid, {{"step", "collect"}, {"node", root}})) {
    stream.columns = columns_from_json(response.body.at("columns"));
    for (const auto& cls : response.body.at("classes")) stream.classes.push_back(class_from_json(cls));
    outcome.trace.append(Trace::from_json(response.body.at("events")));
  }
  order_classes(stream);
  outcome.trace.canonicalize();
  outcome.result = assemble_result(plan, stream);
  return outcome;
}

Frame Coordinator::handle(const Frame& request) {
  try {
    if (request.type != FrameType::SubmitQuery) {
      throw TransportError("coordinator cannot handle " + std::string(to_string(request.type)));
    }
    const auto& body = request.body;
    auto outcome = run_query(body.at("text").get<std::string>(), body.value("k", 1),
                             mode_from_string(body.value("mode", std::string("kanon"))),
                             body.value("client", std::string()));
    return {FrameType::QueryResult, outcome.qid, outcome_to_json(outcome)};
  } catch (const std::exception& e) {
    return error_frame(request.qid, e);
  }
}

ClientResult Client::submit(std::string_view text, int k, Mode mode) {
  const Frame request{FrameType::SubmitQuery,
                      0,
                      {{"text", std::string(text)}, {"k", k}, {"mode", std::string(to_string(mode))}, {"client", id_}}};
  const auto response = channel_->call(request);
  if (response.type == FrameType::Error) raise_error_frame(response);
  ClientResult result;
  result.qid = response.body.at("qid").get<uint64_t>();
  result.result = result_from_json(response.body.at("result"));
  result.trace = Trace::from_jsonl(response.body.at("trace").get<std::string>());
  result.decision = response.body.at("decision").get<std::string>();
  result.mode = response.body.at("mode").get<std::string>();
  return result;
}

std::string LocalFederation::wire_bytes() const {
  std::string bytes;
  for (const auto* channel : channels) {
    for (const auto& frame : channel->wire()) bytes += frame;
  }
  return bytes;
}

LocalFederation make_local_federation(const Dataset& dataset, uint64_t seed) {
  LocalFederation federation;
  std::vector<std::unique_ptr<Channel>> channels;
  for (HostId host = 0; host < dataset.host_count; ++host) {
    auto owner = std::make_shared<DataOwner>(host, dataset.shards_of(host));
    auto channel = std::make_unique<LocalChannel>([owner](const Frame& frame) { return owner->handle(frame); });
    federation.channels.push_back(channel.get());
    federation.owners.push_back(std::move(owner));
    channels.push_back(std::move(channel));
  }
  federation.coordinator = std::make_unique<Coordinator>(dataset.catalog, std::move(channels), seed);
  federation.coordinator->connect();
  return federation;
}

}  // namespace kloak
