#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "kloak/bench.hpp"
#include "kloak/errors.hpp"
#include "kloak/federation.hpp"
#include "kloak/hash.hpp"

namespace fs = std::filesystem;
using namespace kloak;

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::stringstream stream(text);
  std::string part;
  while (std::getline(stream, part, sep)) {
    if (!part.empty()) parts.push_back(part);
  }
  return parts;
}

nlohmann::json decomposition_json(const DecompositionReport& report) {
  nlohmann::json unpreserved = nlohmann::json::array();
  for (const auto& fd : report.unpreserved) unpreserved.push_back({{"lhs", fd.lhs}, {"rhs", fd.rhs}});
  nlohmann::json out = {{"lossless", report.lossless},
                        {"dependency_preserving", report.dependency_preserving},
                        {"unpreserved", unpreserved}};
  if (report.witness_row) {
    out["witness_row"] = *report.witness_row;
    out["universe"] = report.universe;
    out["tableau"] = report.tableau;
  }
  return out;
}

std::unique_ptr<Coordinator> tcp_coordinator(const Catalog& catalog, const std::string& nodes, uint64_t seed) {
  std::vector<std::unique_ptr<Channel>> channels;
  for (const auto& endpoint : split(nodes, ',')) {
    const auto [host, port] = parse_endpoint(endpoint);
    channels.push_back(std::make_unique<TcpChannel>(host, port));
  }
  if (channels.empty()) throw ValidationError("--nodes lists no endpoints");
  auto coordinator = std::make_unique<Coordinator>(catalog, std::move(channels), seed);
  coordinator->connect();
  return coordinator;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kloak: federated queries over k-anonymous processing views"};
  app.require_subcommand(1);

  // serve
  auto* serve = app.add_subcommand("serve", "Run a data owner over TCP");
  int host_id = 0;
  std::string listen = "127.0.0.1:7000";
  std::string data_dir;
  serve->add_option("--host-id", host_id, "This owner's host id")->required();
  serve->add_option("--listen", listen, "address:port to listen on")->capture_default_str();
  serve->add_option("--data-dir", data_dir, "Dataset directory (host<id>/ holds this owner's CSVs)")->required();

  // query
  auto* query = app.add_subcommand("query", "Run one query against a federation");
  std::string mode_text = "kanon";
  int k = 2;
  std::string query_file;
  std::string query_text;
  std::string trace_out;
  uint64_t seed = 42;
  std::string nodes;
  std::string map_file;
  std::string schema_file;
  query->add_option("--mode", mode_text, "plain | encrypted | kanon | oblivious")
      ->check(CLI::IsMember({"plain", "encrypted", "kanon", "oblivious"}))
      ->capture_default_str();
  query->add_option("--k", k, "Requested k")->capture_default_str();
  auto* file_opt = query->add_option("--query-file", query_file, "File with the SQL text");
  query->add_option("--sql", query_text, "SQL text")->excludes(file_opt);
  query->add_option("--trace-out", trace_out, "Write the trace JSONL here");
  query->add_option("--seed", seed, "Federation seed")->capture_default_str();
  auto* data_opt = query->add_option("--data", data_dir, "Dataset directory, run in-process");
  query->add_option("--nodes", nodes, "Comma-separated data owner endpoints")->excludes(data_opt);
  query->add_option("--map", map_file, "Install this view before the query");
  query->add_option("--schema", schema_file, "Catalog JSON, needed with --nodes");

  // setup
  auto* setup = app.add_subcommand("setup", "Generate a k-anonymous processing view");
  std::string control_flow;
  std::string map_out;
  setup->add_option("--schema", schema_file, "Catalog JSON (defaults to <data>/catalog.json)");
  setup->add_option("--k", k, "Target k")->required();
  setup->add_option("--control-flow", control_flow, "Comma-separated rel.attr list")->required();
  setup->add_option("--data", data_dir, "Dataset directory")->required();
  setup->add_option("--seed", seed, "Hash seed")->capture_default_str();
  setup->add_option("--out", map_out, "Write the map here instead of stdout");

  // check-view
  auto* check = app.add_subcommand("check-view", "Report violations of a view against data");
  int check_k = 0;
  check->add_option("--map", map_file, "Map JSON")->required();
  check->add_option("--data", data_dir, "Dataset directory")->required();
  check->add_option("--k", check_k, "k to check (defaults to the map's)");

  // check-schema
  auto* check_schema = app.add_subcommand("check-schema", "Lossless-join and dependency-preservation report");
  check_schema->add_option("--schema", schema_file, "Catalog JSON")->required();

  // bench
  auto* bench = app.add_subcommand("bench", "Run scenarios and write reports");
  std::string scenario_file;
  std::string suite_dir;
  std::string out_dir = "bench_out";
  bool wall_clock = false;
  auto* scenario_opt = bench->add_option("--scenario", scenario_file, "Scenario JSON");
  bench->add_option("--suite", suite_dir, "Run every scenario in this directory")->excludes(scenario_opt);
  bench->add_option("--out", out_dir, "Output directory")->capture_default_str();
  bench->add_flag("--wall-clock", wall_clock, "Record wall time (reports stop being byte-stable)");

  // gen
  auto* gen = app.add_subcommand("gen", "Write a synthetic dataset");
  DatasetSpec spec;
  gen->add_option("--generator", spec.generator, "tpch_like | health | uniform_join")
      ->required()
      ->check(CLI::IsMember({"tpch_like", "health", "uniform_join"}));
  gen->add_option("--out", out_dir, "Dataset directory")->required();
  gen->add_option("--seed", spec.seed)->capture_default_str();
  gen->add_option("--hosts", spec.hosts)->capture_default_str();
  gen->add_option("--scale", spec.scale)->capture_default_str();
  gen->add_option("--patients", spec.patients)->capture_default_str();
  gen->add_option("--zipf-s", spec.zipf_s)->capture_default_str();
  gen->add_option("--n", spec.n)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) {
      const auto [address, port] = parse_endpoint(listen);
      auto owner = std::make_shared<DataOwner>(host_id, fs::path(data_dir));
      TcpServer server(address, port);
      std::cerr << "host " << host_id << " listening on " << address << ":" << server.port() << "\n";
      server.run([owner](const Frame& frame) { return owner->handle(frame); });
    }

    if (*query) {
      if (query_file.empty() && query_text.empty()) throw ValidationError("give --query-file or --sql");
      const auto text = query_file.empty() ? query_text : read_text_file(query_file);
      const auto mode = mode_from_string(mode_text);
      std::unique_ptr<Coordinator> coordinator;
      LocalFederation local;
      if (!nodes.empty()) {
        if (schema_file.empty()) throw ValidationError("--nodes needs --schema");
        coordinator = tcp_coordinator(load_catalog(read_text_file(schema_file)), nodes, seed);
      } else {
        if (data_dir.empty()) throw ValidationError("give --data or --nodes");
        local = make_local_federation(load_dataset(data_dir), seed);
      }
      auto& driver = coordinator ? *coordinator : *local.coordinator;
      if (!map_file.empty()) driver.install_view(map_from_json(nlohmann::json::parse(read_text_file(map_file))));
      const auto outcome = driver.run_query(text, k, mode, "cli");
      std::cout << format_result(outcome.result);
      if (mode == Mode::KAnon) std::cerr << "decision=" << outcome.decision.name() << " ";
      std::cerr << "mode=" << to_string(outcome.executed_mode)
                << " cmp=" << outcome.trace.total_comparisons() << " trace=" << hex64(outcome.trace.digest())
                << "\n";
      if (!trace_out.empty()) write_text_file(trace_out, outcome.trace.to_jsonl());
    }

    if (*setup) {
      auto data = load_dataset(data_dir);
      if (!schema_file.empty()) data.catalog = load_catalog(read_text_file(schema_file));
      const auto c = ControlFlowSet::parse(split(control_flow, ','), data.catalog);
      const auto histograms = collect_histograms(data.shards, data.catalog, c, data.host_count);
      const auto map = generate_view(histograms, k, data.catalog, c, seed);
      const auto text = serialize_map(map) + "\n";
      if (map_out.empty()) {
        std::cout << text;
      } else {
        write_text_file(map_out, text);
      }
    }

    if (*check) {
      const auto data = load_dataset(data_dir);
      const auto map = map_from_json(nlohmann::json::parse(read_text_file(map_file)));
      const auto violations = check_view(map, data.shards, check_k > 0 ? check_k : map.k, data.catalog);
      std::cout << violations_to_jsonl(violations);
      return violations.empty() ? 0 : 1;
    }

    if (*check_schema) {
      const auto report = validate_decomposition(load_catalog(read_text_file(schema_file)));
      std::cout << decomposition_json(report).dump(2) << "\n";
      if (!report.lossless || !report.dependency_preserving) {
        std::cerr << "warning: decomposition is not lossless and dependency preserving\n";
      }
    }

    if (*bench) {
      const BenchOptions options{wall_clock};
      std::vector<ReportRow> rows;
      if (!suite_dir.empty()) {
        rows = run_suite(suite_dir, out_dir, options);
      } else {
        if (scenario_file.empty()) throw ValidationError("give --scenario or --suite");
        rows = run_scenario(load_scenario(scenario_file), options);
        write_report(out_dir, rows);
      }
      int failed = 0;
      for (const auto& row : rows) failed += !row.error.empty();
      std::cerr << rows.size() << " cells, " << failed << " with errors, report in " << out_dir << "\n";
    }

    if (*gen) {
      const auto data = spec.generate();
      write_dataset(out_dir, data);
      std::cerr << "wrote " << data.shards.size() << " shards to " << out_dir << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
