#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kloak/dataset.hpp"
#include "kloak/executor.hpp"
#include "kloak/trace.hpp"

namespace kloak {

// Relations customer, orders, lineitem, supplier. rows(orders) =
// round(15000 * scale), about 4 lineitems per order. Throws ValidationError
// for scale <= 0.
Dataset gen_tpch_like(double scale, uint64_t seed, int hosts = 2);

// demographics, diagnoses, medications, vitals plus the hd_cohort and
// cdiff_cohort registries. Records per patient follow a Zipf law with
// exponent zipf_s (0 = uniform).
Dataset gen_health(int patients, uint64_t seed, double zipf_s, int hosts = 2);

// r(key, val) and s(key, val), keys 0..n-1 once per side. Keys are placed
// in aligned blocks of host_block so any block of a divisor size sits on
// one host.
Dataset gen_uniform_join(int n, uint64_t seed, int hosts = 2, int host_block = 100);

// Groups of k consecutive keys in the uniform join's key domain.
std::map<std::string, std::vector<std::vector<Scalar>>> uniform_join_groupings(int n, int k);

struct DatasetSpec {
  std::string generator;  // tpch_like | health | uniform_join
  double scale = 0.01;
  int patients = 100;
  double zipf_s = 1.0;
  int n = 1000;
  int hosts = 2;
  int host_block = 100;
  uint64_t seed = 1;

  Dataset generate() const;
  std::string label() const;
};

struct ScenarioQuery {
  std::string name;
  std::string sql;
};

struct Scenario {
  std::string name;
  std::vector<DatasetSpec> datasets;  // one per sweep point
  std::vector<ScenarioQuery> queries;
  std::vector<Mode> modes;
  std::vector<int> ks;
  // "generated" runs generate_view; "blocks" installs exact size-k classes
  // (uniform join only).
  std::string view = "generated";
  uint64_t seed = 42;
  std::string output;  // subdirectory under the bench output dir
};

// Throws ParseError / ValidationError.
Scenario scenario_from_json(const nlohmann::json& document);
Scenario load_scenario(const std::filesystem::path& path);

struct ReportRow {
  std::string scenario;
  std::string query;
  Mode mode = Mode::Plain;
  int k = 1;
  int64_t output_tuples = 0;
  int64_t comparisons = 0;
  int64_t wall_millis = 0;
  std::string trace_hash;
  std::string error;
  Trace trace;
};

struct BenchOptions {
  // Wall time breaks byte-identical reports, so it is off by default.
  bool wall_clock = false;
};

// Runs the (dataset, query, mode, k) grid, each cell on a fresh federation.
// Cells whose dummy-stripped result differs from the plain oracle, or that
// throw, carry an error and no counters.
std::vector<ReportRow> run_scenario(const Scenario& scenario, const BenchOptions& options = {});

std::string report_csv(const std::vector<ReportRow>& rows);
std::string trace_file_name(const ReportRow& row);
// Writes <dir>/report.csv and <dir>/traces/*.jsonl.
void write_report(const std::filesystem::path& dir, const std::vector<ReportRow>& rows);

// Runs every *.json scenario in scenario_dir (sorted by name) and writes
// each report under out_dir/<scenario output>. Returns all rows.
std::vector<ReportRow> run_suite(const std::filesystem::path& scenario_dir, const std::filesystem::path& out_dir,
                                 const BenchOptions& options = {});

}  // namespace kloak
