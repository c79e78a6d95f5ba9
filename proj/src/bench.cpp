#include "kloak/bench.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <random>
#include <set>

#include "kloak/errors.hpp"
#include "kloak/federation.hpp"
#include "kloak/hash.hpp"

namespace kloak {

namespace fs = std::filesystem;

namespace {

// Raw engine output only: distribution objects differ between standard
// libraries and would break byte-identical datasets.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  uint64_t below(uint64_t n) { return engine_() % n; }
  int64_t between(int64_t lo, int64_t hi) { return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1))); }
  bool chance(double p) { return static_cast<double>(engine_() >> 11) * 0x1.0p-53 < p; }
  template <typename T>
  const T& pick(const std::vector<T>& items) {
    return items[below(items.size())];
  }
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

AttributeDef attr(std::string name, ScalarKind kind, Policy policy, std::string domain = "") {
  if (domain.empty()) domain = name;
  return {std::move(name), kind, policy, std::move(domain)};
}

constexpr auto Int = ScalarKind::Integer;
constexpr auto Text = ScalarKind::Text;
constexpr auto Pub = Policy::Public;
constexpr auto Anon = Policy::KAnon;

// Per (relation, host) shards in catalog order, so write_dataset keeps one
// file per host.
class ShardSet {
 public:
  ShardSet(const Catalog& catalog, int hosts) : hosts_(hosts) {
    for (const auto& relation : catalog.relations()) {
      for (HostId host = 0; host < hosts; ++host) shards_.push_back({relation.name, host, {}});
      names_.push_back(relation.name);
    }
  }

  void add(const std::string& relation, HostId host, ValueVector values) {
    const auto index = static_cast<std::size_t>(std::find(names_.begin(), names_.end(), relation) - names_.begin());
    shards_[index * static_cast<std::size_t>(hosts_) + static_cast<std::size_t>(host)].tuples.push_back(
        {std::move(values), false, host});
  }

  std::vector<RelationShard> take() { return std::move(shards_); }

 private:
  int hosts_;
  std::vector<std::string> names_;
  std::vector<RelationShard> shards_;
};

void check_hosts(int hosts) {
  if (hosts < 1) throw ValidationError("generators need at least one host");
}

Scalar I(int64_t v) { return Scalar{v}; }
Scalar S(std::string v) { return Scalar{std::move(v)}; }

}  // namespace

Dataset gen_tpch_like(double scale, uint64_t seed, int hosts) {
  if (!(scale > 0)) throw ValidationError("scale must be positive");
  check_hosts(hosts);
  const auto orders = std::max<int64_t>(1, std::llround(15000 * scale));
  // TPC-H ratios would leave a handful of customers and suppliers at desk
  // scale, too few for any k; floor them.
  const auto customers = std::max<int64_t>(20, std::llround(orders / 10.0));
  const auto suppliers = std::max<int64_t>(20, std::llround(orders / 150.0));
  const int64_t nations = 5;

  Dataset data;
  data.host_count = hosts;
  data.catalog = Catalog(
      {
          {"customer",
           {attr("c_custkey", Int, Anon, "custkey"), attr("c_nationkey", Int, Pub, "nationkey"),
            attr("c_mktsegment", Text, Anon, "mktsegment")},
           "c_custkey"},
          {"orders",
           {attr("o_orderkey", Int, Pub, "orderkey"), attr("o_custkey", Int, Anon, "custkey"),
            attr("o_orderdate", Int, Pub, "orderdate"), attr("o_totalprice", Int, Pub, "totalprice")},
           "o_custkey"},
          {"lineitem",
           {attr("l_orderkey", Int, Anon, "orderkey"), attr("l_suppkey", Int, Anon, "suppkey"),
            attr("l_quantity", Int, Pub, "quantity"), attr("l_extendedprice", Int, Pub, "extendedprice")},
           "l_orderkey"},
          {"supplier", {attr("s_suppkey", Int, Anon, "suppkey"), attr("s_nationkey", Int, Pub, "nationkey")},
           "s_suppkey"},
      },
      {{{"c_custkey"}, {"c_nationkey", "c_mktsegment"}},
       {{"o_orderkey"}, {"o_custkey", "o_orderdate", "o_totalprice"}},
       {{"s_suppkey"}, {"s_nationkey"}}});

  Rng rng(seed);
  ShardSet shards(data.catalog, hosts);
  static const std::vector<std::string> segments = {"AUTOMOBILE", "BUILDING", "FURNITURE", "HOUSEHOLD", "MACHINERY"};
  for (int64_t c = 1; c <= customers; ++c) {
    const auto host = static_cast<HostId>(rng.below(static_cast<uint64_t>(hosts)));
    shards.add("customer", host, {I(c), I(rng.between(0, nations - 1)), S(rng.pick(segments))});
  }
  for (int64_t s = 1; s <= suppliers; ++s) {
    const auto host = static_cast<HostId>(rng.below(static_cast<uint64_t>(hosts)));
    shards.add("supplier", host, {I(s), I(rng.between(0, nations - 1))});
  }
  for (int64_t o = 1; o <= orders; ++o) {
    const auto host = static_cast<HostId>(rng.below(static_cast<uint64_t>(hosts)));
    const auto customer = rng.between(1, customers);
    const auto date = rng.between(1992, 1998);
    const auto lines = rng.between(1, 7);  // mean 4, as in TPC-H
    int64_t total = 0;
    for (int64_t l = 0; l < lines; ++l) {
      const auto quantity = rng.between(1, 50);
      const auto price = quantity * rng.between(900, 2000);
      total += price;
      shards.add("lineitem", host, {I(o), I(rng.between(1, suppliers)), I(quantity), I(price)});
    }
    shards.add("orders", host, {I(o), I(customer), I(date), I(total)});
  }
  data.shards = shards.take();
  return data;
}

Dataset gen_health(int patients, uint64_t seed, double zipf_s, int hosts) {
  if (patients < 1) throw ValidationError("patients must be at least 1");
  if (zipf_s < 0) throw ValidationError("zipf_s must be non-negative");
  check_hosts(hosts);

  Dataset data;
  data.host_count = hosts;
  data.catalog = Catalog(
      {
          {"demographics",
           {attr("pid", Int, Pub), attr("gender", Text, Anon), attr("race", Text, Anon),
            attr("birth_year", Int, Pub)},
           "pid"},
          {"diagnoses", {attr("pid", Int, Pub), attr("diag", Text, Anon), attr("year", Int, Pub)}, "pid"},
          {"medications", {attr("pid", Int, Pub), attr("med", Text, Anon), attr("dosage", Text, Pub)}, "pid"},
          {"vitals", {attr("pid", Int, Pub), attr("pulse", Int, Pub)}, "pid"},
          {"hd_cohort", {attr("pid", Int, Pub)}, "pid"},
          {"cdiff_cohort", {attr("pid", Int, Pub)}, "pid"},
      },
      {{{"pid"}, {"gender", "race", "birth_year"}}});

  static const std::vector<std::string> genders = {"F", "M"};
  static const std::vector<std::string> races = {"asian", "black", "other", "white"};
  static const std::vector<std::string> diags = {"asthma",   "cdiff",        "diabetes", "flu",
                                                 "hd",       "hypertension", "infection", "internal bleeding"};
  static const std::vector<std::string> meds = {"aspirin", "insulin", "lisinopril", "metformin", "vancomycin",
                                                "warfarin"};
  static const std::vector<std::string> dosages = {"81mg", "325mg", "500mg"};

  Rng rng(seed);
  // Zipf weights by a shuffled rank, shared by every record type: a heavy
  // patient has many diagnoses and many vitals.
  std::vector<int> rank(static_cast<std::size_t>(patients));
  for (int p = 0; p < patients; ++p) rank[static_cast<std::size_t>(p)] = p + 1;
  rng.shuffle(rank);
  double weight_sum = 0;
  for (int r = 1; r <= patients; ++r) weight_sum += std::pow(r, -zipf_s);
  auto records = [&](int p, double mean) {
    const auto w = std::pow(rank[static_cast<std::size_t>(p)], -zipf_s) / weight_sum;
    return std::max<int64_t>(1, std::llround(mean * patients * w));
  };

  ShardSet shards(data.catalog, hosts);
  std::set<int64_t> hd;
  std::set<int64_t> cdiff;
  for (int p = 0; p < patients; ++p) {
    const int64_t pid = p + 1;
    const auto home = static_cast<HostId>(rng.below(static_cast<uint64_t>(hosts)));
    // Most records stay at the patient's home site.
    auto site = [&] { return rng.chance(0.8) ? home : static_cast<HostId>(rng.below(static_cast<uint64_t>(hosts))); };
    shards.add("demographics", home, {I(pid), S(rng.pick(genders)), S(rng.pick(races)), I(rng.between(1930, 2010))});
    for (int64_t i = records(p, 2.0); i > 0; --i) {
      const auto& diag = rng.pick(diags);
      if (diag == "hd") hd.insert(pid);
      if (diag == "cdiff") cdiff.insert(pid);
      shards.add("diagnoses", site(), {I(pid), S(diag), I(rng.between(2015, 2018))});
    }
    for (int64_t i = records(p, 1.0); i > 0; --i) {
      shards.add("medications", site(), {I(pid), S(rng.pick(meds)), S(rng.pick(dosages))});
    }
    for (int64_t i = records(p, 2.0); i > 0; --i) shards.add("vitals", site(), {I(pid), I(rng.between(50, 110))});
  }
  // Registries are public lists kept by host 0.
  for (const auto pid : hd) shards.add("hd_cohort", 0, {I(pid)});
  for (const auto pid : cdiff) shards.add("cdiff_cohort", 0, {I(pid)});
  data.shards = shards.take();
  return data;
}

Dataset gen_uniform_join(int n, uint64_t seed, int hosts, int host_block) {
  if (n < 1) throw ValidationError("n must be at least 1");
  if (host_block < 1) throw ValidationError("host_block must be at least 1");
  check_hosts(hosts);
  Dataset data;
  data.host_count = hosts;
  data.catalog = Catalog({{"r", {attr("key", Int, Anon, "key"), attr("val", Int, Pub, "rval")}, "key"},
                          {"s", {attr("key", Int, Anon, "key"), attr("val", Int, Pub, "sval")}, "key"}},
                         {});
  Rng rng(seed);
  ShardSet shards(data.catalog, hosts);
  for (const auto* relation : {"r", "s"}) {
    for (int64_t key = 0; key < n; ++key) {
      const auto host = static_cast<HostId>((key / host_block) % hosts);
      shards.add(relation, host, {I(key), I(rng.between(0, 999))});
    }
  }
  data.shards = shards.take();
  return data;
}

std::map<std::string, std::vector<std::vector<Scalar>>> uniform_join_groupings(int n, int k) {
  if (k < 1 || n % k != 0) throw ValidationError("block size " + std::to_string(k) + " must divide n");
  std::vector<std::vector<Scalar>> groups;
  for (int64_t start = 0; start < n; start += k) {
    std::vector<Scalar> group;
    for (int64_t key = start; key < start + k; ++key) group.push_back(I(key));
    groups.push_back(std::move(group));
  }
  return {{"key", std::move(groups)}};
}

Dataset DatasetSpec::generate() const {
  if (generator == "tpch_like") return gen_tpch_like(scale, seed, hosts);
  if (generator == "health") return gen_health(patients, seed, zipf_s, hosts);
  if (generator == "uniform_join") return gen_uniform_join(n, seed, hosts, host_block);
  throw ValidationError("unknown generator '" + generator + "'");
}

std::string DatasetSpec::label() const {
  if (generator == "tpch_like") return "scale=" + nlohmann::json(scale).dump();
  if (generator == "health") return "patients=" + std::to_string(patients);
  return "n=" + std::to_string(n);
}

Scenario scenario_from_json(const nlohmann::json& document) {
  try {
    Scenario scenario;
    scenario.name = document.at("name").get<std::string>();
    scenario.output = document.value("output", scenario.name);
    scenario.seed = document.value("seed", uint64_t{42});
    scenario.view = document.value("view", std::string("generated"));
    if (scenario.view != "generated" && scenario.view != "blocks") {
      throw ValidationError("view must be 'generated' or 'blocks'");
    }

    const auto& ds = document.at("dataset");
    DatasetSpec base;
    base.generator = ds.at("generator").get<std::string>();
    base.scale = ds.value("scale", base.scale);
    base.zipf_s = ds.value("zipf_s", base.zipf_s);
    base.n = ds.value("n", base.n);
    base.hosts = ds.value("hosts", base.hosts);
    base.host_block = ds.value("host_block", base.host_block);
    base.seed = ds.value("seed", base.seed);
    // "patients" may be a list: one dataset per sweep point.
    if (ds.contains("patients") && ds.at("patients").is_array()) {
      for (const auto& value : ds.at("patients")) {
        auto point = base;
        point.patients = value.get<int>();
        scenario.datasets.push_back(point);
      }
    } else {
      base.patients = ds.value("patients", base.patients);
      scenario.datasets.push_back(base);
    }
    if (scenario.view == "blocks" && base.generator != "uniform_join") {
      throw ValidationError("block views need the uniform_join generator");
    }

    for (const auto& query : document.at("queries")) {
      scenario.queries.push_back({query.at("name").get<std::string>(), query.at("sql").get<std::string>()});
    }
    for (const auto& mode : document.at("modes")) scenario.modes.push_back(mode_from_string(mode.get<std::string>()));
    scenario.ks = document.at("k").get<std::vector<int>>();
    for (const auto k : scenario.ks) {
      if (k < 1) throw ValidationError("k must be at least 1");
    }
    if (scenario.queries.empty() || scenario.modes.empty() || scenario.ks.empty()) {
      throw ValidationError("scenario '" + scenario.name + "' has an empty grid");
    }
    // Every query must parse against the generated catalog.
    const auto catalog = scenario.datasets.front().generate().catalog;
    for (const auto& query : scenario.queries) parse_query(query.sql, catalog);
    return scenario;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad scenario: ") + e.what());
  }
}

Scenario load_scenario(const fs::path& path) {
  nlohmann::json document;
  try {
    document = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return scenario_from_json(document);
}

namespace {

void run_cell(const Scenario& scenario, const DatasetSpec& spec, const Dataset& data, const ScenarioQuery& query,
              const ResultSet& oracle, ReportRow& row, const BenchOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  auto federation = make_local_federation(data, scenario.seed);
  if (row.mode == Mode::KAnon && scenario.view == "blocks") {
    const auto plan = parse_query(query.sql, data.catalog);
    const auto c = derive_control_flow(plan, data.catalog);
    const auto histograms = collect_histograms(data.shards, data.catalog, c, data.host_count);
    federation.coordinator->install_view(
        build_view(histograms, row.k, data.catalog, c, scenario.seed, uniform_join_groupings(spec.n, row.k)));
  }
  auto outcome = federation.coordinator->run_query(query.sql, row.k, row.mode, "bench");
  if (options.wall_clock) {
    row.wall_millis = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start)
                          .count();
  }
  if (!(outcome.result == oracle)) {
    throw Error("result differs from the plain oracle");
  }
  row.trace = std::move(outcome.trace);
  row.output_tuples = row.trace.output_tuples();
  row.comparisons = row.trace.total_comparisons();
  row.trace_hash = hex64(row.trace.digest());
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string quoted = "\"";
  for (const char c : text) {
    if (c == '"') quoted += '"';
    quoted += c == '\n' ? ' ' : c;
  }
  return quoted + "\"";
}

std::string file_safe(const std::string& text) {
  std::string out;
  for (const char c : text) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_';
  return out;
}

}  // namespace

std::vector<ReportRow> run_scenario(const Scenario& scenario, const BenchOptions& options) {
  std::vector<ReportRow> rows;
  for (const auto& spec : scenario.datasets) {
    const auto data = spec.generate();
    const auto label = scenario.datasets.size() > 1 ? scenario.name + "[" + spec.label() + "]" : scenario.name;
    for (const auto& query : scenario.queries) {
      std::optional<ResultSet> oracle;
      std::string oracle_error;
      try {
        oracle = run_local(query.sql, data.catalog, Mode::Plain, data.shards, nullptr).result;
      } catch (const std::exception& e) {
        oracle_error = std::string("plain oracle failed: ") + e.what();
      }
      for (const auto mode : scenario.modes) {
        for (const auto k : scenario.ks) {
          ReportRow row;
          row.scenario = label;
          row.query = query.name;
          row.mode = mode;
          row.k = k;
          if (!oracle) {
            row.error = oracle_error;
          } else {
            try {
              run_cell(scenario, spec, data, query, *oracle, row, options);
            } catch (const std::exception& e) {
              const auto* known = dynamic_cast<const Error*>(&e);
              row.error = (known ? std::string(known->kind()) + ": " : std::string()) + e.what();
              row.trace = Trace{};
              row.output_tuples = 0;
              row.comparisons = 0;
              row.trace_hash.clear();
            }
          }
          rows.push_back(std::move(row));
        }
      }
    }
  }
  return rows;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "scenario,query,mode,k,output_tuples,comparisons,wall_millis,trace_hash,error\n";
  for (const auto& row : rows) {
    out += csv_field(row.scenario) + "," + csv_field(row.query) + "," + std::string(to_string(row.mode)) + "," +
           std::to_string(row.k) + "," + std::to_string(row.output_tuples) + "," + std::to_string(row.comparisons) +
           "," + std::to_string(row.wall_millis) + "," + row.trace_hash + "," + csv_field(row.error) + "\n";
  }
  return out;
}

std::string trace_file_name(const ReportRow& row) {
  return file_safe(row.scenario) + "__" + file_safe(row.query) + "__" + std::string(to_string(row.mode)) + "__k" +
         std::to_string(row.k) + ".jsonl";
}

void write_report(const fs::path& dir, const std::vector<ReportRow>& rows) {
  fs::create_directories(dir / "traces");
  write_text_file(dir / "report.csv", report_csv(rows));
  for (const auto& row : rows) {
    if (row.error.empty()) write_text_file(dir / "traces" / trace_file_name(row), row.trace.to_jsonl());
  }
}

std::vector<ReportRow> run_suite(const fs::path& scenario_dir, const fs::path& out_dir, const BenchOptions& options) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(scenario_dir)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ReportRow> all;
  for (const auto& file : files) {
    const auto scenario = load_scenario(file);
    auto rows = run_scenario(scenario, options);
    write_report(out_dir / scenario.output, rows);
    all.insert(all.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
  }
  return all;
}

}  // namespace kloak
