// Acceptance driver: one PASS/FAIL line per criterion, exit 1 on any FAIL.
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <sys/resource.h>
#include <unistd.h>

#include "fig2.hpp"
#include "kloak/bench.hpp"
#include "kloak/errors.hpp"
#include "kloak/federation.hpp"
#include "kloak/simulator.hpp"
#include "random_instance.hpp"

namespace fs = std::filesystem;
using namespace kloak;
using kloak::testing::RandomInstance;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int failures = 0;
const bool verbose = std::getenv("KLOAK_ACCEPTANCE_VERBOSE") != nullptr;

void report(int criterion, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << criterion << ": " << detail << std::endl;
  failures += !ok;
}

// Keeps the first few problems for stderr.
struct Problems {
  std::vector<std::string> items;
  int count = 0;
  void add(const std::string& text) {
    if (++count <= 5) items.push_back(text);
  }
  void dump(int criterion) const {
    for (const auto& item : items) std::cerr << "  [" << criterion << "] " << item << "\n";
  }
};

std::string rows_text(const std::vector<ValueVector>& rows) {
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + format_scalar(row[i]);
    out += ";";
  }
  return out;
}

// ---------------------------------------------------------------------------

void criterion1() {
  const auto start = Clock::now();
  auto fig = testing::load_fig2();
  const auto plan = assign_modes(parse_query(fig.query, fig.data.catalog), fig.c);
  auto fed = make_local_federation(fig.data, 42);
  fed.coordinator->install_view(fig.map);
  const auto kanon = fed.coordinator->run_query(fig.query, 2, Mode::KAnon);
  const auto oblivious = fed.coordinator->run_query(fig.query, 2, Mode::Oblivious);

  auto node_of = [&](NodeKind kind) {
    for (const auto& node : plan.nodes) {
      if (node.kind == kind) return node.id;
    }
    return -1;
  };
  const int filter = node_of(NodeKind::Filter);
  const int join = node_of(NodeKind::Join);

  int emits = 0;
  int drops = 0;
  std::vector<int64_t> bins;
  for (const auto& event : kanon.trace.events()) {
    if (event.node == filter) {
      emits += event.kind == EventKind::ClassEmit;
      drops += event.kind == EventKind::ClassDrop;
    }
    if (event.kind == EventKind::BinEmit) bins.push_back(event.cardinality);
  }

  // Real tuples behind the join, straight from the operators over the view.
  const auto view = anonymized_view(plan, fig.data.catalog, fig.data.shards, fig.map);
  const auto& join_node = plan.node(join);
  const OperatorContext ctx{Mode::KAnon, join, 2, nullptr};
  const auto filtered = filter_op(ctx, view.at("demographics"), plan.node(filter).predicates);
  const auto joined = join_op(ctx, filtered, view.at("diagnosis"), join_node.join_keys);

  const auto join_card = kanon.trace.output_tuples(join);
  const auto oblivious_card = oblivious.trace.output_tuples(join);
  const auto elapsed = seconds_since(start);
  std::ostringstream detail;
  detail << "filter " << emits << "/" << emits + drops << " classes, join " << join_card << " tuples ("
         << joined.real_tuple_count() << " real), oblivious join " << oblivious_card << ", infection bin "
         << (bins.size() == 2 ? bins[1] : -1) << ", " << elapsed << " s";
  report(1,
         emits == 2 && drops == 1 && join_card == 8 && joined.tuple_count() == 8 && joined.real_tuple_count() == 3 &&
             oblivious_card == 36 && bins.size() == 2 && bins[1] == 1 && elapsed < 1.0,
         detail.str());
}

// ---------------------------------------------------------------------------
// Criteria 2, 3, 4 and the first half of 6 share the randomized instances.

struct Feasible {
  RandomInstance instance;
  AnonymizationMap map;
  Trace trace;
  ControlFlowSet c;  // c plus every control input of the plan
};

// Returns the check_view problems found on generated views, for criterion 6.
Problems criteria_2_3_4(std::vector<Feasible>& feasible) {
  constexpr int kTarget = 200;
  const auto start = Clock::now();
  Problems oracle;
  Problems traces;
  Problems views;
  int infeasible = 0;
  int attempts = 0;
  int results_checked = 0;
  int with_secure = 0;
  int joins = 0;
  std::map<int, int> hosts_seen;

  for (uint64_t seed = 1; static_cast<int>(feasible.size()) < kTarget && attempts < 5000; ++seed) {
    ++attempts;
    auto instance = testing::random_instance(seed);
    const auto sql = instance.query.sql();
    const auto expected = testing::reference_eval(instance.query, instance.data);
    const auto label = "seed " + std::to_string(seed) + ": " + sql;
    if (verbose) {
      rusage usage{};
      getrusage(RUSAGE_SELF, &usage);
      std::cerr << label << " k=" << instance.k << " hosts=" << instance.data.host_count << " maxrss "
                << usage.ru_maxrss / 1024 << "M" << std::endl;
    }

    auto fed = make_local_federation(instance.data, seed);
    QueryOutcome kanon;
    try {
      kanon = fed.coordinator->run_query(sql, instance.k, Mode::KAnon);
    } catch (const ViewInfeasible&) {
      ++infeasible;
      continue;
    } catch (const std::exception& e) {
      oracle.add(label + " kanon threw " + e.what());
      continue;
    }

    Feasible entry{instance, {}, kanon.trace, kanon.c};
    if (rows_text(kanon.result.rows) != rows_text(expected)) {
      oracle.add(label + " kanon " + rows_text(kanon.result.rows) + " expected " + rows_text(expected));
    }
    for (const auto mode : {Mode::Plain, Mode::Encrypted, Mode::Oblivious}) {
      try {
        const auto outcome = fed.coordinator->run_query(sql, instance.k, mode);
        if (rows_text(outcome.result.rows) != rows_text(expected)) {
          oracle.add(label + " " + std::string(to_string(mode)) + " " + rows_text(outcome.result.rows));
        }
      } catch (const std::exception& e) {
        oracle.add(label + " " + std::string(to_string(mode)) + " threw " + e.what());
      }
    }
    results_checked += 4;

    const auto plan = assign_modes(parse_query(sql, instance.data.catalog), kanon.c);
    const bool secure = std::any_of(plan.nodes.begin(), plan.nodes.end(),
                                    [](const PlanNode& n) { return n.placement == Placement::Secure; });
    // Mutations must leave every control input alone, public ones included:
    // a public filter runs before anonymization and shapes class sizes.
    for (const auto& node : plan.nodes) {
      for (const auto& column : node.control_inputs()) entry.c.insert(column);
    }
    with_secure += secure;
    joins += instance.query.relations.size() > 1;
    ++hosts_seen[instance.data.host_count];

    if (const auto& map = fed.coordinator->view()) {
      entry.map = *map;
      const auto violations = check_view(*map, instance.data.shards, map->k, instance.data.catalog);
      if (!violations.empty()) views.add(label + " " + violations_to_jsonl(violations));
      const auto reference = simulate_reference(plan, anonymized_view(plan, instance.data.catalog,
                                                                       instance.data.shards, *map),
                                                instance.k);
      const auto cmp = traces_equal(kanon.trace, reference);
      if (!cmp.equal) traces.add(label + " " + cmp.describe());
    } else if (secure) {
      traces.add(label + " secure plan ran without a view");
    }
    feasible.push_back(std::move(entry));
  }

  const auto elapsed = seconds_since(start);
  std::ostringstream detail;
  detail << feasible.size() << " KAnon-feasible instances (" << infeasible << " infeasible skipped, " << with_secure
         << " with secure nodes, " << joins << " with joins, hosts";
  for (const auto& [h, n] : hosts_seen) detail << " " << h << ":" << n;
  detail << "), " << oracle.count << " mismatches over " << results_checked << " results, " << elapsed << " s";
  oracle.dump(2);
  report(2, static_cast<int>(feasible.size()) >= kTarget && oracle.count == 0 && elapsed < 120.0, detail.str());

  traces.dump(3);
  report(3, traces.count == 0 && !feasible.empty(),
         std::to_string(traces.count) + " divergences between federated traces and the simulator over " +
             std::to_string(feasible.size()) + " instances");

  // Metamorphic: same view, mutated data, same trace.
  const auto mutation_start = Clock::now();
  Problems mutations;
  int mutated = 0;
  std::map<std::string, int> kinds;
  for (const auto& entry : feasible) {
    std::mt19937_64 rng(entry.instance.seed ^ 0x6d757461u);
    const auto sql = entry.instance.query.sql();
    for (int i = 0; i < 6; ++i) {
      std::string description;
      const auto data = testing::mutate_preserving_trace(entry.instance.data, entry.c, rng, &description);
      kinds[description.substr(0, description.find(' '))]++;
      ++mutated;
      try {
        auto fed = make_local_federation(data, entry.instance.seed);
        if (!entry.map.c.empty()) fed.coordinator->install_view(entry.map);
        const auto outcome = fed.coordinator->run_query(sql, entry.instance.k, Mode::KAnon);
        const auto cmp = traces_equal(entry.trace, outcome.trace);
        if (!cmp.equal) mutations.add("seed " + std::to_string(entry.instance.seed) + " " + description + ": " + cmp.describe());
      } catch (const std::exception& e) {
        mutations.add("seed " + std::to_string(entry.instance.seed) + " " + description + " threw " + e.what());
      }
    }
  }
  const auto mutation_elapsed = seconds_since(mutation_start);
  mutations.dump(4);
  std::ostringstream mutation_detail;
  mutation_detail << mutated << " mutations (";
  for (const auto& [kind, n] : kinds) mutation_detail << (kind == kinds.begin()->first ? "" : ", ") << kind << " " << n;
  mutation_detail << "), " << mutations.count << " divergences, " << mutation_elapsed << " s";
  report(4, mutated >= 1000 && mutations.count == 0 && mutation_elapsed < 60.0, mutation_detail.str());

  return views;
}

// ---------------------------------------------------------------------------

void criterion5() {
  constexpr int n = 1000;
  const std::vector<int> ks = {5, 10, 20, 50, 100};
  const std::string sql = "SELECT r.key, s.val FROM r, s WHERE r.key = s.key";
  const auto data = gen_uniform_join(n, 7, 2);
  const auto plan = parse_query(sql, data.catalog);
  const auto c = derive_control_flow(plan, data.catalog);
  const auto histograms = collect_histograms(data.shards, data.catalog, c, data.host_count);
  int join = -1;
  for (const auto& node : plan.nodes) {
    if (node.kind == NodeKind::Join) join = node.id;
  }

  bool exact = true;
  std::vector<double> xs;
  std::vector<double> ys;
  std::ostringstream detail;
  for (const int k : ks) {
    auto fed = make_local_federation(data, 7);
    fed.coordinator->install_view(build_view(histograms, k, data.catalog, c, 7, uniform_join_groupings(n, k)));
    const auto outcome = fed.coordinator->run_query(sql, k, Mode::KAnon);
    const auto out = outcome.trace.output_tuples(join);
    exact = exact && out == static_cast<int64_t>(n) * k && outcome.result.rows.size() == static_cast<std::size_t>(n);
    xs.push_back(k);
    ys.push_back(static_cast<double>(outcome.trace.total_comparisons()));
    detail << "k=" << k << " out " << out << " cmp " << outcome.trace.total_comparisons() << "; ";
  }
  auto fed = make_local_federation(data, 7);
  const auto oblivious = fed.coordinator->run_query(sql, 5, Mode::Oblivious).trace.output_tuples(join);
  exact = exact && oblivious == static_cast<int64_t>(n) * n;

  // Least squares cmp = a + b k.
  const auto m = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  const double intercept = (sy - slope * sx) / m;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double fit = intercept + slope * xs[i];
    ss_res += (ys[i] - fit) * (ys[i] - fit);
    ss_tot += (ys[i] - sy / m) * (ys[i] - sy / m);
  }
  const double r2 = 1.0 - ss_res / ss_tot;
  const double ratio = ys.back() / ys.front();
  detail << "oblivious " << oblivious << ", R^2 " << r2 << ", cmp(100)/cmp(5) " << ratio;
  report(5, exact && r2 >= 0.99 && std::abs(ratio - 20.0) <= 2.0, detail.str());
}

// ---------------------------------------------------------------------------

// Small host splits, exhaustively checked against generate_view.
void criterion6(const Problems& random_views, std::size_t random_count) {
  const auto start = Clock::now();
  Problems problems;
  int feasible = 0;
  int infeasible = 0;
  const auto catalog = testing::random_instance(1).data.catalog;
  const std::vector<std::vector<std::string>> cs = {
      {"t0.a"}, {"t0.b"}, {"t0.a", "t0.b"}, {"t0.a", "t1.a"}, {"t0.b", "t1.a"}, {"t0.a", "t0.b", "t1.a"}};
  const std::vector<std::string> words = {"w", "x", "y", "z"};

  for (uint64_t seed = 1; seed <= 600; ++seed) {
    std::mt19937_64 rng(seed);
    const int hosts = 1 + static_cast<int>(rng() % 3);
    const int k = 2 + static_cast<int>(rng() % 3);
    const auto c = ControlFlowSet::parse(cs[rng() % cs.size()], catalog);
    const int a_values = 1 + static_cast<int>(rng() % 4);
    const int b_values = 1 + static_cast<int>(rng() % 4);
    std::vector<RelationShard> shards;
    for (const auto& relation : c.relations()) {
      const int tuples = static_cast<int>(rng() % (relation == "t0" ? 9 : 5));
      std::vector<RelationShard> mine;
      for (HostId h = 0; h < hosts; ++h) mine.push_back({relation, h, {}});
      for (int t = 0; t < tuples; ++t) {
        const auto host = static_cast<HostId>(rng() % static_cast<uint64_t>(hosts));
        mine[static_cast<std::size_t>(host)].tuples.push_back(
            {{Scalar{int64_t{t + 1}}, Scalar{words[rng() % static_cast<uint64_t>(a_values)]},
              Scalar{static_cast<int64_t>(rng() % static_cast<uint64_t>(b_values))}, Scalar{int64_t{0}}},
             false,
             host});
      }
      for (auto& shard : mine) shards.push_back(std::move(shard));
    }

    const auto label = "seed " + std::to_string(seed) + " hosts " + std::to_string(hosts) + " k " +
                       std::to_string(k) + " c " + c.to_strings().front();
    const bool brute = testing::brute_force_feasible(shards, catalog, c, k, hosts);
    brute ? ++feasible : ++infeasible;
    const auto histograms = collect_histograms(shards, catalog, c, hosts);
    try {
      const auto map = generate_view(histograms, k, catalog, c, seed);
      if (!brute) problems.add(label + ": generate_view succeeded on an infeasible split");
      const auto violations = check_view(map, shards, k, catalog);
      if (!violations.empty()) problems.add(label + ": " + violations_to_jsonl(violations));
    } catch (const ViewInfeasible& e) {
      if (brute) problems.add(label + ": " + e.what());
    } catch (const std::exception& e) {
      problems.add(label + " threw " + e.what());
    }
  }
  random_views.dump(6);
  problems.dump(6);
  std::ostringstream detail;
  detail << random_views.count << " invalid views over " << random_count << " randomized instances; "
         << feasible + infeasible << " exhaustive splits (" << feasible << " feasible, " << infeasible
         << " infeasible), " << problems.count << " disagreements, " << seconds_since(start) << " s";
  report(6, random_views.count == 0 && random_count > 0 && problems.count == 0 && infeasible > 0 && feasible > 0,
         detail.str());
}

// ---------------------------------------------------------------------------

void criterion7() {
  const auto data = gen_health(100, 3, 1.0);
  auto fed = make_local_federation(data, 3);
  auto& coordinator = *fed.coordinator;
  auto histogram_frames = [&] {
    const auto& sent = coordinator.frames_sent();
    const auto it = sent.find(FrameType::HistogramRequest);
    return it == sent.end() ? 0 : it->second;
  };
  auto view_frames = [&] {
    const auto& sent = coordinator.frames_sent();
    const auto it = sent.find(FrameType::ViewMap);
    return it == sent.end() ? 0 : it->second;
  };

  struct Step {
    std::string sql;
    int k;
    std::string decision;
    Mode executed;
  };
  const std::vector<Step> steps = {
      {"SELECT diag, COUNT(*) FROM diagnoses WHERE diag <> 'cdiff' GROUP BY diag", 5, "augment", Mode::KAnon},
      {"SELECT COUNT(*) FROM diagnoses WHERE diag = 'hd'", 5, "reuse", Mode::KAnon},
      {"SELECT COUNT(*) FROM diagnoses WHERE diag = 'hd'", 10, "merge", Mode::KAnon},
      {"SELECT year, COUNT(*) FROM diagnoses WHERE diag = 'flu' GROUP BY year", 5, "oblivious", Mode::Oblivious},
  };

  bool ok = true;
  std::ostringstream detail;
  for (const auto& step : steps) {
    const auto histograms_before = histogram_frames();
    const auto views_before = view_frames();
    std::string decision = "error";
    std::string executed;
    bool correct = false;
    try {
      const auto outcome = coordinator.run_query(step.sql, step.k, Mode::KAnon);
      decision = outcome.decision.name();
      executed = to_string(outcome.executed_mode);
      const auto plain = run_local(step.sql, data.catalog, Mode::Plain, data.shards, nullptr);
      correct = outcome.result == plain.result && outcome.executed_mode == step.executed;
    } catch (const std::exception& e) {
      std::cerr << "  [7] " << step.sql << " threw " << e.what() << "\n";
    }
    const auto new_histograms = histogram_frames() - histograms_before;
    const auto new_views = view_frames() - views_before;
    // Frame-level expectations per decision.
    bool frames = false;
    if (step.decision == "augment") frames = new_histograms > 0 && new_views > 0;
    if (step.decision == "reuse") frames = new_histograms == 0 && new_views == 0;
    if (step.decision == "merge") frames = new_views > 0;
    if (step.decision == "oblivious") frames = new_histograms == 0 && new_views == 0;
    ok = ok && decision == step.decision && correct && frames;
    detail << decision << " (k=" << step.k << ", " << executed << ", +" << new_histograms << " histogram +"
           << new_views << " view frames); ";
  }
  const auto& state = coordinator.state();
  detail << "k_system " << state.k_system;
  report(7, ok && state.k_system == 10, detail.str());
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) files[fs::relative(entry.path(), root).string()] = read_text_file(entry.path());
  }
  return files;
}

void criterion8() {
  const auto start = Clock::now();
  const auto base = fs::temp_directory_path() / ("kloak_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(base);
  const fs::path scenarios = KLOAK_SCENARIO_DIR;
  std::size_t errors = 0;
  for (const auto* run : {"a", "b"}) {
    for (const auto& row : run_suite(scenarios, base / run)) errors += !row.error.empty();
  }
  const auto a = read_tree(base / "a");
  const auto b = read_tree(base / "b");
  std::size_t traces = 0;
  std::size_t reports = 0;
  for (const auto& [name, text] : a) {
    traces += name.ends_with(".jsonl");
    reports += name.ends_with(".csv");
  }
  fs::remove_all(base);
  std::ostringstream detail;
  detail << a.size() << " files per run (" << reports << " reports, " << traces << " traces), "
         << (a == b ? "byte-identical" : "DIFFERENT") << ", " << errors << " cells with errors, " << seconds_since(start)
         << " s";
  report(8, a == b && reports > 0 && traces > 0 && errors == 0, detail.str());
}

}  // namespace

int main(int argc, char** argv) {
  // Optional criterion numbers on the command line; all by default.
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };

  auto guarded = [](int criterion, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      report(criterion, false, std::string("threw ") + e.what());
    }
  };

  if (wanted(1)) guarded(1, criterion1);
  if (wanted(2) || wanted(3) || wanted(4) || wanted(6)) {
    std::vector<Feasible> feasible;
    Problems views;
    guarded(2, [&] { views = criteria_2_3_4(feasible); });
    if (wanted(5)) guarded(5, criterion5);
    guarded(6, [&] { criterion6(views, feasible.size()); });
  } else if (wanted(5)) {
    guarded(5, criterion5);
  }
  if (wanted(7)) guarded(7, criterion7);
  if (wanted(8)) guarded(8, criterion8);
  return failures == 0 ? 0 : 1;
}
