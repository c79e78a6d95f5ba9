#include "fig2.hpp"

#include "kloak/planner.hpp"

namespace kloak::testing {

std::string fixture_dir() { return KLOAK_FIXTURE_DIR; }

Fig2 load_fig2(int k) {
  Fig2 fig;
  const std::string dir = fixture_dir() + "/fig2";
  fig.data = load_dataset(dir);
  fig.query = read_text_file(dir + "/query.sql");
  auto plan = parse_query(fig.query, fig.data.catalog);
  fig.c = derive_control_flow(plan, fig.data.catalog);

  std::map<std::string, std::vector<std::vector<Scalar>>> groupings;
  const auto document = nlohmann::json::parse(read_text_file(dir + "/grouping.json"));
  for (const auto& [domain, groups] : document.items()) {
    for (const auto& group : groups) groupings[domain].push_back(values_from_json(group));
  }
  const auto histograms = collect_histograms(fig.data.shards, fig.data.catalog, fig.c, fig.data.host_count);
  fig.map = build_view(histograms, k, fig.data.catalog, fig.c, 42, groupings);
  return fig;
}

}  // namespace kloak::testing
