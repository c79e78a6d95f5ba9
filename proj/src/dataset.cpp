#include "kloak/dataset.hpp"

#include <fstream>
#include <sstream>

#include "kloak/errors.hpp"

namespace kloak {

namespace fs = std::filesystem;

std::vector<RelationShard> Dataset::shards_of(HostId host) const {
  std::vector<RelationShard> result;
  for (const auto& shard : shards) {
    if (shard.owner == host) result.push_back(shard);
  }
  return result;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

std::vector<RelationShard> load_host_shards(const fs::path& dir, const Catalog& catalog, HostId host) {
  std::vector<RelationShard> shards;
  const auto host_dir = dir / ("host" + std::to_string(host));
  for (const auto& relation : catalog.relations()) {
    const auto file = host_dir / (relation.name + ".csv");
    RelationShard shard{relation.name, host, {}};
    // A missing file is an empty shard.
    if (fs::exists(file)) shard = read_shard_csv(read_text_file(file), relation, host);
    validate_shard(shard, catalog);
    shards.push_back(std::move(shard));
  }
  return shards;
}

Dataset load_dataset(const fs::path& dir, int host_count) {
  Dataset dataset;
  dataset.catalog = load_catalog(read_text_file(dir / "catalog.json"));
  if (host_count < 0) {
    host_count = 0;
    while (fs::is_directory(dir / ("host" + std::to_string(host_count)))) ++host_count;
    if (host_count == 0) throw ValidationError("no host directories under " + dir.string());
  }
  dataset.host_count = host_count;
  for (HostId host = 0; host < host_count; ++host) {
    auto shards = load_host_shards(dir, dataset.catalog, host);
    dataset.shards.insert(dataset.shards.end(), shards.begin(), shards.end());
  }
  return dataset;
}

void write_dataset(const fs::path& dir, const Dataset& dataset) {
  write_text_file(dir / "catalog.json", catalog_to_json(dataset.catalog).dump(2) + "\n");
  for (HostId host = 0; host < dataset.host_count; ++host) {
    fs::create_directories(dir / ("host" + std::to_string(host)));
  }
  for (const auto& shard : dataset.shards) {
    const auto& relation = dataset.catalog.relation(shard.relation);
    write_text_file(dir / ("host" + std::to_string(shard.owner)) / (shard.relation + ".csv"),
                    write_shard_csv(shard, relation));
  }
}

}  // namespace kloak
