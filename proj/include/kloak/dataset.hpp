#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kloak/schema.hpp"

namespace kloak {

// On-disk federation data: <dir>/catalog.json plus <dir>/host<i>/<relation>.csv.
struct Dataset {
  Catalog catalog;
  std::vector<RelationShard> shards;
  int host_count = 1;

  std::vector<RelationShard> shards_of(HostId host) const;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// host_count < 0 means: count the host<i> directories.
Dataset load_dataset(const std::filesystem::path& dir, int host_count = -1);
std::vector<RelationShard> load_host_shards(const std::filesystem::path& dir, const Catalog& catalog, HostId host);
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);

}  // namespace kloak
