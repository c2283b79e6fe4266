#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "netseg/volume.hpp"

namespace netseg {

/// One record of a dataset manifest. Paths are relative to the manifest directory.
struct DatasetEntry {
  std::string id;
  std::array<std::string, 4> channels;  // t1, t2, t1c, flair
  std::optional<std::string> labels;
  /// Label resolution relative to the channels (2 after extraction at upscaled resolution).
  std::size_t label_factor = 1;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct Dataset {
  Schema schema = Schema::Unified4Label;
  std::vector<DatasetEntry> entries;  // sorted by id
  nlohmann::ordered_json info = nlohmann::ordered_json::object();
};

/// {"schema": ..., "info": {...}, "records": [{"id", "t1", "t2", "t1c", "flair", "labels", "label_factor", ...}]}
Dataset load_dataset(const std::filesystem::path& manifest);
void save_dataset(const Dataset& ds, const std::filesystem::path& manifest);

/// Reads the channels and, when label_factor is 1, the labels.
MultiModalRecord load_record(const Dataset& ds, const DatasetEntry& e, const std::filesystem::path& root);
/// Reads the labels at their stored resolution.
LabelVolume load_entry_labels(const Dataset& ds, const DatasetEntry& e, const std::filesystem::path& root);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception is rethrown.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace netseg
