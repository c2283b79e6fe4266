#include "netseg/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "netseg/nifti.hpp"

namespace netseg {

namespace {
constexpr std::array<const char*, 4> kChannelKeys = {"t1", "t2", "t1c", "flair"};
}

Dataset load_dataset(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error(ErrorCode::Io, "cannot open dataset manifest " + manifest.string());
  Dataset ds;
  try {
    const auto j = nlohmann::json::parse(in);
    ds.schema = parse_schema(j.at("schema").get<std::string>());
    if (j.contains("info")) ds.info = nlohmann::ordered_json::parse(j["info"].dump());
    for (const auto& r : j.at("records")) {
      DatasetEntry e;
      e.id = r.at("id").get<std::string>();
      for (std::size_t c = 0; c < 4; ++c) e.channels[c] = r.at(kChannelKeys[c]).get<std::string>();
      if (r.contains("labels") && !r["labels"].is_null()) e.labels = r["labels"].get<std::string>();
      e.label_factor = r.value("label_factor", std::size_t{1});
      for (const auto& [k, v] : r.items())
        if (k != "id" && k != "labels" && k != "label_factor" &&
            std::find(kChannelKeys.begin(), kChannelKeys.end(), k) == kChannelKeys.end())
          e.extra[k] = nlohmann::ordered_json::parse(v.dump());
      ds.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, "bad dataset manifest " + manifest.string() + ": " + e.what());
  }
  std::sort(ds.entries.begin(), ds.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& manifest) {
  nlohmann::ordered_json j;
  j["schema"] = std::string(to_string(ds.schema));
  j["info"] = ds.info;
  nlohmann::ordered_json recs = nlohmann::ordered_json::array();
  for (const auto& e : ds.entries) {
    nlohmann::ordered_json r;
    r["id"] = e.id;
    for (std::size_t c = 0; c < 4; ++c) r[kChannelKeys[c]] = e.channels[c];
    r["labels"] = e.labels ? nlohmann::ordered_json(*e.labels) : nlohmann::ordered_json(nullptr);
    r["label_factor"] = e.label_factor;
    for (const auto& [k, v] : e.extra.items()) r[k] = v;
    recs.push_back(r);
  }
  j["records"] = recs;
  std::ofstream out(manifest, std::ios::binary);
  out << j.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::Io, "cannot write " + manifest.string());
}

MultiModalRecord load_record(const Dataset& ds, const DatasetEntry& e, const std::filesystem::path& root) {
  MultiModalRecord r;
  r.record_id = e.id;
  for (std::size_t c = 0; c < 4; ++c) r.channels[c] = read_volume(root / e.channels[c]);
  if (e.labels && e.label_factor == 1) r.labels = load_entry_labels(ds, e, root);
  r.validate();
  return r;
}

LabelVolume load_entry_labels(const Dataset& ds, const DatasetEntry& e, const std::filesystem::path& root) {
  if (!e.labels) throw Error(ErrorCode::InvalidArgument, "record " + e.id + " has no labels");
  return read_labels(root / *e.labels, ds.schema);
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (first) std::rethrow_exception(first);
}

}  // namespace netseg
