#include "netseg/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "netseg/dataset.hpp"
#include "netseg/error.hpp"
#include "netseg/extraction.hpp"
#include "netseg/labels.hpp"
#include "netseg/metrics.hpp"
#include "netseg/morphology.hpp"
#include "netseg/nifti.hpp"
#include "netseg/nn/network.hpp"
#include "netseg/nn/train.hpp"
#include "netseg/phantom.hpp"
#include "netseg/stats.hpp"

namespace netseg::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

const char* const kChannelNames[4] = {"t1", "t2", "t1c", "flair"};

struct Common {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string config;
  std::string out;
  std::string format = "json";
  bool dry_run = false;
};

void add_common(CLI::App* sub, Common& c, bool out_required) {
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  sub->add_option("--jobs", c.jobs, "Record-level worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--config", c.config, "JSON file with option values; flags on the command line win");
  auto* out = sub->add_option("--out", c.out, "Output directory");
  if (out_required) out->required();
  sub->add_option("--format", c.format, "Summary format on stdout")
      ->capture_default_str()
      ->check(CLI::IsMember({"json", "csv"}));
  sub->add_flag("--dry-run", c.dry_run, "Validate the configuration and exit");
}

// ---------------------------------------------------------------------------
// small helpers

struct Log {
  std::ostream& err;
  void operator()(const std::string& msg) const { err << "[netseg] " << msg << "\n"; }
};

Shape3 to_shape(const std::vector<std::size_t>& v, const char* what) {
  if (v.size() != 3) throw Error(ErrorCode::InvalidArgument, std::string(what) + " needs three extents");
  return Shape3{v[0], v[1], v[2]};
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
}

nlohmann::json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, "bad JSON in " + p.string() + ": " + e.what());
  }
}

/// Accepts inline JSON or a path to a JSON file.
nlohmann::json json_arg(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\n");
  if (first != std::string::npos && (s[first] == '[' || s[first] == '{')) {
    try {
      return nlohmann::json::parse(s);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, std::string("bad inline JSON: ") + e.what());
    }
  }
  return read_json_file(s);
}

fs::path ensure_dir(const std::string& out) {
  const fs::path p(out);
  fs::create_directories(p);
  return p;
}

std::string relative_to(const fs::path& target, const fs::path& base) {
  return fs::weakly_canonical(fs::absolute(target)).lexically_relative(fs::weakly_canonical(fs::absolute(base))).generic_string();
}

std::string num(double x) {
  std::ostringstream ss;
  ss.precision(17);
  ss << x;
  return ss.str();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<std::string> segment_names(const std::vector<Segment>& segs) {
  std::vector<std::string> out;
  for (auto s : segs) out.emplace_back(to_string(s));
  return out;
}

/// Labels re-expressed in `target`. Unified labels can be fused into any legacy schema.
LabelVolume labels_in(const LabelVolume& labels, Schema target) {
  if (labels.schema() == target) return labels;
  if (labels.schema() == Schema::Unified4Label) return fuse_to_schema(labels, target);
  throw Error(ErrorCode::InvalidArgument, "cannot convert " + std::string(to_string(labels.schema())) + " labels to " +
                                               std::string(to_string(target)));
}

struct Selection {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
};

/// Holdout = the last `holdout` records by id. Train = the rest, optionally restricted to `subset`.
Selection select_records(const Dataset& ds, const std::optional<std::vector<std::string>>& subset, std::size_t holdout) {
  const std::size_t n = ds.entries.size();
  if (holdout >= n && n > 0)
    throw Error(ErrorCode::InvalidArgument, "holdout " + std::to_string(holdout) + " leaves no training records");
  Selection s;
  std::set<std::string> keep;
  if (subset) {
    keep.insert(subset->begin(), subset->end());
    for (const auto& id : keep) {
      const bool known = std::any_of(ds.entries.begin(), ds.entries.end(), [&](const auto& e) { return e.id == id; });
      if (!known) throw Error(ErrorCode::InvalidArgument, "unknown record id " + id);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (i + holdout >= n)
      s.holdout.push_back(i);
    else if (!subset || keep.count(ds.entries[i].id))
      s.train.push_back(i);
  }
  return s;
}

std::optional<std::vector<std::string>> read_subset(const std::string& ids, const std::string& subset_file) {
  if (!ids.empty() && !subset_file.empty())
    throw Error(ErrorCode::InvalidArgument, "--ids and --subset are exclusive");
  if (!ids.empty()) return split_list(ids);
  if (subset_file.empty()) return std::nullopt;
  const auto j = read_json_file(subset_file);
  try {
    if (j.is_array()) return j.get<std::vector<std::string>>();
    return j.at("training_subset").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "subset file needs a list or training_subset: " + std::string(e.what()));
  }
}

nn::Network load_model(const std::string& stem, Schema& schema, std::vector<Segment>& segments) {
  nlohmann::json meta;
  nn::Network net = nn::load_checkpoint(stem, &meta);
  try {
    schema = parse_schema(meta.at("schema").get<std::string>());
    segments.clear();
    for (const auto& s : meta.at("segments")) segments.push_back(parse_segment(s.get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, "checkpoint metadata lacks schema/segments: " + std::string(e.what()));
  }
  if (segments.size() != net.config().out_segments)
    throw Error(ErrorCode::ModelSegmentMismatch, "checkpoint lists " + std::to_string(segments.size()) +
                                                     " segments for " + std::to_string(net.config().out_segments) +
                                                     " outputs");
  return net;
}

void emit(std::ostream& out, const std::string& format, const ojson& json, const std::string& csv) {
  if (format == "csv")
    out << csv;
  else
    out << json.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// phantom

struct PhantomArgs {
  std::size_t n = 20;
  std::vector<std::size_t> shape{32, 64, 64};
  double gamma_shape = 2.0;
  double gamma_scale = 1500.0;
  double center_jitter = 0.05;
  double gain_jitter = 0.05;
  std::string spec;
  std::string schema = "unified";
  std::string datatype = "float32";
};

int cmd_phantom(const Common& c, const PhantomArgs& a, std::ostream& out, const Log& log) {
  CohortSpec cs;
  if (!a.spec.empty()) cs.base = phantom_spec_from_json(json_arg(a.spec));
  cs.n = a.n;
  cs.base.shape = to_shape(a.shape, "--shape");
  cs.base.gain_jitter = a.gain_jitter;
  cs.gamma_shape = a.gamma_shape;
  cs.gamma_scale = a.gamma_scale;
  cs.center_jitter = a.center_jitter;
  cs.seed = c.seed;
  const Schema schema = parse_schema(a.schema);
  const DataType dt = parse_datatype(a.datatype);
  cs.base.validate();
  if (cs.n == 0) throw Error(ErrorCode::InvalidSpec, "--n must be positive");
  const auto specs = cohort_specs(cs);
  if (c.dry_run) {
    out << to_json(cs).dump(2) << "\n";
    return kExitOk;
  }
  const fs::path root = ensure_dir(c.out);
  fs::create_directories(root / "records");
  Dataset ds;
  ds.schema = schema;
  ds.info["generator"] = "phantom";
  ds.info["cohort"] = to_json(cs);
  ds.entries.resize(specs.size());
  parallel_for(specs.size(), c.jobs, [&](std::size_t i) {
    const std::string id = cohort_record_id(i);
    const MultiModalRecord rec = generate(specs[i], id);
    DatasetEntry& e = ds.entries[i];
    e.id = id;
    for (std::size_t ch = 0; ch < 4; ++ch) {
      e.channels[ch] = "records/" + id + "_" + kChannelNames[ch] + ".nii";
      write_volume(rec.channels[ch], root / e.channels[ch], dt);
    }
    const LabelVolume lab = labels_in(*rec.labels, schema);
    e.labels = "records/" + id + "_seg.nii";
    write_labels(lab, root / *e.labels);
    ojson counts;
    for (const auto& [l, n] : count_label_voxels(*rec.labels)) counts[std::to_string(l)] = n;
    e.extra["true_label_counts"] = counts;
    e.extra["seed"] = specs[i].seed;
    e.extra["target_net_voxels"] = specs[i].target_net_voxels ? ojson(*specs[i].target_net_voxels) : ojson(nullptr);
  });
  save_dataset(ds, root / "manifest.json");
  log("wrote " + std::to_string(ds.entries.size()) + " phantom records to " + root.string());
  ojson summary;
  summary["manifest"] = "manifest.json";
  summary["records"] = ds.entries.size();
  std::string csv = "record_id,net_voxels\n";
  for (const auto& e : ds.entries) csv += e.id + "," + e.extra["true_label_counts"]["3"].dump() + "\n";
  emit(out, c.format, summary, csv);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// compose

struct ComposeArgs {
  std::string labels;
  std::string schema = "unified";
  std::string to;
};

int cmd_compose(const Common& c, const ComposeArgs& a, std::ostream& out, const Log& log) {
  const Schema schema = parse_schema(a.schema);
  std::optional<Schema> to;
  if (!a.to.empty()) to = parse_schema(a.to);
  if (c.dry_run) return kExitOk;
  const LabelVolume labels = read_labels(a.labels, schema);
  const SegmentMaskSet masks = compose_segments(labels);
  ojson summary;
  summary["schema"] = std::string(to_string(schema));
  std::string csv = "segment,voxels\n";
  std::optional<fs::path> root;
  if (!c.out.empty()) root = ensure_dir(c.out);
  for (const auto& [seg, m] : masks.masks) {
    const std::size_t n = count_nonzero(m);
    summary["segments"][std::string(to_string(seg))] = n;
    csv += std::string(to_string(seg)) + "," + std::to_string(n) + "\n";
    if (root) write_mask(m, *root / (std::string(to_string(seg)) + ".nii"));
  }
  if (to) {
    const LabelVolume conv = labels_in(labels, *to);
    if (!root) throw Error(ErrorCode::InvalidArgument, "--to needs --out");
    write_labels(conv, *root / ("labels_" + std::string(to_string(*to)) + ".nii"));
  }
  if (root) {
    write_text(*root / "segments.json", summary.dump(2) + "\n");
    log("wrote segment masks to " + root->string());
  }
  emit(out, c.format, summary, csv);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// extract

struct ExtractArgs {
  std::string labels;
  std::string labels_schema = "brats2018";
  std::string tc;
  std::string et;
  std::string id = "record";
  std::string dataset;
  std::string model;
  bool oracle = false;
  std::string subtract_mode = "minus_ncr_pred";
  std::string filters;
  double threshold = 0.5;
  bool literal_et = false;
};

ExtractionConfig extraction_config(const ExtractArgs& a) {
  ExtractionConfig cfg;
  cfg.subtract_mode = parse_subtract_mode(a.subtract_mode);
  if (!a.filters.empty()) cfg.filters = filters_from_json(json_arg(a.filters));
  cfg.prediction_threshold = a.threshold;
  cfg.reassign_predicted_et = a.literal_et;
  cfg.validate();
  return cfg;
}

int extract_single(const Common& c, const ExtractArgs& a, const ExtractionConfig& cfg, std::ostream& out,
                   const Log& log) {
  if (a.labels.empty() || a.tc.empty() || a.et.empty())
    throw Error(ErrorCode::InvalidArgument, "single-record extraction needs --labels, --tc and --et");
  if (c.out.empty()) throw Error(ErrorCode::InvalidArgument, "--out is required");
  const Schema schema = parse_schema(a.labels_schema);
  if (c.dry_run) return kExitOk;
  const LabelVolume labels = labels_in(read_labels(a.labels, schema), Schema::Brats2018);
  const Mask tc = threshold(read_volume(a.tc), cfg.prediction_threshold);
  const Mask et = threshold(read_volume(a.et), cfg.prediction_threshold);
  const ExtractionResult r = extract_net(labels, tc, et, cfg, a.id);
  const fs::path root = ensure_dir(c.out);
  write_labels(r.relabeled, root / (a.id + "_seg.nii"));
  write_mask(r.net_mask, root / (a.id + "_net.nii"));
  ojson report;
  report["config"] = to_json(cfg);
  report["result"] = to_json(r, cfg);
  write_text(root / "extraction.json", report.dump(2) + "\n");
  log("extracted " + std::to_string(r.net_voxels) + " NET voxels for " + a.id);
  emit(out, c.format, report["result"],
       "record_id,raw_net_voxels,net_voxels\n" + a.id + "," + std::to_string(r.raw_net_voxels) + "," +
           std::to_string(r.net_voxels) + "\n");
  return kExitOk;
}

std::vector<MultiModalRecord> load_records(const Dataset& ds, const fs::path& root, std::size_t jobs) {
  std::vector<MultiModalRecord> recs(ds.entries.size());
  parallel_for(ds.entries.size(), jobs, [&](std::size_t i) { recs[i] = load_record(ds, ds.entries[i], root); });
  return recs;
}

int extract_dataset(const Common& c, const ExtractArgs& a, const ExtractionConfig& cfg, std::ostream& out,
                    const Log& log) {
  if (a.model.empty() == !a.oracle) throw Error(ErrorCode::InvalidArgument, "dataset extraction needs --model or --oracle");
  if (c.out.empty()) throw Error(ErrorCode::InvalidArgument, "--out is required");
  const fs::path manifest(a.dataset);
  const Dataset ds = load_dataset(manifest);
  const fs::path src_root = manifest.parent_path();
  std::unique_ptr<nn::Network> net;
  std::unique_ptr<SegmentPredictor> model;
  if (!a.model.empty()) {
    Schema ms;
    std::vector<Segment> segs;
    net = std::make_unique<nn::Network>(load_model(a.model, ms, segs));
    model = std::make_unique<NetworkPredictor>(*net, segs);
  }
  if (c.dry_run) return kExitOk;
  for (const auto& e : ds.entries)
    if (e.label_factor != 1) throw Error(ErrorCode::InvalidArgument, "extraction needs labels at record resolution");
  std::vector<MultiModalRecord> recs = load_records(ds, src_root, c.jobs);
  if (a.oracle) {
    if (ds.schema != Schema::Unified4Label)
      throw Error(ErrorCode::InvalidArgument, "--oracle needs a dataset with unified labels");
    std::map<std::string, LabelVolume> truth;
    for (const auto& r : recs) truth.emplace(r.record_id, *r.labels);
    model = std::make_unique<OraclePredictor>(std::move(truth),
                                              std::vector<Segment>{Segment::ET, Segment::TC, Segment::WT});
  }
  for (auto& r : recs) r.labels = labels_in(*r.labels, Schema::Brats2018);
  const auto t0 = std::chrono::steady_clock::now();
  const DatasetExtraction ex = run_dataset_extraction(recs, *model, cfg, c.seed);
  log("extraction took " +
      std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");

  const fs::path root = ensure_dir(c.out);
  fs::create_directories(root / "records");
  Dataset res;
  res.schema = Schema::Unified4Label;
  res.info["source"] = relative_to(manifest, root);
  res.info["extraction"] = to_json(cfg);
  ojson report;
  report["config"] = to_json(cfg);
  report["records"] = ojson::array();
  std::string csv = "record_id,raw_net_voxels,net_voxels,group\n";
  for (const auto& r : ex.results) {
    const auto it = std::find_if(ds.entries.begin(), ds.entries.end(), [&](const auto& e) { return e.id == r.record_id; });
    DatasetEntry e;
    e.id = r.record_id;
    for (std::size_t ch = 0; ch < 4; ++ch) e.channels[ch] = relative_to(src_root / it->channels[ch], root);
    e.labels = "records/" + r.record_id + "_seg.nii";
    e.label_factor = r.relabeled.shape().d / recs.front().shape().d;
    e.extra["net_voxels"] = r.net_voxels;
    e.extra["group"] = std::string(to_string(*r.group));
    write_labels(r.relabeled, root / *e.labels);
    res.entries.push_back(std::move(e));
    report["records"].push_back(to_json(r, cfg));
    csv += r.record_id + "," + std::to_string(r.raw_net_voxels) + "," + std::to_string(r.net_voxels) + "," +
           std::string(to_string(*r.group)) + "\n";
  }
  ojson errors = ojson::object();
  for (const auto& [id, msg] : ex.errors) errors[id] = msg;
  report["errors"] = errors;
  report["partition"] = to_json(ex.partition.fit);
  report["training_subset"] = ex.training_subset;
  save_dataset(res, root / "manifest.json");
  write_text(root / "extraction.json", report.dump(2) + "\n");
  write_text(root / "volumes.csv", csv);
  log("extracted NET for " + std::to_string(ex.results.size()) + " records, " + std::to_string(ex.errors.size()) +
      " failed, training subset " + std::to_string(ex.training_subset.size()));
  ojson summary;
  summary["records"] = ex.results.size();
  summary["errors"] = errors;
  summary["training_subset"] = ex.training_subset;
  emit(out, c.format, summary, csv);
  if (ex.results.empty()) throw Error(ErrorCode::EmptyDataset, "no record could be extracted");
  return kExitOk;
}

int cmd_extract(const Common& c, const ExtractArgs& a, std::ostream& out, const Log& log) {
  const ExtractionConfig cfg = extraction_config(a);
  if (!a.dataset.empty()) return extract_dataset(c, a, cfg, out, log);
  return extract_single(c, a, cfg, out, log);
}

// ---------------------------------------------------------------------------
// train

struct NetArgs {
  std::size_t levels = 4;
  std::size_t base_filters = 8;
  std::string block = "preactivation";
  bool no_upscale = false;
  double dropout = 0.2;
  std::size_t norm_groups = 8;
  std::size_t head_filters = 0;
};

void add_net_options(CLI::App* sub, NetArgs& n) {
  sub->add_option("--levels", n.levels, "Resolution levels")->capture_default_str();
  sub->add_option("--base-filters", n.base_filters, "Filters at the first level")->capture_default_str();
  sub->add_option("--block", n.block, "Block: plain, residual, residual_norm, preactivation")->capture_default_str();
  sub->add_flag("--no-upscale", n.no_upscale, "Output at input resolution");
  sub->add_option("--dropout", n.dropout, "Spatial dropout rate")->capture_default_str();
  sub->add_option("--norm-groups", n.norm_groups, "Group-norm groups")->capture_default_str();
  sub->add_option("--head-filters", n.head_filters, "Upscaling head width (0: half the base)")->capture_default_str();
}

struct TrainArgs {
  std::string dataset;
  std::string target_schema;
  std::string ids;
  std::string subset;
  std::size_t holdout = 0;
  NetArgs net;
  std::size_t epochs = 30;
  double lr = 1e-4;
  double decay = 0.05;
  std::size_t batch = 1;
  std::vector<std::size_t> patch;
  std::size_t patches_per_sample = 1;
  double foreground_fraction = 0.7;
  std::string monitor;
  double min_delta = 0.005;
  std::size_t patience = 10;
};

int cmd_train(const Common& c, const TrainArgs& a, std::ostream& out, const Log& log) {
  const fs::path manifest(a.dataset);
  const Dataset ds = load_dataset(manifest);
  const Schema target = a.target_schema.empty() ? ds.schema : parse_schema(a.target_schema);
  const auto segs = schema_segments(target);
  nn::NetworkConfig nc;
  nc.levels = a.net.levels;
  nc.base_filters = a.net.base_filters;
  nc.block_kind = nn::parse_block_kind(a.net.block);
  nc.upscaling_head = !a.net.no_upscale;
  nc.dropout_rate = a.net.dropout;
  nc.norm_groups = a.net.norm_groups;
  nc.head_filters = a.net.head_filters;
  nc.out_segments = segs.size();
  nc.init_seed = c.seed;
  nc.validate();
  nn::TrainConfig tc;
  tc.lr0 = a.lr;
  tc.decay_per_epoch = a.decay;
  tc.batch_size = a.batch;
  tc.epochs = a.epochs;
  tc.seed = c.seed;
  if (!a.patch.empty()) tc.patch = to_shape(a.patch, "--patch");
  tc.patches_per_sample = a.patches_per_sample;
  tc.foreground_fraction = a.foreground_fraction;
  if (a.patience > 0) {
    nn::EarlyStopConfig es;
    es.min_delta = a.min_delta;
    es.patience = a.patience;
    if (!a.monitor.empty()) {
      const Segment m = parse_segment(a.monitor);
      const auto it = std::find(segs.begin(), segs.end(), m);
      if (it == segs.end()) throw Error(ErrorCode::InvalidArgument, "monitored segment " + a.monitor + " is not trained");
      es.monitor = static_cast<std::size_t>(it - segs.begin());
    }
    tc.early_stop = es;
  }
  const Selection sel = select_records(ds, read_subset(a.ids, a.subset), a.holdout);
  if (sel.train.empty()) throw Error(ErrorCode::EmptyDataset, "no training records selected");
  const std::size_t factor = nc.upscaling_head ? 2 : 1;
  if (c.dry_run) {
    ojson j;
    j["network"] = nn::to_json(nc);
    j["parameters"] = nn::count_parameters(nc);
    j["train_records"] = sel.train.size();
    j["holdout_records"] = sel.holdout.size();
    out << j.dump(2) << "\n";
    return kExitOk;
  }
  const fs::path src_root = manifest.parent_path();
  auto load_samples = [&](const std::vector<std::size_t>& idx) {
    std::vector<nn::Sample> samples(idx.size());
    parallel_for(idx.size(), c.jobs, [&](std::size_t i) {
      const DatasetEntry& e = ds.entries[idx[i]];
      MultiModalRecord rec = load_record(ds, e, src_root);
      const LabelVolume lab = labels_in(load_entry_labels(ds, e, src_root), target);
      samples[i] = make_sample(rec, segs, factor, &lab);
    });
    return samples;
  };
  const auto train_samples = load_samples(sel.train);
  const auto val_samples = load_samples(sel.holdout);
  nn::Network net(nc);
  log("training " + std::to_string(net.parameter_count()) + " parameters on " + std::to_string(train_samples.size()) +
      " records, validating on " + std::to_string(val_samples.size()));
  const auto t0 = std::chrono::steady_clock::now();
  const nn::TrainLog tl =
      nn::train(net, train_samples, tc, val_samples.empty() ? nullptr : &val_samples, segment_names(segs));
  log("training took " + std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) +
      " s over " + std::to_string(tl.epochs.size()) + " epochs");
  const fs::path root = ensure_dir(c.out);
  ojson meta;
  meta["schema"] = std::string(to_string(target));
  meta["segments"] = segment_names(segs);
  std::vector<std::string> train_ids, holdout_ids;
  for (auto i : sel.train) train_ids.push_back(ds.entries[i].id);
  for (auto i : sel.holdout) holdout_ids.push_back(ds.entries[i].id);
  meta["train_ids"] = train_ids;
  meta["holdout_ids"] = holdout_ids;
  meta["epochs_run"] = tl.epochs.size();
  meta["stopped_early"] = tl.stopped_early;
  nn::save_checkpoint(net, (root / "model").string(), meta);
  write_text(root / "trainlog.csv", tl.to_csv());
  ojson summary;
  summary["model"] = "model";
  summary["epochs_run"] = tl.epochs.size();
  summary["stopped_early"] = tl.stopped_early;
  if (!tl.epochs.empty()) {
    const auto& last = tl.epochs.back();
    summary["final_loss"] = last.loss;
    for (std::size_t s = 0; s < segs.size() && s < last.dice.size(); ++s)
      summary["final_dice"][std::string(to_string(segs[s]))] = last.dice[s];
  }
  emit(out, c.format, summary, tl.to_csv());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string schema = "unified";
  std::string dataset;
  std::string model;
  std::string ids;
  std::string subset;
  std::size_t holdout = 0;
  double threshold = 0.5;
};

ojson mean_scores(const std::vector<MetricReport>& reports) {
  std::map<Segment, std::pair<double, std::size_t>> acc;
  double mean = 0.0;
  for (const auto& r : reports) {
    for (const auto& [seg, s] : r.per_segment) {
      acc[seg].first += s.dice;
      ++acc[seg].second;
    }
    mean += r.mean_dice();
  }
  ojson j;
  for (const auto& [seg, v] : acc) j["dice"][std::string(to_string(seg))] = v.first / static_cast<double>(v.second);
  j["mean_dice"] = reports.empty() ? 0.0 : mean / static_cast<double>(reports.size());
  j["records"] = reports.size();
  return j;
}

int cmd_eval(const Common& c, const EvalArgs& a, std::ostream& out, const Log& log) {
  std::vector<MetricReport> reports;
  if (a.dataset.empty()) {
    if (a.pred.empty() || a.gt.empty()) throw Error(ErrorCode::InvalidArgument, "eval needs --pred and --gt or --dataset");
    const Schema schema = parse_schema(a.schema);
    if (c.dry_run) return kExitOk;
    const LabelVolume pred = read_labels(a.pred, schema);
    const LabelVolume gt = read_labels(a.gt, schema);
    reports.push_back(evaluate_segments(compose_segments(pred), compose_segments(gt), gt.spacing(),
                                        fs::path(a.pred).stem().string()));
  } else {
    if (a.model.empty()) throw Error(ErrorCode::InvalidArgument, "dataset evaluation needs --model");
    const fs::path manifest(a.dataset);
    const Dataset ds = load_dataset(manifest);
    Schema ms;
    std::vector<Segment> segs;
    nn::Network net = load_model(a.model, ms, segs);
    const auto subset = read_subset(a.ids, a.subset);
    std::vector<std::size_t> idx;
    if (a.holdout > 0) {
      idx = select_records(ds, std::nullopt, a.holdout).holdout;
    } else {
      for (std::size_t i = 0; i < ds.entries.size(); ++i)
        if (!subset || std::count(subset->begin(), subset->end(), ds.entries[i].id)) idx.push_back(i);
    }
    if (idx.empty()) throw Error(ErrorCode::EmptyDataset, "no records selected for evaluation");
    if (c.dry_run) return kExitOk;
    const fs::path src_root = manifest.parent_path();
    reports.resize(idx.size());
    parallel_for(idx.size(), c.jobs, [&](std::size_t i) {
      const DatasetEntry& e = ds.entries[idx[i]];
      const MultiModalRecord rec = load_record(ds, e, src_root);
      NetworkPredictor model(net, segs);
      const std::size_t f = model.resolution_factor();
      LabelVolume gt = labels_in(load_entry_labels(ds, e, src_root), ms);
      if (e.label_factor != f) {
        if (e.label_factor != 1)
          throw Error(ErrorCode::ShapeMismatch, "labels of " + e.id + " are at factor " +
                                                    std::to_string(e.label_factor) + ", model predicts at " +
                                                    std::to_string(f));
        gt = upscale_repeat(gt, f);
      }
      const SegmentMaskSet pred = threshold_predictions(model.predict(rec), a.threshold, f);
      SegmentMaskSet truth = compose_segments(gt);
      truth.resolution_factor = f;
      reports[i] = evaluate_segments(pred, truth, gt.spacing(), e.id);
    });
  }
  ojson j;
  j["summary"] = mean_scores(reports);
  j["records"] = ojson::array();
  for (const auto& r : reports) j["records"].push_back(to_json(r));
  const std::string csv = to_csv(reports);
  if (!c.out.empty()) {
    const fs::path root = ensure_dir(c.out);
    write_text(root / "metrics.csv", csv);
    write_text(root / "metrics.json", j.dump(2) + "\n");
    log("wrote metrics for " + std::to_string(reports.size()) + " records to " + root.string());
  }
  emit(out, c.format, j, csv);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// stats

struct StatsArgs {
  std::string volumes;
  std::string dataset;
  std::size_t bins = 30;
  double alpha = 0.05;
};

std::map<std::string, std::size_t> read_volumes(const fs::path& p) {
  std::map<std::string, std::size_t> v;
  if (p.extension() == ".json") {
    const auto j = read_json_file(p);
    try {
      for (const auto& r : j.at("records")) v[r.at("record_id").get<std::string>()] = r.at("net_voxels").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Io, "volume report needs records[].record_id/net_voxels: " + std::string(e.what()));
    }
    return v;
  }
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + p.string());
  std::string line;
  std::getline(in, line);  // header: record_id,<volume column>...
  for (std::size_t row = 2; std::getline(in, line); ++row) {
    if (line.empty()) continue;
    const auto cells = split_list(line);
    if (cells.size() < 2) throw Error(ErrorCode::Io, p.string() + ":" + std::to_string(row) + ": expected id,volume");
    try {
      v[cells[0]] = std::stoull(cells.size() >= 3 ? cells[2] : cells[1]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::Io, p.string() + ":" + std::to_string(row) + ": bad volume");
    }
  }
  return v;
}

int cmd_stats(const Common& c, const StatsArgs& a, std::ostream& out, const Log& log) {
  if (a.volumes.empty() && a.dataset.empty())
    throw Error(ErrorCode::InvalidArgument, "stats needs --volumes and/or --dataset");
  if (c.dry_run) return kExitOk;
  ojson j;
  std::string csv;
  std::optional<Dataset> ds;
  std::vector<MultiModalRecord> recs;
  if (!a.dataset.empty()) {
    ds = load_dataset(a.dataset);
    recs = load_records(*ds, fs::path(a.dataset).parent_path(), c.jobs);
  }
  std::map<std::string, std::size_t> volumes;
  if (!a.volumes.empty()) {
    volumes = read_volumes(a.volumes);
  } else if (ds && ds->schema == Schema::Unified4Label) {
    for (const auto& r : recs) volumes[r.record_id] = count_label_voxels(*r.labels)[3];
  }
  if (!volumes.empty()) {
    const VolumePartition part = partition_by_volume(volumes, c.seed);
    ojson groups;
    for (const auto& [id, g] : part.groups) groups[id] = std::string(to_string(g));
    j["partition"]["groups"] = groups;
    j["partition"]["fit"] = to_json(part.fit);
    std::vector<double> positive;
    for (const auto& [id, v] : volumes)
      if (v > 0) positive.push_back(static_cast<double>(v));
    if (positive.size() >= 2) {
      const GammaFit g = fit_gamma(positive);
      j["gamma"]["fit"] = to_json(g);
      const KsResult ks = ks_test_gamma(positive, g.shape_k, g.scale_theta);
      j["gamma"]["ks_statistic"] = ks.statistic;
      j["gamma"]["ks_p_value"] = ks.p_value;
      j["gamma"]["zero_volume_records"] = volumes.size() - positive.size();
      csv = gamma_histogram_csv(positive, g, a.bins);
    }
  }
  if (ds) {
    if (ds->schema != Schema::Unified4Label)
      throw Error(ErrorCode::InvalidArgument, "intensity analysis needs unified labels");
    for (const auto& e : ds->entries)
      if (e.label_factor != 1) throw Error(ErrorCode::InvalidArgument, "intensity analysis needs labels at record resolution");
    const RegionIntensities ri = intensity_by_region(recs);
    j["intensities"] = ojson::array();
    for (const auto& m : analyze_intensities(ri, a.alpha)) j["intensities"].push_back(to_json(m));
  }
  if (!c.out.empty()) {
    const fs::path root = ensure_dir(c.out);
    write_text(root / "stats.json", j.dump(2) + "\n");
    if (!csv.empty()) write_text(root / "gamma_hist.csv", csv);
    log("wrote statistics to " + root.string());
  }
  emit(out, c.format, j, csv);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// refine

struct RefineArgs {
  std::string dataset;
  std::string model;
  std::string filters;
  double threshold = 0.5;
};

int cmd_refine(const Common& c, const RefineArgs& a, std::ostream& out, const Log& log) {
  if (c.out.empty()) throw Error(ErrorCode::InvalidArgument, "--out is required");
  const fs::path manifest(a.dataset);
  const Dataset ds = load_dataset(manifest);
  Schema ms;
  std::vector<Segment> segs;
  nn::Network net = load_model(a.model, ms, segs);
  ExtractionConfig cfg;
  if (!a.filters.empty()) cfg.filters = filters_from_json(json_arg(a.filters));
  cfg.prediction_threshold = a.threshold;
  cfg.validate();
  if (c.dry_run) return kExitOk;
  std::vector<MultiModalRecord> recs = load_records(ds, manifest.parent_path(), c.jobs);
  NetworkPredictor model(net, segs);
  std::vector<RefineReport> rep;
  const auto refined = refine_dataset(recs, model, cfg, &rep);
  const fs::path root = ensure_dir(c.out);
  fs::create_directories(root / "records");
  Dataset res;
  res.schema = Schema::Unified4Label;
  res.info["source"] = relative_to(manifest, root);
  std::string csv = "record_id,net_before,net_after\n";
  for (std::size_t i = 0; i < refined.size(); ++i) {
    const auto& r = refined[i];
    DatasetEntry e;
    e.id = r.record_id;
    for (std::size_t ch = 0; ch < 4; ++ch) {
      e.channels[ch] = "records/" + r.record_id + "_" + kChannelNames[ch] + ".nii";
      write_volume(r.channels[ch], root / e.channels[ch]);
    }
    e.labels = "records/" + r.record_id + "_seg.nii";
    write_labels(*r.labels, root / *e.labels);
    e.extra["net_voxels"] = rep[i].net_after;
    res.entries.push_back(std::move(e));
    csv += rep[i].record_id + "," + std::to_string(rep[i].net_before) + "," + std::to_string(rep[i].net_after) + "\n";
  }
  save_dataset(res, root / "manifest.json");
  write_text(root / "refine.csv", csv);
  log("refined " + std::to_string(refined.size()) + " records");
  ojson summary;
  summary["records"] = refined.size();
  emit(out, c.format, summary, csv);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// pipeline

struct PipelineArgs {
  std::size_t n = 20;
  std::vector<std::size_t> shape{32, 64, 64};
  double gain_jitter = 0.05;
  std::size_t holdout = 4;
  NetArgs net{3, 8, "preactivation", false, 0.1, 4, 0};
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::vector<std::size_t> patch{16, 32, 32};
  std::size_t patches_per_sample = 2;
  // the medium-volume subset is roughly half the cohort
  std::size_t unified_patches_per_sample = 5;
};

int cmd_pipeline(const Common& c, const PipelineArgs& a, std::ostream& out, std::ostream& err, const Log& log) {
  const fs::path root(c.out);
  const std::string seed = std::to_string(c.seed);
  const std::string jobs = std::to_string(c.jobs);
  auto dims = [](const std::vector<std::size_t>& v) {
    std::vector<std::string> s;
    for (auto x : v) s.push_back(std::to_string(x));
    return s;
  };
  auto net_flags = [&](std::size_t patches_per_sample) {
    std::vector<std::string> f = {"--levels",      std::to_string(a.net.levels),
                                  "--base-filters", std::to_string(a.net.base_filters),
                                  "--block",        a.net.block,
                                  "--dropout",      num(a.net.dropout),
                                  "--norm-groups",  std::to_string(a.net.norm_groups),
                                  "--head-filters", std::to_string(a.net.head_filters),
                                  "--epochs",       std::to_string(a.epochs),
                                  "--lr",           num(a.lr),
                                  "--patches-per-sample", std::to_string(patches_per_sample),
                                  "--holdout",      std::to_string(a.holdout)};
    if (a.net.no_upscale) f.push_back("--no-upscale");
    if (!a.patch.empty()) {
      f.push_back("--patch");
      for (auto& s : dims(a.patch)) f.push_back(s);
    }
    return f;
  };
  auto p = [&](const char* sub) { return (root / sub).string(); };
  std::vector<std::pair<std::string, std::vector<std::string>>> steps;
  {
    // NET volumes scale with the phantom extent; the default law is tuned for 32x64x64.
    const Shape3 shape = to_shape(a.shape, "--shape");
    const double gamma_scale = CohortSpec{}.gamma_scale * static_cast<double>(shape.size()) / (32.0 * 64.0 * 64.0);
    std::vector<std::string> s = {"phantom",       "--n",           std::to_string(a.n),
                                  "--gain-jitter", num(a.gain_jitter), "--gamma-scale",
                                  num(gamma_scale), "--shape"};
    for (auto& d : dims(a.shape)) s.push_back(d);
    steps.push_back({"phantom", s});
  }
  {
    std::vector<std::string> s = {"train", "--dataset", p("phantom/manifest.json"), "--target-schema", "brats2021"};
    for (auto& f : net_flags(a.patches_per_sample)) s.push_back(f);
    steps.push_back({"model2021", s});
  }
  steps.push_back({"extract", {"extract", "--dataset", p("phantom/manifest.json"), "--model", p("model2021/model")}});
  {
    std::vector<std::string> s = {"train", "--dataset", p("extract/manifest.json"), "--subset", p("extract/extraction.json")};
    for (auto& f : net_flags(a.unified_patches_per_sample)) s.push_back(f);
    steps.push_back({"model_unified", s});
  }
  steps.push_back({"eval", {"eval", "--dataset", p("phantom/manifest.json"), "--model", p("model_unified/model"),
                            "--holdout", std::to_string(a.holdout), "--format", "csv"}});
  steps.push_back({"stats", {"stats", "--volumes", p("extract/extraction.json"), "--dataset", p("phantom/manifest.json")}});
  if (c.dry_run) {
    for (const auto& [dir, args] : steps) {
      std::string line = "netseg";
      for (const auto& x : args) line += " " + x;
      out << line << " --seed " << seed << " --out " << p(dir.c_str()) << "\n";
    }
    return kExitOk;
  }
  for (auto& [dir, args] : steps) {
    args.insert(args.end(), {"--seed", seed, "--jobs", jobs, "--out", p(dir.c_str())});
    log("pipeline step " + dir);
    std::ostringstream step_out;
    const int rc = run(args, step_out, err);
    if (rc != kExitOk) return rc;
    write_text(root / (dir + ".out"), step_out.str());
  }
  std::ifstream metrics(root / "eval" / "metrics.json");
  const auto j = nlohmann::json::parse(metrics);
  out << j.at("summary").dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// config file and logging

/// Turns a JSON object into option tokens for `sub`. Unknown keys are usage errors.
std::vector<std::string> config_tokens(CLI::App* sub, const std::string& path) {
  const auto j = read_json_file(path);
  if (!j.is_object()) throw CLI::ValidationError("--config", "config file must hold a JSON object");
  std::vector<std::string> tokens;
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    if (name == "config") continue;
    const CLI::Option* opt = sub->get_option_no_throw("--" + name);
    if (!opt) throw CLI::ValidationError("--config", "unknown key '" + key + "' for " + sub->get_name());
    const std::string flag = "--" + name;
    if (opt->get_expected_max() == 0) {
      if (!value.is_boolean()) throw CLI::ValidationError("--config", "'" + key + "' takes true or false");
      if (value.get<bool>()) tokens.push_back(flag);
      continue;
    }
    auto scalar = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    const bool scalar_array = value.is_array() && std::all_of(value.begin(), value.end(), [](const auto& v) {
                                return v.is_primitive();
                              });
    if (value.is_array() && opt->get_expected_max() > 1 && scalar_array) {
      tokens.push_back(flag);
      for (const auto& v : value) tokens.push_back(scalar(v));
    } else {
      tokens.push_back(flag + "=" + scalar(value));
    }
  }
  return tokens;
}

ojson resolved_config(const CLI::App* sub) {
  ojson j;
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    if (opt->count() == 0) {
      const std::string d = opt->get_default_str();
      if (opt->get_expected_max() == 0)
        j[name] = false;
      else
        j[name] = d.empty() ? ojson(nullptr) : ojson(d);
      continue;
    }
    const auto res = opt->reduced_results();
    if (opt->get_expected_max() == 0)
      j[name] = true;
    else if (res.size() == 1)
      j[name] = res.front();
    else
      j[name] = res;
  }
  return j;
}

int exit_for(ErrorCode code) {
  switch (category_of(code)) {
    case ErrorCategory::Usage: return kExitUsage;
    case ErrorCategory::Data: return kExitData;
    case ErrorCategory::Numeric: return kExitNumeric;
  }
  return kExitData;
}

void report_error(std::ostream& err, const std::string& code, const std::string& message) {
  ojson j;
  j["error"] = code;
  j["message"] = message;
  err << j.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Brain tumor segmentation toolkit: phantoms, NET extraction, training, evaluation, statistics", "netseg"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", "netseg 1.0.0");

  Common common;
  PhantomArgs phantom;
  ComposeArgs compose;
  ExtractArgs extract;
  TrainArgs train;
  EvalArgs eval;
  StatsArgs stats;
  RefineArgs refine;
  PipelineArgs pipeline;

  auto* s_phantom = app.add_subcommand("phantom", "Generate a synthetic phantom cohort and its dataset manifest");
  add_common(s_phantom, common, true);
  s_phantom->add_option("--n", phantom.n, "Records")->capture_default_str();
  s_phantom->add_option("--shape", phantom.shape, "Volume extent d h w")->expected(3)->capture_default_str();
  s_phantom->add_option("--gamma-shape", phantom.gamma_shape, "NET volume gamma shape")->capture_default_str();
  s_phantom->add_option("--gamma-scale", phantom.gamma_scale, "NET volume gamma scale (voxels)")->capture_default_str();
  s_phantom->add_option("--center-jitter", phantom.center_jitter, "Tumor center jitter")->capture_default_str();
  s_phantom->add_option("--gain-jitter", phantom.gain_jitter, "Per-channel gain sd")->capture_default_str();
  s_phantom->add_option("--spec", phantom.spec, "Base phantom spec (JSON file or inline JSON)");
  s_phantom->add_option("--schema", phantom.schema, "Label schema written")->capture_default_str();
  s_phantom->add_option("--datatype", phantom.datatype, "NIfTI datatype of the channels")->capture_default_str();

  auto* s_compose = app.add_subcommand("compose", "Compose evaluation segments from a label volume");
  add_common(s_compose, common, false);
  s_compose->add_option("--labels", compose.labels, "Label NIfTI")->required();
  s_compose->add_option("--schema", compose.schema, "Schema of the labels")->capture_default_str();
  s_compose->add_option("--to", compose.to, "Also write the labels in this schema (from unified)");

  auto* s_extract = app.add_subcommand("extract", "Extract NET from fused labels using TC/ET predictions");
  add_common(s_extract, common, false);
  s_extract->add_option("--labels", extract.labels, "Label NIfTI (single record)");
  s_extract->add_option("--labels-schema", extract.labels_schema, "Schema of --labels")->capture_default_str();
  s_extract->add_option("--tc", extract.tc, "TC prediction NIfTI (mask or probability)");
  s_extract->add_option("--et", extract.et, "ET prediction NIfTI (mask or probability)");
  s_extract->add_option("--id", extract.id, "Record id (single record)")->capture_default_str();
  s_extract->add_option("--dataset", extract.dataset, "Dataset manifest");
  s_extract->add_option("--model", extract.model, "Checkpoint stem of a TC/ET model");
  s_extract->add_flag("--oracle", extract.oracle, "Use the dataset's unified labels as predictions");
  s_extract->add_option("--subtract-mode", extract.subtract_mode, "minus_ncr_pred or minus_tc_pred")->capture_default_str();
  s_extract->add_option("--filters", extract.filters, "Filter sequence (JSON file or inline JSON)");
  s_extract->add_option("--threshold", extract.threshold, "Prediction threshold")->capture_default_str();
  s_extract->add_flag("--literal-et", extract.literal_et, "Relabel every predicted ET voxel as ET");

  auto* s_train = app.add_subcommand("train", "Train a segmentation network on a dataset manifest");
  add_common(s_train, common, true);
  s_train->add_option("--dataset", train.dataset, "Dataset manifest")->required();
  s_train->add_option("--target-schema", train.target_schema, "Schema whose segments are learned (default: dataset)");
  s_train->add_option("--ids", train.ids, "Comma-separated training ids");
  s_train->add_option("--subset", train.subset, "JSON list of ids or an extraction report");
  s_train->add_option("--holdout", train.holdout, "Last records by id kept for validation")->capture_default_str();
  add_net_options(s_train, train.net);
  s_train->add_option("--epochs", train.epochs, "Epochs")->capture_default_str();
  s_train->add_option("--lr", train.lr, "Initial learning rate")->capture_default_str();
  s_train->add_option("--decay", train.decay, "Per-epoch learning-rate decay")->capture_default_str();
  s_train->add_option("--batch", train.batch, "Batch size")->capture_default_str();
  s_train->add_option("--patch", train.patch, "Training crop d h w (default: whole volume)")->expected(3);
  s_train->add_option("--patches-per-sample", train.patches_per_sample, "Crops per record per epoch")->capture_default_str();
  s_train->add_option("--foreground-fraction", train.foreground_fraction, "Share of tumor-centred crops")->capture_default_str();
  s_train->add_option("--monitor", train.monitor, "Segment watched by early stopping (default: first)");
  s_train->add_option("--min-delta", train.min_delta, "Early stopping minimum gain")->capture_default_str();
  s_train->add_option("--patience", train.patience, "Early stopping patience (0 disables)")->capture_default_str();

  auto* s_eval = app.add_subcommand("eval", "Score predictions against ground truth");
  add_common(s_eval, common, false);
  s_eval->add_option("--pred", eval.pred, "Predicted label NIfTI");
  s_eval->add_option("--gt", eval.gt, "Ground-truth label NIfTI");
  s_eval->add_option("--schema", eval.schema, "Schema of --pred and --gt")->capture_default_str();
  s_eval->add_option("--dataset", eval.dataset, "Dataset manifest");
  s_eval->add_option("--model", eval.model, "Checkpoint stem");
  s_eval->add_option("--ids", eval.ids, "Comma-separated ids");
  s_eval->add_option("--subset", eval.subset, "JSON list of ids or an extraction report");
  s_eval->add_option("--holdout", eval.holdout, "Evaluate the last records by id")->capture_default_str();
  s_eval->add_option("--threshold", eval.threshold, "Prediction threshold")->capture_default_str();

  auto* s_stats = app.add_subcommand("stats", "Volume grouping, gamma fit and intensity tests");
  add_common(s_stats, common, false);
  s_stats->add_option("--volumes", stats.volumes, "extraction.json or CSV of id,volume");
  s_stats->add_option("--dataset", stats.dataset, "Dataset manifest with unified labels");
  s_stats->add_option("--bins", stats.bins, "Histogram bins")->capture_default_str();
  s_stats->add_option("--alpha", stats.alpha, "Significance level")->capture_default_str();

  auto* s_refine = app.add_subcommand("refine", "Replace NET labels with a NET model's predictions");
  add_common(s_refine, common, false);
  s_refine->add_option("--dataset", refine.dataset, "Dataset manifest with unified labels")->required();
  s_refine->add_option("--model", refine.model, "Checkpoint stem of a model predicting NET")->required();
  s_refine->add_option("--filters", refine.filters, "Filter sequence (JSON file or inline JSON)");
  s_refine->add_option("--threshold", refine.threshold, "Prediction threshold")->capture_default_str();

  auto* s_pipeline = app.add_subcommand("pipeline", "Phantom, 2021 model, extraction, unified model, evaluation, stats");
  add_common(s_pipeline, common, true);
  s_pipeline->add_option("--n", pipeline.n, "Records")->capture_default_str();
  s_pipeline->add_option("--shape", pipeline.shape, "Volume extent d h w")->expected(3)->capture_default_str();
  s_pipeline->add_option("--gain-jitter", pipeline.gain_jitter, "Per-channel gain sd")->capture_default_str();
  s_pipeline->add_option("--holdout", pipeline.holdout, "Held-out records")->capture_default_str();
  add_net_options(s_pipeline, pipeline.net);
  s_pipeline->add_option("--epochs", pipeline.epochs, "Epochs per model")->capture_default_str();
  s_pipeline->add_option("--lr", pipeline.lr, "Initial learning rate")->capture_default_str();
  s_pipeline->add_option("--patch", pipeline.patch, "Training crop d h w")->expected(3)->capture_default_str();
  s_pipeline->add_option("--patches-per-sample", pipeline.patches_per_sample, "Crops per record per epoch")
      ->capture_default_str();
  s_pipeline
      ->add_option("--unified-patches-per-sample", pipeline.unified_patches_per_sample,
                   "Crops per record per epoch for the unified model")
      ->capture_default_str();

  const Log log{err};
  std::vector<std::string> argv = args;
  try {
    // Config file values go right after the subcommand so that later command-line flags win.
    if (!argv.empty() && !argv[0].empty() && argv[0][0] != '-') {
      CLI::App* sub = app.get_subcommand_no_throw(argv[0]);
      for (std::size_t i = 1; sub && i < argv.size(); ++i) {
        std::string path;
        if (argv[i] == "--config" && i + 1 < argv.size())
          path = argv[i + 1];
        else if (argv[i].rfind("--config=", 0) == 0)
          path = argv[i].substr(9);
        if (path.empty()) continue;
        const auto tokens = config_tokens(sub, path);
        argv.insert(argv.begin() + 1, tokens.begin(), tokens.end());
        break;
      }
    }
    std::vector<std::string> reversed(argv.rbegin(), argv.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitUsage;
  } catch (const Error& e) {
    report_error(err, std::string(to_string(e.code())), e.what());
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  log(sub->get_name() + " config " + resolved_config(sub).dump());
  try {
    if (sub == s_phantom) return cmd_phantom(common, phantom, out, log);
    if (sub == s_compose) return cmd_compose(common, compose, out, log);
    if (sub == s_extract) return cmd_extract(common, extract, out, log);
    if (sub == s_train) return cmd_train(common, train, out, log);
    if (sub == s_eval) return cmd_eval(common, eval, out, log);
    if (sub == s_stats) return cmd_stats(common, stats, out, log);
    if (sub == s_refine) return cmd_refine(common, refine, out, log);
    if (sub == s_pipeline) return cmd_pipeline(common, pipeline, out, err, log);
  } catch (const Error& e) {
    report_error(err, std::string(to_string(e.code())), e.what());
    return exit_for(e.code());
  } catch (const fs::filesystem_error& e) {
    report_error(err, "Io", e.what());
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    report_error(err, "Io", e.what());
    return kExitData;
  } catch (const std::bad_alloc&) {
    report_error(err, "OutOfMemory", "allocation failed");
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace netseg::cli
