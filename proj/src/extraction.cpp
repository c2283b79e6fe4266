#include "netseg/extraction.hpp"

#include <algorithm>

#include "netseg/metrics.hpp"
#include "netseg/nn/tensor.hpp"

namespace netseg {

namespace {

void require_same_shape(const Mask& a, const Mask& b, const char* what) {
  if (a.shape() != b.shape())
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

Mask minus(const Mask& a, const Mask& b) {
  Mask out(a.shape(), 0, a.spacing());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] && !b[i];
  return out;
}

Mask intersect(const Mask& a, const Mask& b) {
  Mask out(a.shape(), 0, a.spacing());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] && b[i];
  return out;
}

Segment smallest_segment(const std::vector<Segment>& segs) {
  for (Segment s : {Segment::ET, Segment::AT})
    if (std::find(segs.begin(), segs.end(), s) != segs.end()) return s;
  throw Error(ErrorCode::ModelSegmentMismatch, "model predicts neither ET nor AT");
}

void require_segment(const std::vector<Segment>& segs, Segment s) {
  if (std::find(segs.begin(), segs.end(), s) == segs.end())
    throw Error(ErrorCode::ModelSegmentMismatch, "model does not predict " + std::string(to_string(s)));
}

}  // namespace

std::vector<Segment> schema_segments(Schema s) {
  std::vector<Segment> out;
  for (const auto& d : schema_mapping(s).segments) out.push_back(d.segment);
  return out;
}

nn::Sample make_input(const MultiModalRecord& record) {
  const MultiModalRecord norm = normalize_record(record);
  nn::Sample s;
  s.id = record.record_id;
  s.input_shape = record.shape();
  s.input.reserve(4 * s.input_shape.size());
  for (const auto& ch : norm.channels) s.input.insert(s.input.end(), ch.storage().begin(), ch.storage().end());
  return s;
}

nn::Sample make_sample(const MultiModalRecord& record, const std::vector<Segment>& segments, std::size_t factor,
                       const LabelVolume* labels) {
  if (!labels) {
    if (!record.labels) throw Error(ErrorCode::InvalidArgument, "record " + record.record_id + " has no labels");
    labels = &*record.labels;
  }
  nn::Sample s = make_input(record);
  LabelVolume lab = *labels;
  if (lab.shape() == record.shape() && factor > 1)
    lab = upscale_repeat(lab, factor);
  else if (lab.shape() != record.shape() * factor)
    throw Error(ErrorCode::ShapeMismatch, "labels " + to_string(lab.shape()) + " fit neither the record nor " +
                                              std::to_string(factor) + "x its resolution");
  const SegmentMaskSet set = compose_segments(lab);
  s.target_shape = lab.shape();
  s.target.reserve(segments.size() * lab.size());
  for (Segment seg : segments) {
    if (!set.contains(seg))
      throw Error(ErrorCode::ModelSegmentMismatch,
                  std::string(to_string(seg)) + " is not defined for schema " + std::string(to_string(lab.schema())));
    for (auto v : set.at(seg).storage()) s.target.push_back(v ? 1.0 : 0.0);
  }
  return s;
}

NetworkPredictor::NetworkPredictor(nn::Network& net, std::vector<Segment> segments)
    : net_(net), segments_(std::move(segments)) {
  if (segments_.size() != net_.config().out_segments)
    throw Error(ErrorCode::ModelSegmentMismatch, "network has " + std::to_string(net_.config().out_segments) +
                                                     " outputs but " + std::to_string(segments_.size()) +
                                                     " segment names were given");
}

std::size_t NetworkPredictor::resolution_factor() const { return net_.config().upscaling_head ? 2 : 1; }

std::map<Segment, Grid<float>> NetworkPredictor::predict(const MultiModalRecord& record) {
  const nn::Sample in = make_input(record);
  const std::vector<double> out = nn::predict(net_, in);
  const Shape3 os = net_.output_shape(record.shape());
  Spacing3 sp = record.channels[0].spacing();
  const double f = static_cast<double>(resolution_factor());
  sp = {sp.d / f, sp.h / f, sp.w / f};
  std::map<Segment, Grid<float>> res;
  for (std::size_t s = 0; s < segments_.size(); ++s) {
    std::vector<float> v(out.begin() + static_cast<std::ptrdiff_t>(s * os.size()),
                         out.begin() + static_cast<std::ptrdiff_t>((s + 1) * os.size()));
    res.emplace(segments_[s], Grid<float>(os, std::move(v), sp));
  }
  return res;
}

OraclePredictor::OraclePredictor(std::map<std::string, LabelVolume> truth, std::vector<Segment> segments)
    : truth_(std::move(truth)), segments_(std::move(segments)) {
  const auto& m = schema_mapping(Schema::Unified4Label);
  for (Segment s : segments_)
    if (!m.labels_of(s)) throw Error(ErrorCode::ModelSegmentMismatch, std::string(to_string(s)) + " is not a unified segment");
}

std::map<Segment, Grid<float>> OraclePredictor::predict(const MultiModalRecord& record) {
  auto it = truth_.find(record.record_id);
  if (it == truth_.end()) throw Error(ErrorCode::InvalidArgument, "oracle has no truth for " + record.record_id);
  const auto& m = schema_mapping(Schema::Unified4Label);
  std::map<Segment, Grid<float>> out;
  for (Segment s : segments_) {
    const Mask mk = label_mask(it->second, *m.labels_of(s));
    Grid<float> g(mk.shape(), 0.0f, mk.spacing());
    for (std::size_t i = 0; i < mk.size(); ++i) g[i] = mk[i] ? 1.0f : 0.0f;
    out.emplace(s, std::move(g));
  }
  return out;
}

std::string_view to_string(SubtractMode m) { return m == SubtractMode::MinusNcrPred ? "minus_ncr_pred" : "minus_tc_pred"; }

SubtractMode parse_subtract_mode(std::string_view name) {
  if (name == "minus_ncr_pred") return SubtractMode::MinusNcrPred;
  if (name == "minus_tc_pred") return SubtractMode::MinusTcPred;
  throw Error(ErrorCode::InvalidArgument, "unknown subtract mode '" + std::string(name) + "'");
}

void ExtractionConfig::validate() const {
  if (!(prediction_threshold > 0.0 && prediction_threshold < 1.0))
    throw Error(ErrorCode::InvalidArgument, "prediction threshold must lie in (0, 1)");
}

nlohmann::ordered_json to_json(const ExtractionConfig& c) {
  nlohmann::ordered_json j;
  j["subtract_mode"] = std::string(to_string(c.subtract_mode));
  j["filters"] = nlohmann::ordered_json::parse(filters_to_json(c.filters).dump());
  j["prediction_threshold"] = c.prediction_threshold;
  j["reassign_predicted_et"] = c.reassign_predicted_et;
  return j;
}

ExtractionConfig extraction_config_from_json(const nlohmann::json& j) {
  ExtractionConfig c;
  try {
    if (j.contains("subtract_mode")) c.subtract_mode = parse_subtract_mode(j["subtract_mode"].get<std::string>());
    if (j.contains("filters")) c.filters = filters_from_json(j["filters"]);
    c.prediction_threshold = j.value("prediction_threshold", c.prediction_threshold);
    c.reassign_predicted_et = j.value("reassign_predicted_et", c.reassign_predicted_et);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad extraction config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::ordered_json to_json(const ExtractionResult& r, const ExtractionConfig& cfg) {
  nlohmann::ordered_json j;
  j["record_id"] = r.record_id;
  j["subtract_mode"] = std::string(to_string(cfg.subtract_mode));
  j["raw_net_voxels"] = r.raw_net_voxels;
  j["net_voxels"] = r.net_voxels;
  j["ncr_voxels"] = count_nonzero(r.ncr_mask);
  j["group"] = r.group ? nlohmann::ordered_json(std::string(to_string(*r.group))) : nlohmann::ordered_json(nullptr);
  j["resolution"] = {r.relabeled.shape().d, r.relabeled.shape().h, r.relabeled.shape().w};
  return j;
}

Mask predict_ncr(const Mask& tc_pred, const Mask& et_pred) {
  require_same_shape(tc_pred, et_pred, "predict_ncr");
  return minus(tc_pred, et_pred);
}

Mask predict_ncr(SegmentPredictor& model, const MultiModalRecord& record, double threshold) {
  const auto segs = model.segments();
  require_segment(segs, Segment::TC);
  const Segment small = smallest_segment(segs);
  const auto prob = model.predict(record);
  return predict_ncr(netseg::threshold(prob.at(Segment::TC), threshold), netseg::threshold(prob.at(small), threshold));
}

NetSplit split_fused(const Mask& fused, const Mask& subtrahend, const Mask* ed, const FilterSequence& filters) {
  require_same_shape(fused, subtrahend, "split_fused");
  if (ed) require_same_shape(fused, *ed, "split_fused");
  NetSplit out;
  out.raw_net = minus(fused, subtrahend);
  const Mask residual = intersect(fused, subtrahend);
  Mask net = apply_filters(out.raw_net, filters);
  // closing may grow NET past the fused region; keep only what lands in fused or edema
  for (std::size_t i = 0; i < net.size(); ++i)
    net[i] = net[i] && (fused[i] || (ed && (*ed)[i])) && !residual[i];
  out.ncr = minus(fused, net);
  out.net = std::move(net);
  return out;
}

ExtractionResult extract_net(const LabelVolume& labels, const Mask& tc_pred, const Mask& et_pred,
                             const ExtractionConfig& cfg, std::string record_id) {
  cfg.validate();
  if (labels.schema() != Schema::Brats2018)
    throw Error(ErrorCode::InvalidLabel, "NET extraction expects brats2018 labels, got " + std::string(to_string(labels.schema())));
  if (labels.shape() != tc_pred.shape() || labels.shape() != et_pred.shape())
    throw Error(ErrorCode::ShapeMismatch, "labels " + to_string(labels.shape()) + ", TC " + to_string(tc_pred.shape()) +
                                              ", ET " + to_string(et_pred.shape()));
  const Mask fused = label_mask(labels, label_bit(1));
  const Mask ed = label_mask(labels, label_bit(2));
  const Mask subtrahend = cfg.subtract_mode == SubtractMode::MinusNcrPred ? predict_ncr(tc_pred, et_pred) : tc_pred;
  NetSplit sp = split_fused(fused, subtrahend, &ed, cfg.filters);
  ExtractionResult r;
  r.record_id = std::move(record_id);
  r.raw_net_voxels = count_nonzero(sp.raw_net);
  r.net_voxels = count_nonzero(sp.net);
  Grid<std::uint8_t> g = labels;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (sp.net[i]) g[i] = 3;
    if (cfg.reassign_predicted_et && et_pred[i]) g[i] = 4;
  }
  r.relabeled = LabelVolume(std::move(g), Schema::Unified4Label);
  r.net_mask = std::move(sp.net);
  r.ncr_mask = std::move(sp.ncr);
  if (cfg.reassign_predicted_et)
    for (std::size_t i = 0; i < r.net_mask.size(); ++i)
      if (et_pred[i]) r.net_mask[i] = r.ncr_mask[i] = 0;
  if (cfg.reassign_predicted_et) r.net_voxels = count_nonzero(r.net_mask);
  return r;
}

DatasetExtraction run_dataset_extraction(const std::vector<MultiModalRecord>& records, SegmentPredictor& model,
                                         const ExtractionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto segs = model.segments();
  require_segment(segs, Segment::TC);
  const Segment small = smallest_segment(segs);
  std::vector<const MultiModalRecord*> order;
  for (const auto& r : records) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->record_id < b->record_id; });
  DatasetExtraction out;
  for (const auto* rec : order) {
    try {
      if (!rec->labels) throw Error(ErrorCode::InvalidArgument, "record has no labels");
      const std::size_t f = model.resolution_factor();
      const LabelVolume lab = f > 1 ? upscale_repeat(*rec->labels, f) : *rec->labels;
      const auto prob = model.predict(*rec);
      const Mask tc = threshold(prob.at(Segment::TC), cfg.prediction_threshold);
      const Mask et = threshold(prob.at(small), cfg.prediction_threshold);
      out.results.push_back(extract_net(lab, tc, et, cfg, rec->record_id));
    } catch (const Error& e) {
      out.errors[rec->record_id] = e.what();
    }
  }
  std::map<std::string, std::size_t> volumes;
  for (const auto& r : out.results) volumes[r.record_id] = r.net_voxels;
  out.partition = partition_by_volume(volumes, seed);
  for (auto& r : out.results) {
    r.group = out.partition.groups.at(r.record_id);
    if (*r.group == VolumeGroup::Medium) out.training_subset.push_back(r.record_id);
  }
  return out;
}

std::vector<MultiModalRecord> refine_dataset(const std::vector<MultiModalRecord>& records, SegmentPredictor& net_model,
                                             const ExtractionConfig& cfg, std::vector<RefineReport>* report) {
  cfg.validate();
  require_segment(net_model.segments(), Segment::NET);
  const std::size_t f = net_model.resolution_factor();
  std::vector<MultiModalRecord> out;
  if (report) report->clear();
  for (const auto& rec : records) {
    if (!rec.labels || rec.labels->schema() != Schema::Unified4Label)
      throw Error(ErrorCode::InvalidLabel, "record " + rec.record_id + " needs unified labels for refinement");
    const auto prob = net_model.predict(rec);
    MultiModalRecord r = rec;
    if (f > 1) {
      for (auto& ch : r.channels) ch = upscale_repeat(ch, f);
      r.labels = upscale_repeat(*rec.labels, f);
    }
    LabelVolume& lab = *r.labels;
    const Mask pred = apply_filters(threshold(prob.at(Segment::NET), cfg.prediction_threshold), cfg.filters);
    if (pred.shape() != lab.shape())
      throw Error(ErrorCode::ShapeMismatch, "NET prediction " + to_string(pred.shape()) + " vs labels " + to_string(lab.shape()));
    RefineReport rep{rec.record_id, 0, 0};
    for (std::size_t i = 0; i < lab.size(); ++i) {
      const std::uint8_t l = lab[i];
      rep.net_before += l == 3;
      const bool eligible = l == 1 || l == 2 || l == 3;
      if (eligible && pred[i])
        lab[i] = 3;
      else if (l == 3)
        lab[i] = 1;
      rep.net_after += lab[i] == 3;
    }
    if (report) report->push_back(rep);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace netseg
