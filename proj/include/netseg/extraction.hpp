#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "netseg/labels.hpp"
#include "netseg/morphology.hpp"
#include "netseg/nn/network.hpp"
#include "netseg/nn/train.hpp"
#include "netseg/stats.hpp"

namespace netseg {

// ---------------------------------------------------------------------------
// Bridging records and networks

/// Segments a schema evaluates, in output-channel order.
std::vector<Segment> schema_segments(Schema s);

/// Normalized channels as input; composed segment masks at `factor` times the record resolution as
/// target. `labels` overrides the record's labels and may be given at either resolution.
nn::Sample make_sample(const MultiModalRecord& record, const std::vector<Segment>& segments, std::size_t factor,
                       const LabelVolume* labels = nullptr);
/// Input part only, for inference.
nn::Sample make_input(const MultiModalRecord& record);

/// Produces per-segment probability fields for a record.
class SegmentPredictor {
 public:
  virtual ~SegmentPredictor() = default;
  virtual std::map<Segment, Grid<float>> predict(const MultiModalRecord& record) = 0;
  virtual std::vector<Segment> segments() const = 0;
  /// Output resolution relative to the record.
  virtual std::size_t resolution_factor() const = 0;
};

class NetworkPredictor : public SegmentPredictor {
 public:
  /// One segment per network output channel.
  NetworkPredictor(nn::Network& net, std::vector<Segment> segments);
  std::map<Segment, Grid<float>> predict(const MultiModalRecord& record) override;
  std::vector<Segment> segments() const override { return segments_; }
  std::size_t resolution_factor() const override;

 private:
  nn::Network& net_;
  std::vector<Segment> segments_;
};

/// Reports stored ground truth as 0/1 probabilities: the exact-prediction reference.
class OraclePredictor : public SegmentPredictor {
 public:
  /// `truth` holds unified labels per record id; segments are looked up in the unified mapping.
  OraclePredictor(std::map<std::string, LabelVolume> truth, std::vector<Segment> segments);
  std::map<Segment, Grid<float>> predict(const MultiModalRecord& record) override;
  std::vector<Segment> segments() const override { return segments_; }
  std::size_t resolution_factor() const override { return 1; }

 private:
  std::map<std::string, LabelVolume> truth_;
  std::vector<Segment> segments_;
};

// ---------------------------------------------------------------------------
// NET extraction

enum class SubtractMode { MinusNcrPred, MinusTcPred };
std::string_view to_string(SubtractMode m);
SubtractMode parse_subtract_mode(std::string_view name);

struct ExtractionConfig {
  SubtractMode subtract_mode = SubtractMode::MinusNcrPred;
  FilterSequence filters = default_net_filters();
  double prediction_threshold = 0.5;
  /// Literal reading of the reassignment rule: every voxel predicted ET becomes label 4.
  bool reassign_predicted_et = false;

  void validate() const;
};

nlohmann::ordered_json to_json(const ExtractionConfig& c);
ExtractionConfig extraction_config_from_json(const nlohmann::json& j);

struct ExtractionResult {
  std::string record_id;
  Mask net_mask;
  Mask ncr_mask;
  LabelVolume relabeled;  // unified schema, at the prediction resolution
  std::size_t raw_net_voxels = 0;
  std::size_t net_voxels = 0;
  std::optional<VolumeGroup> group;
};

nlohmann::ordered_json to_json(const ExtractionResult& r, const ExtractionConfig& cfg);

/// NCR_pred = TC_pred \ ET_pred.
Mask predict_ncr(const Mask& tc_pred, const Mask& et_pred);
Mask predict_ncr(SegmentPredictor& model, const MultiModalRecord& record, double threshold = 0.5);

/// Raw NET = fused \ subtrahend, filtered, clipped to fused ∪ ED and kept apart from the part of
/// fused covered by the subtrahend. `ed` may be empty-shaped (no clipping allowance outside fused).
struct NetSplit {
  Mask raw_net;
  Mask net;
  Mask ncr;
};
NetSplit split_fused(const Mask& fused, const Mask& subtrahend, const Mask* ed, const FilterSequence& filters);

/// `labels` are BraTS-2018-style ground truth (label 1 = NCR + NET). The result carries unified labels.
ExtractionResult extract_net(const LabelVolume& labels, const Mask& tc_pred, const Mask& et_pred,
                             const ExtractionConfig& cfg, std::string record_id = {});

struct DatasetExtraction {
  std::vector<ExtractionResult> results;  // sorted by record id
  std::map<std::string, std::string> errors;
  VolumePartition partition;
  std::vector<std::string> training_subset;  // medium group
};

/// Records carry 2018-style labels. Predictions at twice the record resolution are matched by
/// upscaling the ground truth first.
DatasetExtraction run_dataset_extraction(const std::vector<MultiModalRecord>& records, SegmentPredictor& model,
                                         const ExtractionConfig& cfg, std::uint64_t seed = 0);

struct RefineReport {
  std::string record_id;
  std::size_t net_before = 0;
  std::size_t net_after = 0;
};

/// Replaces every record's NET with the thresholded, filtered NET prediction, restricted to the
/// non-ET tumor (labels 1, 2, 3). Former NET voxels that lose the label revert to NCR. Records must
/// carry unified labels; at 2x prediction resolution labels and channels are upscaled first.
std::vector<MultiModalRecord> refine_dataset(const std::vector<MultiModalRecord>& records, SegmentPredictor& net_model,
                                             const ExtractionConfig& cfg, std::vector<RefineReport>* report = nullptr);

}  // namespace netseg
