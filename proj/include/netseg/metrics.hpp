#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "netseg/labels.hpp"
#include "netseg/volume.hpp"

namespace netseg {

/// 2|A∩B| / (|A|+|B|); 1.0 when both masks are empty.
double dice(const Mask& a, const Mask& b);
/// |A∩B| / |A∪B|; 1.0 when both masks are empty.
double iou(const Mask& a, const Mask& b);

/// Symmetric Hausdorff distance in millimetres between set-voxel centres. percentile 100 is the
/// classic maximum; lower values take that percentile (linear interpolation) of each directed
/// distance set and report the larger one. Throws EmptyMask if either mask is empty.
double hausdorff(const Mask& a, const Mask& b, const Spacing3& spacing_mm, double percentile = 100.0);

/// Squared Euclidean distance (mm^2) from every voxel to the nearest set voxel of `mask`.
std::vector<double> squared_distance_transform(const Mask& mask, const Spacing3& spacing_mm);

/// Kahan-Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double x);
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct SoftDiceResult {
  double loss = 0.0;
  /// dLoss/dPred, one field per class, same layout as the prediction.
  std::vector<std::vector<double>> grad;
};

/// Mean over classes of 1 - (2Σpg + s) / (Σp² + Σg² + s).
SoftDiceResult soft_dice_loss(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& gt,
                              double smooth = 1.0, bool with_grad = true);

/// Voxelwise prob >= tau.
Mask threshold(const Grid<float>& prob, double tau = 0.5);
SegmentMaskSet threshold_predictions(const std::map<Segment, Grid<float>>& prob, double tau = 0.5,
                                     std::size_t resolution_factor = 1);

struct SegmentScores {
  double dice = 0.0;
  double iou = 0.0;
  std::optional<double> hausdorff_mm;    // absent when either mask is empty
  std::optional<double> hausdorff95_mm;
};

struct MetricReport {
  std::string record_id;
  std::map<Segment, SegmentScores> per_segment;
  std::vector<Segment> mean_dice_over;

  double mean_dice() const;
};

/// Scores every segment present in both sets; mean Dice over ET/AT, TC and WT.
MetricReport evaluate_segments(const SegmentMaskSet& pred, const SegmentMaskSet& gt, const Spacing3& spacing_mm,
                               std::string record_id = {});

nlohmann::ordered_json to_json(const MetricReport& r);
/// Rows: record_id,segment,dice,iou,hd,hd95
std::string to_csv(const std::vector<MetricReport>& reports, bool header = true);

}  // namespace netseg
