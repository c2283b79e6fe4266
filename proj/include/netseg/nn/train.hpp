#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "netseg/nn/network.hpp"

namespace netseg::nn {

/// Adam with bias correction.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::vector<Parameter>& params, double lr);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EarlyStopConfig {
  std::size_t monitor = 0;  // output segment index
  double min_delta = 0.005;
  std::size_t patience = 10;
};

struct TrainConfig {
  double lr0 = 1e-4;
  double decay_per_epoch = 0.05;
  std::size_t batch_size = 1;
  std::size_t epochs = 1;
  std::optional<EarlyStopConfig> early_stop;
  std::uint64_t seed = 0;
  double threshold = 0.5;  // for the per-epoch Dice
  /// Train on random crops of this input size instead of whole samples.
  std::optional<Shape3> patch;
  /// Probability that a crop is centred on a target foreground voxel rather than drawn uniformly.
  double foreground_fraction = 0.7;
  /// Crops drawn from every sample per epoch.
  std::size_t patches_per_sample = 1;
};

/// lr0 * (1 - decay)^epoch
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

/// Stops once the monitored score has failed to exceed best + min_delta for `patience` epochs.
class EarlyStopping {
 public:
  explicit EarlyStopping(EarlyStopConfig cfg) : cfg_(cfg) {}
  /// Returns true when training should stop.
  bool update(double score);
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t wait() const { return wait_; }

 private:
  EarlyStopConfig cfg_;
  double best_ = -1.0;
  std::size_t best_epoch_ = 0;
  std::size_t seen_ = 0;
  std::size_t wait_ = 0;
};

/// One training example: input [in_channels, D, H, W] and target [out_segments, D', H', W'].
struct Sample {
  std::string id;
  Shape3 input_shape;
  std::vector<double> input;
  Shape3 target_shape;
  std::vector<double> target;
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::vector<double> dice;  // per output segment, on the monitored set
};

struct TrainLog {
  std::vector<std::string> segment_names;
  std::vector<EpochLog> epochs;
  bool stopped_early = false;
  /// Columns: epoch,lr,loss,dice_<segment>...
  std::string to_csv() const;
};

/// Minimizes the mean soft Dice loss. Per-epoch Dice is measured on `validation` when given,
/// otherwise on the training samples. Throws EmptyDataset or NonFiniteLoss.
TrainLog train(Network& net, const std::vector<Sample>& samples, const TrainConfig& cfg,
               const std::vector<Sample>* validation = nullptr, std::vector<std::string> segment_names = {});

/// Crop of a sample at input offset o; the target is cropped at o scaled by its resolution factor.
Sample crop_sample(const Sample& s, const Shape3& offset, const Shape3& size);

/// Sigmoid outputs for one input, [out_segments, D', H', W'].
std::vector<double> predict(Network& net, const Sample& sample);

/// Thresholded Dice per output segment between a prediction and a target of equal layout.
std::vector<double> segment_dice(const std::vector<double>& prob, const std::vector<double>& target,
                                 std::size_t segments, double threshold = 0.5);

}  // namespace netseg::nn
