#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "netseg/nn/tensor.hpp"
#include "netseg/volume.hpp"

namespace netseg::nn {

enum class BlockKind { Plain, Residual, ResidualNorm, PreActivation };

std::string_view to_string(BlockKind k);
BlockKind parse_block_kind(std::string_view name);

struct NetworkConfig {
  std::size_t levels = 4;
  std::size_t base_filters = 32;
  BlockKind block_kind = BlockKind::PreActivation;
  double dropout_rate = 0.2;
  bool upscaling_head = true;
  std::size_t out_segments = 3;
  std::size_t norm_groups = 8;
  std::size_t in_channels = 4;
  /// Channels of the 2x head; 0 picks max(1, base_filters / 2).
  std::size_t head_filters = 0;
  std::uint64_t init_seed = 0;

  std::size_t width(std::size_t level) const { return base_filters << level; }
  std::size_t head_width() const;
  /// Throws InvalidSpec for unusable settings.
  void validate() const;
};

nlohmann::ordered_json to_json(const NetworkConfig& c);
NetworkConfig network_config_from_json(const nlohmann::json& j);

struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Encoder-decoder with additive skips, optional 2x upscaling head and sigmoid outputs.
class Network {
 public:
  explicit Network(NetworkConfig cfg);

  /// x is [N, in_channels, D, H, W]; returns [N, out_segments, f*D, f*H, f*W] with f = 2 for the
  /// upscaling head, else 1. Throws IndivisibleShape when D, H or W is not a multiple of 2^(levels-1).
  Tensor forward(const Tensor& x, bool training = false, std::uint64_t dropout_seed = 0);

  Shape3 output_shape(const Shape3& input) const;
  void check_input(const Shape3& input) const;

  const NetworkConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  struct Conv {
    std::size_t w = 0;  // index into params_
    std::ptrdiff_t b = -1;
    std::size_t stride = 1;
    bool transpose = false;
  };
  struct Norm {
    std::size_t gamma = 0, beta = 0, groups = 1;
  };
  struct Block {
    Conv c1, c2;
    Norm n1, n2;
    bool has_proj = false;
    Conv proj;
  };

  Conv add_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                bool bias);
  Conv add_transpose(const std::string& name, std::size_t in, std::size_t out);
  Norm add_norm(const std::string& name, std::size_t channels);
  Block add_block(const std::string& name, std::size_t in, std::size_t out);

  Tensor apply(const Conv& c, const Tensor& x) const;
  Tensor apply(const Norm& n, const Tensor& x) const;
  Tensor apply(const Block& b, const Tensor& x) const;

  NetworkConfig cfg_;
  std::vector<Parameter> params_;
  std::uint64_t rng_state_ = 0;

  Conv init_conv_;
  std::vector<std::vector<Block>> encoder_;  // per level
  std::vector<Conv> down_;                   // down_[l] maps level l to l + 1
  std::vector<Conv> up_;                     // up_[l] maps level l + 1 to l
  std::vector<std::vector<Block>> decoder_;  // per level below the bottleneck
  Conv head_up_, head_skip_conv_, head_skip_up_;
  Conv out_conv_;
};

/// Parameter totals of a configuration without allocating its weights.
std::size_t count_parameters(const NetworkConfig& cfg);

/// Manifest `<stem>.json` (config, parameter shapes, user metadata) plus `<stem>.bin` little-endian doubles.
void save_checkpoint(const Network& net, const std::string& stem, const nlohmann::ordered_json& metadata = {});
Network load_checkpoint(const std::string& stem, nlohmann::json* metadata = nullptr);

}  // namespace netseg::nn
