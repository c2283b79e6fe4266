#include "netseg/nn/network.hpp"

#include <cmath>
#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "netseg/error.hpp"
#include "netseg/nn/ops.hpp"

namespace netseg::nn {

namespace {

constexpr std::array<std::pair<BlockKind, const char*>, 4> kBlockNames = {{{BlockKind::Plain, "plain"},
                                                                          {BlockKind::Residual, "residual"},
                                                                          {BlockKind::ResidualNorm, "residual_norm"},
                                                                          {BlockKind::PreActivation, "preactivation"}}};

constexpr double kOutputInitScale = 0.1;

/// Largest divisor of channels that does not exceed the requested group count.
std::size_t effective_groups(std::size_t requested, std::size_t channels) {
  std::size_t g = std::min(requested, channels);
  while (channels % g != 0) --g;
  return g;
}

}  // namespace

std::string_view to_string(BlockKind k) {
  for (const auto& [kind, name] : kBlockNames)
    if (kind == k) return name;
  return "?";
}

BlockKind parse_block_kind(std::string_view name) {
  for (const auto& [kind, n] : kBlockNames)
    if (name == n) return kind;
  throw Error(ErrorCode::InvalidArgument, "unknown block kind '" + std::string(name) +
                                              "' (expected plain, residual, residual_norm or preactivation)");
}

std::size_t NetworkConfig::head_width() const {
  return head_filters ? head_filters : std::max<std::size_t>(1, base_filters / 2);
}

void NetworkConfig::validate() const {
  if (levels < 1 || levels > 8) throw Error(ErrorCode::InvalidSpec, "levels must lie in [1, 8]");
  if (base_filters == 0 || out_segments == 0 || in_channels == 0 || norm_groups == 0)
    throw Error(ErrorCode::InvalidSpec, "filter, segment, channel and group counts must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error(ErrorCode::InvalidSpec, "dropout rate must lie in [0, 1)");
}

nlohmann::ordered_json to_json(const NetworkConfig& c) {
  nlohmann::ordered_json j;
  j["levels"] = c.levels;
  j["base_filters"] = c.base_filters;
  j["block_kind"] = std::string(to_string(c.block_kind));
  j["dropout_rate"] = c.dropout_rate;
  j["upscaling_head"] = c.upscaling_head;
  j["out_segments"] = c.out_segments;
  j["norm_groups"] = c.norm_groups;
  j["in_channels"] = c.in_channels;
  j["head_filters"] = c.head_filters;
  j["init_seed"] = c.init_seed;
  return j;
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  try {
    c.levels = j.value("levels", c.levels);
    c.base_filters = j.value("base_filters", c.base_filters);
    if (j.contains("block_kind")) c.block_kind = parse_block_kind(j["block_kind"].get<std::string>());
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.upscaling_head = j.value("upscaling_head", c.upscaling_head);
    c.out_segments = j.value("out_segments", c.out_segments);
    c.norm_groups = j.value("norm_groups", c.norm_groups);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.head_filters = j.value("head_filters", c.head_filters);
    c.init_seed = j.value("init_seed", c.init_seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("bad network config: ") + e.what());
  }
  c.validate();
  return c;
}

Network::Network(NetworkConfig cfg) : cfg_(cfg), rng_state_(cfg.init_seed) {
  cfg_.validate();
  const std::size_t L = cfg_.levels;
  init_conv_ = add_conv("init", cfg_.in_channels, cfg_.width(0), 3, 1, false);
  encoder_.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    if (l > 0) down_.push_back(add_conv("down" + std::to_string(l), cfg_.width(l - 1), cfg_.width(l), 3, 2, false));
    for (int b = 0; b < 2; ++b)
      encoder_[l].push_back(add_block("enc" + std::to_string(l) + "." + std::to_string(b), cfg_.width(l), cfg_.width(l)));
  }
  up_.resize(L > 0 ? L - 1 : 0);
  decoder_.resize(L > 0 ? L - 1 : 0);
  for (std::size_t l = L - 1; l-- > 0;) {
    up_[l] = add_transpose("up" + std::to_string(l), cfg_.width(l + 1), cfg_.width(l));
    const int blocks = l == 0 ? 2 : 1;
    for (int b = 0; b < blocks; ++b)
      decoder_[l].push_back(add_block("dec" + std::to_string(l) + "." + std::to_string(b), cfg_.width(l), cfg_.width(l)));
  }
  std::size_t top = cfg_.width(0);
  if (cfg_.upscaling_head) {
    head_up_ = add_transpose("head.up", cfg_.width(0), cfg_.head_width());
    head_skip_conv_ = add_conv("head.skip", cfg_.width(0), cfg_.width(0), 3, 1, false);
    head_skip_up_ = add_transpose("head.skip_up", cfg_.width(0), cfg_.head_width());
    top = cfg_.head_width();
  }
  out_conv_ = add_conv("out", top, cfg_.out_segments, 1, 1, true);
  // start the sigmoid outputs near 0.5, away from the flat saturated regions of the Dice loss
  for (auto& v : params_[out_conv_.w].tensor.values()) v *= kOutputInitScale;
}

Network::Conv Network::add_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                                std::size_t stride, bool bias) {
  std::mt19937_64 rng(rng_state_++ * 0x9E3779B97F4A7C15ull + 1);
  std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(in * k * k * k)));
  std::vector<double> w(out * in * k * k * k);
  for (auto& v : w) v = nd(rng);
  Conv c;
  c.w = params_.size();
  c.stride = stride;
  params_.push_back({name + ".weight", Tensor({out, in, k, k, k}, std::move(w), true)});
  if (bias) {
    c.b = static_cast<std::ptrdiff_t>(params_.size());
    params_.push_back({name + ".bias", Tensor({out}, 0.0, true)});
  }
  return c;
}

Network::Conv Network::add_transpose(const std::string& name, std::size_t in, std::size_t out) {
  std::mt19937_64 rng(rng_state_++ * 0x9E3779B97F4A7C15ull + 1);
  // each output voxel receives on average 27/8 taps per input channel
  std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / (static_cast<double>(in) * 27.0 / 8.0)));
  std::vector<double> w(in * out * 27);
  for (auto& v : w) v = nd(rng);
  Conv c;
  c.w = params_.size();
  c.stride = 2;
  c.transpose = true;
  params_.push_back({name + ".weight", Tensor({in, out, 3, 3, 3}, std::move(w), true)});
  return c;
}

Network::Norm Network::add_norm(const std::string& name, std::size_t channels) {
  Norm n;
  n.groups = effective_groups(cfg_.norm_groups, channels);
  n.gamma = params_.size();
  params_.push_back({name + ".gamma", Tensor({channels}, 1.0, true)});
  n.beta = params_.size();
  params_.push_back({name + ".beta", Tensor({channels}, 0.0, true)});
  return n;
}

Network::Block Network::add_block(const std::string& name, std::size_t in, std::size_t out) {
  Block b;
  const BlockKind k = cfg_.block_kind;
  if (k == BlockKind::PreActivation) b.n1 = add_norm(name + ".norm1", in);
  b.c1 = add_conv(name + ".conv1", in, out, 3, 1, false);
  if (k == BlockKind::ResidualNorm) b.n1 = add_norm(name + ".norm1", out);
  if (k == BlockKind::PreActivation || k == BlockKind::ResidualNorm) b.n2 = add_norm(name + ".norm2", out);
  b.c2 = add_conv(name + ".conv2", out, out, 3, 1, false);
  if (k != BlockKind::Plain && in != out) {
    b.has_proj = true;
    b.proj = add_conv(name + ".proj", in, out, 1, 1, false);
  }
  return b;
}

Tensor Network::apply(const Conv& c, const Tensor& x) const {
  const Tensor& w = params_[c.w].tensor;
  Tensor y = c.transpose ? conv3d_transpose(x, w) : conv3d(x, w, c.stride);
  if (c.b >= 0) y = add_channel_bias(y, params_[static_cast<std::size_t>(c.b)].tensor);
  return y;
}

Tensor Network::apply(const Norm& n, const Tensor& x) const {
  return group_norm(x, n.groups, params_[n.gamma].tensor, params_[n.beta].tensor);
}

Tensor Network::apply(const Block& b, const Tensor& x) const {
  const Tensor skip = b.has_proj ? apply(b.proj, x) : x;
  switch (cfg_.block_kind) {
    case BlockKind::Plain:
      return relu(apply(b.c2, relu(apply(b.c1, x))));
    case BlockKind::Residual:
      return relu(add(apply(b.c2, relu(apply(b.c1, x))), skip));
    case BlockKind::ResidualNorm:
      return relu(add(apply(b.n2, apply(b.c2, relu(apply(b.n1, apply(b.c1, x))))), skip));
    case BlockKind::PreActivation:
      return add(apply(b.c2, relu(apply(b.n2, apply(b.c1, relu(apply(b.n1, x)))))), skip);
  }
  return x;
}

void Network::check_input(const Shape3& in) const {
  const std::size_t m = std::size_t{1} << (cfg_.levels - 1);
  if (in.d % m || in.h % m || in.w % m || in.size() == 0)
    throw Error(ErrorCode::IndivisibleShape, "spatial dims " + to_string(in) + " must be multiples of " +
                                                 std::to_string(m) + " for " + std::to_string(cfg_.levels) + " levels");
}

Shape3 Network::output_shape(const Shape3& in) const {
  check_input(in);
  return cfg_.upscaling_head ? in * 2 : in;
}

Tensor Network::forward(const Tensor& x, bool training, std::uint64_t dropout_seed) {
  if (x.shape().size() != 5 || x.dim(1) != cfg_.in_channels)
    throw Error(ErrorCode::ShapeMismatch, "network expects [N, " + std::to_string(cfg_.in_channels) +
                                              ", D, H, W], got " + to_string(x.shape()));
  check_input({x.dim(2), x.dim(3), x.dim(4)});
  const std::size_t L = cfg_.levels;
  Tensor h = spatial_dropout(apply(init_conv_, x), cfg_.dropout_rate, training, dropout_seed);
  std::vector<Tensor> skips(L);
  for (std::size_t l = 0; l < L; ++l) {
    if (l > 0) h = apply(down_[l - 1], h);
    for (const auto& b : encoder_[l]) h = apply(b, h);
    skips[l] = h;
  }
  for (std::size_t l = L - 1; l-- > 0;) {
    h = add(apply(up_[l], h), skips[l]);
    for (const auto& b : decoder_[l]) h = apply(b, h);
  }
  if (cfg_.upscaling_head) {
    const Tensor side = apply(head_skip_up_, apply(head_skip_conv_, skips[0]));
    h = relu(add(apply(head_up_, h), side));
  }
  return sigmoid(apply(out_conv_, h));
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void Network::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::size_t count_parameters(const NetworkConfig& cfg) { return Network(cfg).parameter_count(); }

void save_checkpoint(const Network& net, const std::string& stem, const nlohmann::ordered_json& metadata) {
  nlohmann::ordered_json m;
  m["format"] = "netseg-checkpoint-1";
  m["config"] = to_json(net.config());
  m["metadata"] = metadata.is_null() ? nlohmann::ordered_json::object() : metadata;
  m["blob"] = std::filesystem::path(stem + ".bin").filename().string();
  m["byte_order"] = "little";
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  std::vector<char> blob;
  for (const auto& p : net.parameters()) {
    params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
    for (double v : p.tensor.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      for (int b = 0; b < 8; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  }
  m["parameters"] = params;
  std::ofstream js(stem + ".json", std::ios::binary);
  js << m.dump(2) << "\n";
  std::ofstream bin(stem + ".bin", std::ios::binary);
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!js || !bin) throw Error(ErrorCode::Io, "cannot write checkpoint " + stem);
}

Network load_checkpoint(const std::string& stem, nlohmann::json* metadata) {
  std::ifstream js(stem + ".json", std::ios::binary);
  if (!js) throw Error(ErrorCode::Io, "cannot open checkpoint manifest " + stem + ".json");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("bad checkpoint manifest: ") + e.what());
  }
  Network net(network_config_from_json(m.at("config")));
  const auto dir = std::filesystem::path(stem + ".json").parent_path();
  std::ifstream bin(dir / m.at("blob").get<std::string>(), std::ios::binary);
  if (!bin) throw Error(ErrorCode::Io, "cannot open checkpoint blob for " + stem);
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const auto& plist = m.at("parameters");
  auto& params = net.parameters();
  if (plist.size() != params.size())
    throw Error(ErrorCode::ShapeMismatch, "checkpoint parameter list does not match its config");
  std::size_t off = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (plist[i].at("shape").get<TensorShape>() != params[i].tensor.shape())
      throw Error(ErrorCode::ShapeMismatch, "checkpoint parameter " + params[i].name + " has the wrong shape");
    for (auto& v : params[i].tensor.values()) {
      if (off + 8 > blob.size()) throw Error(ErrorCode::TruncatedFile, "checkpoint blob is too short");
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(blob[off + b]) << (8 * b);
      std::memcpy(&v, &bits, 8);
      off += 8;
    }
  }
  if (off != blob.size()) throw Error(ErrorCode::InvalidArgument, "checkpoint blob has trailing bytes");
  if (metadata) *metadata = m.value("metadata", nlohmann::json::object());
  return net;
}

}  // namespace netseg::nn
