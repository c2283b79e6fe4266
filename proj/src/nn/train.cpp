#include "netseg/nn/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "netseg/error.hpp"
#include "netseg/nn/ops.hpp"

namespace netseg::nn {

void Adam::step(std::vector<Parameter>& params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params[i].tensor;
    if (!t.has_grad()) continue;
    auto& w = t.values();
    const auto& g = t.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.lr0 * std::pow(1.0 - cfg.decay_per_epoch, static_cast<double>(epoch));
}

bool EarlyStopping::update(double score) {
  if (seen_++ == 0 || score > best_ + cfg_.min_delta) {
    best_ = score;
    best_epoch_ = seen_ - 1;
    wait_ = 0;
    return false;
  }
  return ++wait_ >= cfg_.patience;
}

std::string TrainLog::to_csv() const {
  std::string out = "epoch,lr,loss";
  for (const auto& s : segment_names) out += ",dice_" + s;
  out += "\n";
  char buf[64];
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch);
    std::snprintf(buf, sizeof buf, ",%.10g,%.10g", e.lr, e.loss);
    out += buf;
    for (double d : e.dice) {
      std::snprintf(buf, sizeof buf, ",%.10g", d);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::vector<double> segment_dice(const std::vector<double>& prob, const std::vector<double>& target,
                                 std::size_t segments, double threshold) {
  if (prob.size() != target.size() || segments == 0 || prob.size() % segments)
    throw Error(ErrorCode::ShapeMismatch, "prediction and target layouts differ");
  const std::size_t V = prob.size() / segments;
  std::vector<double> out(segments);
  for (std::size_t s = 0; s < segments; ++s) {
    std::size_t a = 0, b = 0, both = 0;
    for (std::size_t i = s * V; i < (s + 1) * V; ++i) {
      const bool p = prob[i] >= threshold, t = target[i] >= 0.5;
      a += p;
      b += t;
      both += p && t;
    }
    out[s] = a + b == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
  }
  return out;
}

namespace {

Tensor input_tensor(const Network& net, const Sample& s) {
  return Tensor({1, net.config().in_channels, s.input_shape.d, s.input_shape.h, s.input_shape.w}, s.input);
}

void check_sample(const Network& net, const Sample& s) {
  const auto& c = net.config();
  if (s.input.size() != c.in_channels * s.input_shape.size())
    throw Error(ErrorCode::ShapeMismatch, "sample " + s.id + ": input size does not match its shape");
  if (net.output_shape(s.input_shape) != s.target_shape || s.target.size() != c.out_segments * s.target_shape.size())
    throw Error(ErrorCode::ShapeMismatch, "sample " + s.id + ": target shape " + to_string(s.target_shape) +
                                              " does not match the network output " +
                                              to_string(net.output_shape(s.input_shape)));
}

/// Crop offset for one training step, biased toward target foreground.
Shape3 draw_offset(const Sample& s, const Shape3& patch, double fg_fraction, std::mt19937_64& rng) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  const Shape3& in = s.input_shape;
  auto clamp_start = [](std::size_t centre, std::size_t size, std::size_t extent) {
    const std::size_t half = size / 2;
    const std::size_t start = centre > half ? centre - half : 0;
    return std::min(start, extent - size);
  };
  if (u < fg_fraction) {
    const std::size_t f = s.target_shape.d / in.d;
    const std::size_t tv = s.target_shape.size();
    std::vector<std::size_t> fg;
    for (std::size_t i = 0; i < s.target.size(); ++i)
      if (s.target[i] >= 0.5) fg.push_back(i % tv);
    if (!fg.empty()) {
      const std::size_t n = fg[rng() % fg.size()];
      const std::size_t w = n % s.target_shape.w, h = (n / s.target_shape.w) % s.target_shape.h,
                        d = n / (s.target_shape.w * s.target_shape.h);
      return {clamp_start(d / f, patch.d, in.d), clamp_start(h / f, patch.h, in.h), clamp_start(w / f, patch.w, in.w)};
    }
  }
  return {rng() % (in.d - patch.d + 1), rng() % (in.h - patch.h + 1), rng() % (in.w - patch.w + 1)};
}

}  // namespace

Sample crop_sample(const Sample& s, const Shape3& o, const Shape3& size) {
  const Shape3& in = s.input_shape;
  if (o.d + size.d > in.d || o.h + size.h > in.h || o.w + size.w > in.w)
    throw Error(ErrorCode::TargetTooLarge, "crop exceeds sample bounds");
  const std::size_t f = s.target_shape.d / in.d;
  const std::size_t C = s.input.size() / in.size(), S = s.target.size() / s.target_shape.size();
  Sample out;
  out.id = s.id;
  out.input_shape = size;
  out.target_shape = size * f;
  auto copy = [](const std::vector<double>& src, const Shape3& sh, std::size_t channels, const Shape3& off,
                 const Shape3& sz, std::vector<double>& dst) {
    dst.reserve(channels * sz.size());
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < sz.d; ++i)
        for (std::size_t j = 0; j < sz.h; ++j) {
          const auto* row = src.data() + ((c * sh.d + off.d + i) * sh.h + off.h + j) * sh.w + off.w;
          dst.insert(dst.end(), row, row + sz.w);
        }
  };
  copy(s.input, in, C, o, size, out.input);
  copy(s.target, s.target_shape, S, {o.d * f, o.h * f, o.w * f}, out.target_shape, out.target);
  return out;
}

std::vector<double> predict(Network& net, const Sample& sample) {
  NoGradGuard guard;
  return net.forward(input_tensor(net, sample), false).values();
}

TrainLog train(Network& net, const std::vector<Sample>& samples, const TrainConfig& cfg,
               const std::vector<Sample>* validation, std::vector<std::string> segment_names) {
  if (samples.empty()) throw Error(ErrorCode::EmptyDataset, "no training samples");
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw Error(ErrorCode::InvalidArgument, "batch size and epochs must be positive");
  for (const auto& s : samples) check_sample(net, s);
  if (cfg.patch) {
    net.check_input(*cfg.patch);
    for (const auto& s : samples)
      if (cfg.patch->d > s.input_shape.d || cfg.patch->h > s.input_shape.h || cfg.patch->w > s.input_shape.w)
        throw Error(ErrorCode::TargetTooLarge, "patch " + to_string(*cfg.patch) + " exceeds sample " + s.id);
    if (cfg.patches_per_sample == 0) throw Error(ErrorCode::InvalidArgument, "patches_per_sample must be positive");
  }
  if (validation)
    for (const auto& s : *validation) check_sample(net, s);
  const std::size_t S = net.config().out_segments;
  if (segment_names.empty())
    for (std::size_t s = 0; s < S; ++s) segment_names.push_back("s" + std::to_string(s));
  if (segment_names.size() != S) throw Error(ErrorCode::ModelSegmentMismatch, "segment name count differs from outputs");
  if (cfg.early_stop && cfg.early_stop->monitor >= S)
    throw Error(ErrorCode::InvalidArgument, "early-stopping monitor index out of range");

  TrainLog log;
  log.segment_names = std::move(segment_names);
  Adam opt;
  std::optional<EarlyStopping> stopper;
  if (cfg.early_stop) stopper.emplace(*cfg.early_stop);
  std::mt19937_64 rng(cfg.seed);
  const std::size_t reps = cfg.patch ? cfg.patches_per_sample : 1;
  std::vector<std::size_t> order(samples.size() * reps);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t C = net.config().in_channels;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      std::vector<Sample> crops;
      auto fetch = [&](std::size_t i) -> const Sample& {
        const Sample& s = samples[order[i] % samples.size()];
        if (!cfg.patch) return s;
        crops.push_back(crop_sample(s, draw_offset(s, *cfg.patch, cfg.foreground_fraction, rng), *cfg.patch));
        return crops.back();
      };
      crops.reserve(b1 - b0);
      const Sample& first = fetch(b0);
      std::vector<double> x, y;
      for (std::size_t i = b0; i < b1; ++i) {
        const Sample& s = i == b0 ? first : fetch(i);
        if (s.input_shape != first.input_shape)
          throw Error(ErrorCode::ShapeMismatch, "samples in one batch must share a shape");
        x.insert(x.end(), s.input.begin(), s.input.end());
        y.insert(y.end(), s.target.begin(), s.target.end());
      }
      Tensor xt({b1 - b0, C, first.input_shape.d, first.input_shape.h, first.input_shape.w}, std::move(x));
      net.zero_grad();
      Tensor loss = soft_dice_loss(net.forward(xt, true, rng()), y);
      if (!std::isfinite(loss.item()))
        throw Error(ErrorCode::NonFiniteLoss, "loss became " + std::to_string(loss.item()) + " at epoch " +
                                                  std::to_string(epoch) + ", batch starting with " + first.id);
      loss.backward();
      opt.step(net.parameters(), lr);
      loss_sum += loss.item();
      ++batches;
    }
    EpochLog e;
    e.epoch = epoch;
    e.lr = lr;
    e.loss = loss_sum / static_cast<double>(batches);
    const auto& monitored = validation && !validation->empty() ? *validation : samples;
    e.dice.assign(S, 0.0);
    for (const auto& s : monitored) {
      const auto d = segment_dice(predict(net, s), s.target, S, cfg.threshold);
      for (std::size_t k = 0; k < S; ++k) e.dice[k] += d[k] / static_cast<double>(monitored.size());
    }
    log.epochs.push_back(e);
    if (stopper && stopper->update(e.dice[cfg.early_stop->monitor])) {
      log.stopped_early = true;
      break;
    }
  }
  return log;
}

}  // namespace netseg::nn
