#include "netseg/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Core>

#include "netseg/error.hpp"
#include "netseg/metrics.hpp"

namespace netseg::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

void require_rank5(const Tensor& x, const char* op) {
  if (x.shape().size() != 5)
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + " expects [N,C,D,H,W], got " + to_string(x.shape()));
}

bool wants_grad(const Tensor::Node& self, std::size_t parent) { return self.parents[parent]->requires_grad; }

// ---------------------------------------------------------------------------
// convolution kernels (single sample)

struct ConvGeom {
  std::size_t C, D, H, W;  // input of the forward convolution
  std::size_t F;
  std::size_t k, stride, pad;
  std::size_t OD, OH, OW;

  std::size_t taps() const { return k * k * k; }
  std::size_t in_size() const { return C * D * H * W; }
  std::size_t out_plane() const { return OH * OW; }
  std::size_t out_size() const { return F * OD * OH * OW; }
};

ConvGeom make_geom(std::size_t C, std::size_t D, std::size_t H, std::size_t W, std::size_t F, std::size_t k,
                   std::size_t stride) {
  ConvGeom g{C, D, H, W, F, k, stride, k / 2, 0, 0, 0};
  g.OD = (D + 2 * g.pad - k) / stride + 1;
  g.OH = (H + 2 * g.pad - k) / stride + 1;
  g.OW = (W + 2 * g.pad - k) / stride + 1;
  return g;
}

// im2col works on slabs of whole output rows (fixed od, oh); a slab's column block stays cache resident
constexpr std::size_t kSlabColumns = 2048;

std::size_t slab_lines(const ConvGeom& g) { return std::max<std::size_t>(1, kSlabColumns / g.OW); }

bool is_pointwise(const ConvGeom& g) { return g.k == 1 && g.stride == 1; }

template <bool Scatter>
void im2col_slab(std::conditional_t<Scatter, double*, const double*> x, const ConvGeom& g, std::size_t r0,
                 std::size_t r1, std::conditional_t<Scatter, const double*, double*> cols) {
  const std::size_t ncols = (r1 - r0) * g.OW;
  const long s = static_cast<long>(g.stride), p = static_cast<long>(g.pad);
  const long D = static_cast<long>(g.D), H = static_cast<long>(g.H), W = static_cast<long>(g.W);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t kd = 0; kd < g.k; ++kd)
      for (std::size_t kh = 0; kh < g.k; ++kh)
        for (std::size_t kw = 0; kw < g.k; ++kw, ++row) {
          auto col = cols + row * ncols;
          // output columns whose input w index is in range
          const long kwl = static_cast<long>(kw);
          long ow_lo = 0;
          while (ow_lo < static_cast<long>(g.OW) && ow_lo * s - p + kwl < 0) ++ow_lo;
          long ow_hi = static_cast<long>(g.OW);
          while (ow_hi > ow_lo && (ow_hi - 1) * s - p + kwl >= W) --ow_hi;
          for (std::size_t r = r0; r < r1; ++r) {
            const std::size_t od = r / g.OH, oh = r % g.OH;
            const long id = static_cast<long>(od) * s - p + static_cast<long>(kd);
            const long ih = static_cast<long>(oh) * s - p + static_cast<long>(kh);
            auto line = col + (r - r0) * g.OW;
            if (id < 0 || id >= D || ih < 0 || ih >= H || ow_lo == ow_hi) {
              if constexpr (!Scatter) std::fill(line, line + g.OW, 0.0);
              continue;
            }
            // first in-range input element of this line; ow_lo * s - p + kw >= 0
            auto src = x + ((static_cast<long>(c) * D + id) * H + ih) * W + (ow_lo * s - p + kwl);
            if constexpr (Scatter) {
              if (s == 1)
                for (long ow = ow_lo; ow < ow_hi; ++ow) src[ow - ow_lo] += line[ow];
              else
                for (long ow = ow_lo; ow < ow_hi; ++ow) src[(ow - ow_lo) * s] += line[ow];
            } else {
              for (long ow = 0; ow < ow_lo; ++ow) line[ow] = 0.0;
              if (s == 1)
                for (long ow = ow_lo; ow < ow_hi; ++ow) line[ow] = src[ow - ow_lo];
              else
                for (long ow = ow_lo; ow < ow_hi; ++ow) line[ow] = src[(ow - ow_lo) * s];
              for (long ow = ow_hi; ow < static_cast<long>(g.OW); ++ow) line[ow] = 0.0;
            }
          }
        }
}

// out += conv(x, w)
void conv_forward(const double* x, const double* w, const ConvGeom& g, double* out, std::vector<double>& scratch) {
  const std::size_t ck = g.C * g.taps();
  Eigen::Map<const RowMat> wm(w, g.F, ck);
  Eigen::Map<RowMat> om(out, g.F, g.OD * g.out_plane());
  if (is_pointwise(g)) {
    om.noalias() += wm * Eigen::Map<const RowMat>(x, g.C, g.D * g.H * g.W);
    return;
  }
  const std::size_t step = slab_lines(g), lines = g.OD * g.OH;
  for (std::size_t r0 = 0; r0 < lines; r0 += step) {
    const std::size_t r1 = std::min(lines, r0 + step), n = (r1 - r0) * g.OW;
    scratch.resize(ck * n);
    im2col_slab<false>(x, g, r0, r1, scratch.data());
    om.middleCols(r0 * g.OW, n).noalias() += wm * Eigen::Map<const RowMat>(scratch.data(), ck, n);
  }
}

// dx += conv^T(dout, w)
void conv_backward_input(const double* dout, const double* w, const ConvGeom& g, double* dx,
                         std::vector<double>& scratch) {
  const std::size_t ck = g.C * g.taps();
  Eigen::Map<const RowMat> wm(w, g.F, ck);
  Eigen::Map<const RowMat> dm(dout, g.F, g.OD * g.out_plane());
  if (is_pointwise(g)) {
    Eigen::Map<RowMat>(dx, g.C, g.D * g.H * g.W).noalias() += wm.transpose() * dm;
    return;
  }
  const std::size_t step = slab_lines(g), lines = g.OD * g.OH;
  for (std::size_t r0 = 0; r0 < lines; r0 += step) {
    const std::size_t r1 = std::min(lines, r0 + step), n = (r1 - r0) * g.OW;
    scratch.resize(ck * n);
    Eigen::Map<RowMat>(scratch.data(), ck, n).noalias() = wm.transpose() * dm.middleCols(r0 * g.OW, n);
    im2col_slab<true>(dx, g, r0, r1, scratch.data());
  }
}

// dw += dout * im2col(x)^T
void conv_backward_weight(const double* x, const double* dout, const ConvGeom& g, double* dw,
                          std::vector<double>& scratch) {
  const std::size_t ck = g.C * g.taps();
  Eigen::Map<RowMat> wm(dw, g.F, ck);
  Eigen::Map<const RowMat> dm(dout, g.F, g.OD * g.out_plane());
  if (is_pointwise(g)) {
    wm.noalias() += dm * Eigen::Map<const RowMat>(x, g.C, g.D * g.H * g.W).transpose();
    return;
  }
  const std::size_t step = slab_lines(g), lines = g.OD * g.OH;
  for (std::size_t r0 = 0; r0 < lines; r0 += step) {
    const std::size_t r1 = std::min(lines, r0 + step), n = (r1 - r0) * g.OW;
    scratch.resize(ck * n);
    im2col_slab<false>(x, g, r0, r1, scratch.data());
    wm.noalias() += dm.middleCols(r0 * g.OW, n) * Eigen::Map<const RowMat>(scratch.data(), ck, n).transpose();
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Tensor::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(self, p)) continue;
      auto& g = self.parents[p]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](Tensor::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (self.value[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.values());
  for (auto& v : out) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](Tensor::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  require_rank5(x, "add_channel_bias");
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.numel() / (N * C);
  if (b.numel() != C) throw Error(ErrorCode::ShapeMismatch, "bias length must equal the channel count");
  std::vector<double> out(x.values());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double* o = out.data() + (n * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) o[i] += b.values()[c];
    }
  return Tensor::make_result(x.shape(), std::move(out), {x, b}, [N, C, S](Tensor::Node& self) {
    if (wants_grad(self, 0)) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      auto& gb = self.parents[1]->ensure_grad();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const double* d = self.grad.data() + (n * C + c) * S;
          double acc = 0.0;
          for (std::size_t i = 0; i < S; ++i) acc += d[i];
          gb[c] += acc;
        }
    }
  });
}

Tensor conv3d(const Tensor& x, const Tensor& w, std::size_t stride) {
  require_rank5(x, "conv3d");
  require_rank5(w, "conv3d weight");
  const std::size_t k = w.dim(2);
  if ((k != 1 && k != 3) || w.dim(3) != k || w.dim(4) != k)
    throw Error(ErrorCode::ShapeMismatch, "conv3d supports cubic kernels of size 1 or 3, got " + to_string(w.shape()));
  if (stride != 1 && stride != 2) throw Error(ErrorCode::InvalidArgument, "conv3d stride must be 1 or 2");
  if (w.dim(1) != x.dim(1))
    throw Error(ErrorCode::ShapeMismatch, "conv3d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                                              std::to_string(w.dim(1)));
  const std::size_t N = x.dim(0);
  const ConvGeom g = make_geom(x.dim(1), x.dim(2), x.dim(3), x.dim(4), w.dim(0), k, stride);
  std::vector<double> out(N * g.out_size(), 0.0);
  std::vector<double> scratch;
  for (std::size_t n = 0; n < N; ++n)
    conv_forward(x.values().data() + n * g.in_size(), w.values().data(), g, out.data() + n * g.out_size(), scratch);
  return Tensor::make_result({N, g.F, g.OD, g.OH, g.OW}, std::move(out), {x, w}, [g, N](Tensor::Node& self) {
    std::vector<double> scratch;
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    if (wants_grad(self, 0)) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t n = 0; n < N; ++n)
        conv_backward_input(self.grad.data() + n * g.out_size(), wv.data(), g, gx.data() + n * g.in_size(), scratch);
    }
    if (wants_grad(self, 1)) {
      auto& gw = self.parents[1]->ensure_grad();
      for (std::size_t n = 0; n < N; ++n)
        conv_backward_weight(xv.data() + n * g.in_size(), self.grad.data() + n * g.out_size(), g, gw.data(), scratch);
    }
  });
}

Tensor conv3d_transpose(const Tensor& x, const Tensor& w) {
  require_rank5(x, "conv3d_transpose");
  require_rank5(w, "conv3d_transpose weight");
  if (w.dim(2) != 3 || w.dim(3) != 3 || w.dim(4) != 3)
    throw Error(ErrorCode::ShapeMismatch, "conv3d_transpose expects a 3x3x3 kernel, got " + to_string(w.shape()));
  if (w.dim(0) != x.dim(1))
    throw Error(ErrorCode::ShapeMismatch, "conv3d_transpose: input has " + std::to_string(x.dim(1)) +
                                              " channels, weight expects " + std::to_string(w.dim(0)));
  const std::size_t N = x.dim(0);
  // geometry of the stride-2 convolution this operator is the adjoint of
  const ConvGeom g = make_geom(w.dim(1), 2 * x.dim(2), 2 * x.dim(3), 2 * x.dim(4), w.dim(0), 3, 2);
  std::vector<double> out(N * g.in_size(), 0.0);
  std::vector<double> scratch;
  for (std::size_t n = 0; n < N; ++n)
    conv_backward_input(x.values().data() + n * g.out_size(), w.values().data(), g, out.data() + n * g.in_size(),
                        scratch);
  return Tensor::make_result({N, g.C, g.D, g.H, g.W}, std::move(out), {x, w}, [g, N](Tensor::Node& self) {
    std::vector<double> scratch;
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    if (wants_grad(self, 0)) {
      auto& gx = self.parents[0]->ensure_grad();
      for (std::size_t n = 0; n < N; ++n)
        conv_forward(self.grad.data() + n * g.in_size(), wv.data(), g, gx.data() + n * g.out_size(), scratch);
    }
    if (wants_grad(self, 1)) {
      auto& gw = self.parents[1]->ensure_grad();
      for (std::size_t n = 0; n < N; ++n)
        conv_backward_weight(self.grad.data() + n * g.in_size(), xv.data() + n * g.out_size(), g, gw.data(), scratch);
    }
  });
}

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.shape().size() < 2) throw Error(ErrorCode::ShapeMismatch, "group_norm expects [N, C, ...]");
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.numel() / (N * C);
  if (groups == 0 || C % groups != 0)
    throw Error(ErrorCode::BadGroupCount,
                std::to_string(groups) + " groups do not divide " + std::to_string(C) + " channels");
  if (gamma.numel() != C || beta.numel() != C)
    throw Error(ErrorCode::ShapeMismatch, "group_norm affine parameters must have one entry per channel");
  const std::size_t cpg = C / groups, M = cpg * S;
  std::vector<double> xhat(x.numel()), invstd(N * groups), out(x.numel());
  const auto& xv = x.values();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = (n * C + gi * cpg) * S;
      double mean = 0.0;
      for (std::size_t i = 0; i < M; ++i) mean += xv[base + i];
      mean /= static_cast<double>(M);
      double var = 0.0;
      for (std::size_t i = 0; i < M; ++i) var += (xv[base + i] - mean) * (xv[base + i] - mean);
      var /= static_cast<double>(M);
      const double is = 1.0 / std::sqrt(var + eps);
      invstd[n * groups + gi] = is;
      for (std::size_t i = 0; i < M; ++i) {
        const std::size_t c = gi * cpg + i / S;
        xhat[base + i] = (xv[base + i] - mean) * is;
        out[base + i] = xhat[base + i] * gamma.values()[c] + beta.values()[c];
      }
    }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [N, C, S, groups, cpg, M, xhat = std::move(xhat), invstd = std::move(invstd)](Tensor::Node& self) {
        const auto& gam = self.parents[1]->value;
        const auto& dy = self.grad;
        if (wants_grad(self, 1) || wants_grad(self, 2)) {
          std::vector<double> dg(C, 0.0), db(C, 0.0);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t base = (n * C + c) * S;
              for (std::size_t i = 0; i < S; ++i) {
                dg[c] += dy[base + i] * xhat[base + i];
                db[c] += dy[base + i];
              }
            }
          if (wants_grad(self, 1)) {
            auto& g = self.parents[1]->ensure_grad();
            for (std::size_t c = 0; c < C; ++c) g[c] += dg[c];
          }
          if (wants_grad(self, 2)) {
            auto& g = self.parents[2]->ensure_grad();
            for (std::size_t c = 0; c < C; ++c) g[c] += db[c];
          }
        }
        if (!wants_grad(self, 0)) return;
        auto& gx = self.parents[0]->ensure_grad();
        const double m = static_cast<double>(M);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t gi = 0; gi < groups; ++gi) {
            const std::size_t base = (n * C + gi * cpg) * S;
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::size_t i = 0; i < M; ++i) {
              const double d = dy[base + i] * gam[gi * cpg + i / S];
              sum_d += d;
              sum_dx += d * xhat[base + i];
            }
            const double is = invstd[n * groups + gi];
            for (std::size_t i = 0; i < M; ++i) {
              const double d = dy[base + i] * gam[gi * cpg + i / S];
              gx[base + i] += is / m * (m * d - sum_d - xhat[base + i] * sum_dx);
            }
          }
      });
}

Tensor spatial_dropout(const Tensor& x, double rate, bool training, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorCode::InvalidArgument, "dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  if (x.shape().size() < 2) throw Error(ErrorCode::ShapeMismatch, "spatial_dropout expects [N, C, ...]");
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.numel() / (N * C);
  std::mt19937_64 rng(seed);
  std::vector<double> scale(N * C);
  for (auto& s : scale) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    s = u < rate ? 0.0 : 1.0 / (1.0 - rate);
  }
  std::vector<double> out(x.values());
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t i = 0; i < S; ++i) out[nc * S + i] *= scale[nc];
  return Tensor::make_result(x.shape(), std::move(out), {x}, [S, scale = std::move(scale)](Tensor::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t nc = 0; nc < scale.size(); ++nc)
      for (std::size_t i = 0; i < S; ++i) g[nc * S + i] += self.grad[nc * S + i] * scale[nc];
  });
}

Tensor soft_dice_loss(const Tensor& pred, const std::vector<double>& target, double smooth) {
  if (pred.shape().size() < 2) throw Error(ErrorCode::ShapeMismatch, "soft_dice_loss expects [N, S, ...]");
  if (target.size() != pred.numel())
    throw Error(ErrorCode::ShapeMismatch, "soft_dice_loss: target has " + std::to_string(target.size()) +
                                              " values, prediction " + std::to_string(pred.numel()));
  const std::size_t N = pred.dim(0), S = pred.dim(1), V = pred.numel() / (N * S);
  double loss = 0.0;
  std::vector<double> grad(pred.numel());
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<std::vector<double>> p(S), t(S);
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t base = (n * S + s) * V;
      p[s].assign(pred.values().begin() + base, pred.values().begin() + base + V);
      t[s].assign(target.begin() + base, target.begin() + base + V);
    }
    const auto r = netseg::soft_dice_loss(p, t, smooth, pred.requires_grad());
    loss += r.loss / static_cast<double>(N);
    if (pred.requires_grad())
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t i = 0; i < V; ++i) grad[(n * S + s) * V + i] = r.grad[s][i] / static_cast<double>(N);
  }
  return Tensor::make_result({1}, {loss}, {pred}, [grad = std::move(grad)](Tensor::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return Tensor::make_result({1}, {s}, {x}, [](Tensor::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor dot(const Tensor& x, const std::vector<double>& r) {
  if (r.size() != x.numel()) throw Error(ErrorCode::ShapeMismatch, "dot: weight length differs from tensor size");
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += x.values()[i] * r[i];
  return Tensor::make_result({1}, {s}, {x}, [r](Tensor::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * r[i];
  });
}

}  // namespace netseg::nn
