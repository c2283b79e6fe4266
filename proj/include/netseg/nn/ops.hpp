#pragma once

#include <cstdint>
#include <vector>

#include "netseg/nn/tensor.hpp"

namespace netseg::nn {

// Volumetric tensors are laid out [N, C, D, H, W].

Tensor add(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Adds b[c] to every voxel of channel c.
Tensor add_channel_bias(const Tensor& x, const Tensor& b);

/// Cubic kernel of size 1 or 3 with zero padding k/2; weight [F, C, k, k, k].
/// Stride 2 halves each spatial dim (rounding up).
Tensor conv3d(const Tensor& x, const Tensor& w, std::size_t stride = 1);

/// Adjoint of the stride-2 3x3x3 convolution; weight [C_in, C_out, 3, 3, 3]; doubles each spatial dim.
Tensor conv3d_transpose(const Tensor& x, const Tensor& w);

/// Normalizes each (sample, channel group) to zero mean and unit variance, then applies the
/// per-channel affine gamma, beta. Throws BadGroupCount when groups does not divide C.
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Zeroes whole channels with probability rate and rescales the survivors. Identity outside training.
Tensor spatial_dropout(const Tensor& x, double rate, bool training, std::uint64_t seed);

/// Mean soft Dice loss over (sample, class) pairs; pred [N, S, ...], target of equal size.
Tensor soft_dice_loss(const Tensor& pred, const std::vector<double>& target, double smooth = 1.0);

Tensor sum(const Tensor& x);
/// sum_i x_i * r_i with a constant r.
Tensor dot(const Tensor& x, const std::vector<double>& r);

}  // namespace netseg::nn
