#pragma once

#include <array>
#include <span>
#include <vector>

#include "corrnet/autograd.hpp"

// Differentiable primitives. Every function records its adjoint on the tape
// when at least one input requires a gradient. Video tensors are laid out as
// [T, C, H, W]; sequence tensors as [T, C].
namespace corrnet::ops {

template <typename R>
Var<R> constant(Tensor<R> value) {
  return Var<R>(std::move(value), false);
}

template <typename R>
Var<R> detach(const Var<R>& a) {
  return Var<R>(a.value(), false);
}

// ---- elementwise ---------------------------------------------------------

template <typename R>
Var<R> add(Tape<R>& tape, const Var<R>& a, const Var<R>& b);
template <typename R>
Var<R> sub(Tape<R>& tape, const Var<R>& a, const Var<R>& b);
template <typename R>
Var<R> mul(Tape<R>& tape, const Var<R>& a, const Var<R>& b);
template <typename R>
Var<R> scale(Tape<R>& tape, const Var<R>& a, R factor);
template <typename R>
Var<R> sub_const(Tape<R>& tape, const Var<R>& a, R c);
template <typename R>
Var<R> sigmoid(Tape<R>& tape, const Var<R>& a);
template <typename R>
Var<R> tanh(Tape<R>& tape, const Var<R>& a);
template <typename R>
Var<R> relu(Tape<R>& tape, const Var<R>& a);

/// s * a for a one-element `s` (learnable scalars such as fusion gains).
template <typename R>
Var<R> scale_by(Tape<R>& tape, const Var<R>& s, const Var<R>& a);

/// sum_k w[k] * xs[k]; all xs share a shape, w has xs.size() entries.
template <typename R>
Var<R> weighted_sum(Tape<R>& tape, std::span<const Var<R>> xs, const Var<R>& w);

// ---- reductions ----------------------------------------------------------

template <typename R>
Var<R> sum(Tape<R>& tape, const Var<R>& a);
template <typename R>
Var<R> mean(Tape<R>& tape, const Var<R>& a);
/// sum(a * weights) for a constant weight tensor; handy as a random projection.
template <typename R>
Var<R> dot_const(Tape<R>& tape, const Var<R>& a, const Tensor<R>& weights);

// ---- convolution and pooling --------------------------------------------

struct Conv3dOptions {
  std::size_t groups = 1;
  std::array<std::size_t, 3> dilation{1, 1, 1};  // (t, h, w)
  std::array<std::size_t, 3> padding{0, 0, 0};   // (t, h, w)
};

/// Grouped, dilated, zero-padded 3D convolution with stride 1.
/// x: [T, C, H, W]; weights: [C_out, C / groups, kt, kh, kw]; bias: [C_out] or
/// undefined. Kernel extents must be odd and the padding must keep every
/// output extent equal to the input extent.
template <typename R>
Var<R> conv3d(Tape<R>& tape, const Var<R>& x, const Var<R>& weights, const Var<R>& bias,
              const Conv3dOptions& opts);

/// Per-position channel projection. x: [T, C, H, W]; weights: [C_out, C].
template <typename R>
Var<R> conv1x1x1(Tape<R>& tape, const Var<R>& x, const Var<R>& weights, const Var<R>& bias);

/// Temporal convolution. x: [T, C]; weights: [C_out, C, k]; output [T + 2p - k + 1, C_out].
template <typename R>
Var<R> conv1d(Tape<R>& tape, const Var<R>& x, const Var<R>& weights, const Var<R>& bias,
              std::size_t padding);

/// Max pooling over time with stride = kernel. x: [T, C] -> [T / k, C].
template <typename R>
Var<R> max_pool1d(Tape<R>& tape, const Var<R>& x, std::size_t kernel);

/// Spatial max pooling per frame with stride = kernel. [T, C, H, W] -> [T, C, H/k, W/k].
template <typename R>
Var<R> max_pool2d(Tape<R>& tape, const Var<R>& x, std::size_t kernel);

/// Global average over (H, W). [T, C, H, W] -> [T, C].
template <typename R>
Var<R> spatial_mean(Tape<R>& tape, const Var<R>& x);

// ---- dense / sequence ----------------------------------------------------

/// x: [T, d]; weights: [out, d]; bias: [out] or undefined.
template <typename R>
Var<R> linear(Tape<R>& tape, const Var<R>& x, const Var<R>& weights, const Var<R>& bias);

template <typename R>
Var<R> select_row(Tape<R>& tape, const Var<R>& x, std::size_t row);
template <typename R>
Var<R> concat_rows(Tape<R>& tape, std::span<const Var<R>> rows);
template <typename R>
Var<R> concat_cols(Tape<R>& tape, const Var<R>& a, const Var<R>& b);
template <typename R>
Var<R> slice_cols(Tape<R>& tape, const Var<R>& x, std::size_t start, std::size_t count);
template <typename R>
Var<R> reverse_rows(Tape<R>& tape, const Var<R>& x);

template <typename R>
Var<R> log_softmax_rows(Tape<R>& tape, const Var<R>& x);

/// mean over rows t of KL(softmax(p[t]) || softmax(q[t])).
template <typename R>
Var<R> kl_rows(Tape<R>& tape, const Var<R>& p_logits, const Var<R>& q_logits);

}  // namespace corrnet::ops
