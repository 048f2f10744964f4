#pragma once

#include <string>

#include "corrnet/autograd.hpp"

// Cross-frame correlation: pixel-level dot-product affinities between a frame
// and its temporal neighbours, squashed into (-0.5, 0.5), then used as weights
// to pull neighbour features into the current frame from both directions.
namespace corrnet::correlation {

/// neighborhood == 0 selects the full frame; otherwise an odd window K
/// centred on the pixel, with positions outside the frame treated as zero.
struct CorrelationConfig {
  std::size_t neighborhood = 0;

  bool full() const { return neighborhood == 0; }
  /// Rejects an even window or one wider than 2 * max(H, W) - 1.
  void validate(std::size_t H, std::size_t W) const;
  /// Extents (Kh, Kw) of one pixel's neighbour table.
  std::pair<std::size_t, std::size_t> window(std::size_t H, std::size_t W) const;
};

template <typename R>
struct CorrelationParams {
  Var<R> beta_next;  // weight of the t+1 direction
  Var<R> beta_prev;  // weight of the t-1 direction

  static CorrelationParams create(ParameterSet<R>& params, const std::string& prefix);
};

/// A(i, j, a, b) = (1/C) sum_c x_t[c, i, j] * x_u[c, i', j'] for frames
/// [C, H, W]; result [H, W, Kh, Kw].
template <typename R>
Var<R> affinity(Tape<R>& tape, const Var<R>& x_t, const Var<R>& x_u, const CorrelationConfig& cfg);

/// sigmoid(A) - 0.5.
template <typename R>
Var<R> gate(Tape<R>& tape, const Var<R>& raw);

/// out[c, i, j] = sum_{a, b} A'(i, j, a, b) * x_u[c, i', j'], unnormalised.
template <typename R>
Var<R> aggregate(Tape<R>& tape, const Var<R>& gated, const Var<R>& x_u, const CorrelationConfig& cfg);

/// Video forms. For every frame t the neighbour is t + offset; frames without
/// a neighbour get all-zero maps and a zero aggregate.
/// video_affinity: x [T, C, H, W] -> [T, H, W, Kh, Kw].
template <typename R>
Var<R> video_affinity(Tape<R>& tape, const Var<R>& x, int offset, const CorrelationConfig& cfg);
/// video_aggregate: gated [T, H, W, Kh, Kw], x [T, C, H, W] -> [T, C, H, W].
template <typename R>
Var<R> video_aggregate(Tape<R>& tape, const Var<R>& gated, const Var<R>& x, int offset,
                       const CorrelationConfig& cfg);

template <typename R>
struct TrajectoryResult {
  Var<R> trajectory;  // [T, C, H, W]
  Var<R> gated_next;  // A' against t+1, [T, H, W, Kh, Kw]
  Var<R> gated_prev;  // A' against t-1
};

/// beta_next * agg(gate(aff(x_t, x_{t+1})), x_{t+1}) + beta_prev * agg(gate(aff(x_t, x_{t-1})), x_{t-1}).
template <typename R>
TrajectoryResult<R> bidirectional(Tape<R>& tape, const Var<R>& x, const CorrelationParams<R>& params,
                                  const CorrelationConfig& cfg);

}  // namespace corrnet::correlation
