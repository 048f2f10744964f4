#pragma once

#include <string>
#include <vector>

#include "corrnet/autograd.hpp"
#include "corrnet/ops.hpp"
#include "corrnet/rng.hpp"

// Identification: a channel-reduced stack of parallel dilated 3D convolutions
// whose mixed output becomes a (-0.5, 0.5) attention map over the input
// features. Branch (i, j), i in 1..Ns and j in 1..Nt, uses dilation (j, i, i).
namespace corrnet::identification {

struct IdentificationConfig {
  std::size_t reduction = 16;
  std::size_t spatial_scales = 3;   // Ns
  std::size_t temporal_scales = 4;  // Nt
  std::size_t kernel_t = 3;
  std::size_t kernel_s = 3;
  std::size_t groups = 0;           // 0 = depthwise over the reduced channels
  bool zero_init_expand = false;    // zero expand weights/bias => M == 0 at init

  void validate(std::size_t channels) const;
  std::size_t reduced(std::size_t channels) const { return channels / reduction; }
  std::size_t groups_for(std::size_t reduced_channels) const { return groups == 0 ? reduced_channels : groups; }
  std::size_t branch_count() const { return spatial_scales * temporal_scales; }
  /// Flat index of branch (i, j), both 1-based.
  std::size_t branch_index(std::size_t i, std::size_t j) const { return (i - 1) * temporal_scales + (j - 1); }
  ops::Conv3dOptions branch_options(std::size_t reduced_channels, std::size_t i, std::size_t j) const;
};

template <typename R>
struct IdentificationParams {
  Var<R> reduce_w;               // [C/r, C]
  Var<R> reduce_b;               // [C/r]
  std::vector<Var<R>> branch_w;  // per branch [C/r, C/r/groups, kt, ks, ks]
  Var<R> sigma;                  // [Ns * Nt]
  Var<R> expand_w;               // [C, C/r]
  Var<R> expand_b;               // [C]

  static IdentificationParams create(ParameterSet<R>& params, const std::string& prefix, std::size_t channels,
                                     const IdentificationConfig& cfg, Rng& rng);
};

/// Per-block residual gain, initialised to zero.
template <typename R>
struct FusionParams {
  Var<R> alpha;
  static FusionParams create(ParameterSet<R>& params, const std::string& prefix);
};

template <typename R>
Var<R> reduce(Tape<R>& tape, const Var<R>& x, const IdentificationParams<R>& p);

/// sum_{i,j} sigma_{i,j} * Conv_{i,j}(x_r).
template <typename R>
Var<R> multiscale_mix(Tape<R>& tape, const Var<R>& x_r, const IdentificationParams<R>& p,
                      const IdentificationConfig& cfg);

/// sigmoid(expand(x_m)) - 0.5.
template <typename R>
Var<R> attention(Tape<R>& tape, const Var<R>& x_m, const IdentificationParams<R>& p);

/// Full map computation: attention(multiscale_mix(reduce(x))).
template <typename R>
Var<R> attention_maps(Tape<R>& tape, const Var<R>& x, const IdentificationParams<R>& p,
                      const IdentificationConfig& cfg);

/// x + alpha * (trajectory * M).
template <typename R>
Var<R> fuse(Tape<R>& tape, const Var<R>& x, const Var<R>& trajectory, const Var<R>& maps, const Var<R>& alpha);

}  // namespace corrnet::identification
