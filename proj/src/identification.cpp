#include "corrnet/identification.hpp"

#include <cmath>

namespace corrnet::identification {

void IdentificationConfig::validate(std::size_t channels) const {
  if (reduction == 0 || channels % reduction != 0) {
    throw std::invalid_argument("identification: channels " + std::to_string(channels) +
                                " not divisible by reduction " + std::to_string(reduction));
  }
  if (spatial_scales == 0 || temporal_scales == 0) {
    throw std::invalid_argument("identification: spatial and temporal scale counts must be >= 1");
  }
  if (kernel_t % 2 == 0 || kernel_s % 2 == 0) {
    throw std::invalid_argument("identification: base kernel extents must be odd");
  }
  const std::size_t g = groups_for(reduced(channels));
  if (g == 0 || reduced(channels) % g != 0) {
    throw std::invalid_argument("identification: reduced channels " + std::to_string(reduced(channels)) +
                                " not divisible by groups " + std::to_string(g));
  }
}

ops::Conv3dOptions IdentificationConfig::branch_options(std::size_t reduced_channels, std::size_t i,
                                                        std::size_t j) const {
  ops::Conv3dOptions o;
  o.groups = groups_for(reduced_channels);
  o.dilation = {j, i, i};
  o.padding = {j * (kernel_t - 1) / 2, i * (kernel_s - 1) / 2, i * (kernel_s - 1) / 2};
  return o;
}

template <typename R>
IdentificationParams<R> IdentificationParams<R>::create(ParameterSet<R>& params, const std::string& prefix,
                                                        std::size_t channels, const IdentificationConfig& cfg,
                                                        Rng& rng) {
  cfg.validate(channels);
  const std::size_t cr = cfg.reduced(channels);
  const std::size_t per_group = cr / cfg.groups_for(cr);
  IdentificationParams p;
  const double rb = std::sqrt(3.0 / static_cast<double>(channels));
  p.reduce_w = params.add(prefix + ".reduce.weight", rng.uniform_tensor<R>({cr, channels}, -rb, rb));
  p.reduce_b = params.add(prefix + ".reduce.bias", Tensor<R>({cr}));
  const double bb = std::sqrt(3.0 / static_cast<double>(per_group * cfg.kernel_t * cfg.kernel_s * cfg.kernel_s));
  for (std::size_t i = 1; i <= cfg.spatial_scales; ++i) {
    for (std::size_t j = 1; j <= cfg.temporal_scales; ++j) {
      p.branch_w.push_back(params.add(
          prefix + ".branch_s" + std::to_string(i) + "_t" + std::to_string(j) + ".weight",
          rng.uniform_tensor<R>({cr, per_group, cfg.kernel_t, cfg.kernel_s, cfg.kernel_s}, -bb, bb)));
    }
  }
  p.sigma = params.add(prefix + ".sigma",
                       Tensor<R>({cfg.branch_count()}, R(1) / static_cast<R>(cfg.branch_count())));
  const double eb = std::sqrt(3.0 / static_cast<double>(cr));
  p.expand_w = params.add(prefix + ".expand.weight", cfg.zero_init_expand
                                                         ? Tensor<R>({channels, cr})
                                                         : rng.uniform_tensor<R>({channels, cr}, -eb, eb));
  p.expand_b = params.add(prefix + ".expand.bias", Tensor<R>({channels}));
  return p;
}

template <typename R>
FusionParams<R> FusionParams<R>::create(ParameterSet<R>& params, const std::string& prefix) {
  return {params.add(prefix + ".alpha", Tensor<R>::scalar(R(0)))};
}

template <typename R>
Var<R> reduce(Tape<R>& tape, const Var<R>& x, const IdentificationParams<R>& p) {
  return ops::conv1x1x1(tape, x, p.reduce_w, p.reduce_b);
}

template <typename R>
Var<R> multiscale_mix(Tape<R>& tape, const Var<R>& x_r, const IdentificationParams<R>& p,
                      const IdentificationConfig& cfg) {
  if (p.branch_w.size() != cfg.branch_count()) {
    throw std::invalid_argument("multiscale_mix: parameters hold " + std::to_string(p.branch_w.size()) +
                                " branches, config expects " + std::to_string(cfg.branch_count()));
  }
  const std::size_t cr = x_r.shape()[1];
  std::vector<Var<R>> branches;
  branches.reserve(cfg.branch_count());
  for (std::size_t i = 1; i <= cfg.spatial_scales; ++i) {
    for (std::size_t j = 1; j <= cfg.temporal_scales; ++j) {
      branches.push_back(
          ops::conv3d(tape, x_r, p.branch_w[cfg.branch_index(i, j)], Var<R>{}, cfg.branch_options(cr, i, j)));
    }
  }
  return ops::weighted_sum<R>(tape, branches, p.sigma);
}

template <typename R>
Var<R> attention(Tape<R>& tape, const Var<R>& x_m, const IdentificationParams<R>& p) {
  return ops::sub_const(tape, ops::sigmoid(tape, ops::conv1x1x1(tape, x_m, p.expand_w, p.expand_b)), R(0.5));
}

template <typename R>
Var<R> attention_maps(Tape<R>& tape, const Var<R>& x, const IdentificationParams<R>& p,
                      const IdentificationConfig& cfg) {
  return attention(tape, multiscale_mix(tape, reduce(tape, x, p), p, cfg), p);
}

template <typename R>
Var<R> fuse(Tape<R>& tape, const Var<R>& x, const Var<R>& trajectory, const Var<R>& maps, const Var<R>& alpha) {
  require_same_shape(x.value(), trajectory.value(), "fuse");
  require_same_shape(x.value(), maps.value(), "fuse");
  return ops::add(tape, x, ops::scale_by(tape, alpha, ops::mul(tape, trajectory, maps)));
}

#define CORRNET_INSTANTIATE_IDENTIFICATION(R)                                                             \
  template struct IdentificationParams<R>;                                                                \
  template struct FusionParams<R>;                                                                        \
  template Var<R> reduce(Tape<R>&, const Var<R>&, const IdentificationParams<R>&);                        \
  template Var<R> multiscale_mix(Tape<R>&, const Var<R>&, const IdentificationParams<R>&,                 \
                                 const IdentificationConfig&);                                            \
  template Var<R> attention(Tape<R>&, const Var<R>&, const IdentificationParams<R>&);                     \
  template Var<R> attention_maps(Tape<R>&, const Var<R>&, const IdentificationParams<R>&,                 \
                                 const IdentificationConfig&);                                            \
  template Var<R> fuse(Tape<R>&, const Var<R>&, const Var<R>&, const Var<R>&, const Var<R>&);

CORRNET_INSTANTIATE_IDENTIFICATION(float)
CORRNET_INSTANTIATE_IDENTIFICATION(double)

}  // namespace corrnet::identification
