#include "corrnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "corrnet/ops.hpp"
#include "corrnet/rng.hpp"

namespace corrnet::network {

void ModelConfig::validate() const {
  if (widths.empty()) throw std::invalid_argument("model: at least one stage is required");
  if (downsample.size() != widths.size()) {
    throw std::invalid_argument("model: downsample has " + std::to_string(downsample.size()) +
                                " entries for " + std::to_string(widths.size()) + " stages");
  }
  if (input_channels == 0) throw std::invalid_argument("model: input_channels must be positive");
  for (std::size_t s = 0; s < widths.size(); ++s) {
    if (widths[s] == 0) throw std::invalid_argument("model: stage widths must be positive");
    if (downsample[s] == 0) throw std::invalid_argument("model: downsample factors must be >= 1");
  }
  for (std::size_t stage : insertion) {
    if (stage < 1 || stage > widths.size()) {
      throw std::invalid_argument("model: insertion stage " + std::to_string(stage) + " is not a stage index (1.." +
                                  std::to_string(widths.size()) + ")");
    }
    identification.validate(widths[stage - 1]);
  }
  if (hidden == 0 || temporal_channels == 0 || recurrent_layers == 0) {
    throw std::invalid_argument("model: hidden, temporal_channels and recurrent_layers must be positive");
  }
  if (temporal_kernel % 2 == 0 || temporal_pool == 0) {
    throw std::invalid_argument("model: temporal kernel must be odd and pool positive");
  }
  if (vocabulary == 0) throw std::invalid_argument("model: vocabulary must be positive");
}

bool ModelConfig::inserted(std::size_t stage) const {
  return std::find(insertion.begin(), insertion.end(), stage) != insertion.end();
}

namespace {

std::uint64_t name_key(const std::string& name) {
  // FNV-1a; stable across platforms unlike std::hash.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename R>
Var<R> add_uniform(ParameterSet<R>& params, std::uint64_t seed, const std::string& name, Shape shape, double bound) {
  Rng rng(Rng::mix(seed, name_key(name)));
  return params.add(name, rng.uniform_tensor<R>(std::move(shape), -bound, bound));
}

template <typename R>
Var<R> add_zeros(ParameterSet<R>& params, const std::string& name, Shape shape) {
  return params.add(name, Tensor<R>(std::move(shape)));
}

}  // namespace

template <typename R>
Model<R>::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::size_t in = config_.input_channels;
  for (std::size_t s = 0; s < config_.widths.size(); ++s) {
    const std::size_t out = config_.widths[s];
    const std::string p = "stage" + std::to_string(s + 1);
    stage_w_.push_back(add_uniform(params_, seed, p + ".conv.weight", {out, in, 1, 3, 3}, std::sqrt(6.0 / double(in * 9))));
    stage_b_.push_back(add_zeros(params_, p + ".conv.bias", {out}));
    if (config_.inserted(s + 1)) {
      CorrNetBlock<R> b;
      b.stage = s + 1;
      const std::string bp = p + ".corrnet";
      b.correlation = correlation::CorrelationParams<R>::create(params_, bp + ".correlation");
      Rng rng(Rng::mix(seed, name_key(bp + ".identification")));
      b.identification =
          identification::IdentificationParams<R>::create(params_, bp + ".identification", out, config_.identification, rng);
      b.fusion = identification::FusionParams<R>::create(params_, bp);
      blocks_.push_back(std::move(b));
    }
    in = out;
  }
  const std::size_t d = config_.temporal_channels, k = config_.temporal_kernel;
  tconv1_w_ = add_uniform(params_, seed, "temporal.conv1.weight", {d, in, k}, std::sqrt(6.0 / double(in * k)));
  tconv1_b_ = add_zeros(params_, "temporal.conv1.bias", {d});
  tconv2_w_ = add_uniform(params_, seed, "temporal.conv2.weight", {d, d, k}, std::sqrt(6.0 / double(d * k)));
  tconv2_b_ = add_zeros(params_, "temporal.conv2.bias", {d});
  const std::size_t V = config_.classes();
  aux_w_ = add_uniform(params_, seed, "aux_classifier.weight", {V, d}, 1.0 / std::sqrt(double(d)));
  aux_b_ = add_zeros(params_, "aux_classifier.bias", {V});

  const std::size_t h = config_.hidden;
  const double lb = 1.0 / std::sqrt(double(h));
  std::size_t rin = d;
  for (std::size_t l = 0; l < config_.recurrent_layers; ++l) {
    auto make = [&](const std::string& dir) {
      const std::string p = "lstm.l" + std::to_string(l + 1) + "." + dir;
      return LstmDirection<R>{add_uniform(params_, seed, p + ".w_ih", {4 * h, rin}, lb),
                              add_uniform(params_, seed, p + ".w_hh", {4 * h, h}, lb),
                              add_uniform(params_, seed, p + ".bias", {4 * h}, lb)};
    };
    auto fwd = make("fwd");
    auto bwd = make("bwd");
    lstm_.emplace_back(fwd, bwd);
    rin = 2 * h;
  }
  fc_w_ = add_uniform(params_, seed, "classifier.weight", {V, 2 * h}, 1.0 / std::sqrt(double(2 * h)));
  fc_b_ = add_zeros(params_, "classifier.bias", {V});
}

template <typename R>
Var<R> Model<R>::block_forward(Tape<R>& tape, const CorrNetBlock<R>& block, const Var<R>& x,
                               std::vector<BlockTrace<R>>* trace) const {
  auto traj = correlation::bidirectional(tape, x, block.correlation, config_.correlation);
  auto maps = identification::attention_maps(tape, x, block.identification, config_.identification);
  auto out = identification::fuse(tape, x, traj.trajectory, maps, block.fusion.alpha);
  if (trace) trace->push_back({block.stage, x, traj, maps});
  return out;
}

template <typename R>
ForwardResult<R> Model<R>::forward(Tape<R>& tape, const Tensor<R>& video, std::vector<BlockTrace<R>>* trace) const {
  if (video.rank() != 4 || video.shape()[1] != config_.input_channels) {
    throw ShapeError("forward: video must be [T," + std::to_string(config_.input_channels) + ",H,W], got " +
                     shape_str(video.shape()));
  }
  const std::size_t T = video.shape()[0];
  if (T < config_.min_frames()) {
    throw std::invalid_argument("forward: clip has " + std::to_string(T) + " frames, at least " +
                                std::to_string(config_.min_frames()) + " are required");
  }
  Var<R> x = ops::constant(video);
  std::size_t next_block = 0;
  for (std::size_t s = 0; s < config_.widths.size(); ++s) {
    ops::Conv3dOptions conv;
    conv.padding = {0, 1, 1};
    x = ops::relu(tape, ops::conv3d(tape, x, stage_w_[s], stage_b_[s], conv));
    if (config_.downsample[s] > 1) x = ops::max_pool2d(tape, x, config_.downsample[s]);
    if (next_block < blocks_.size() && blocks_[next_block].stage == s + 1) {
      x = block_forward(tape, blocks_[next_block], x, trace);
      ++next_block;
    }
  }
  ForwardResult<R> out;
  out.frame_features = ops::spatial_mean(tape, x);
  const std::size_t pad = config_.temporal_kernel / 2;
  auto h = ops::relu(tape, ops::conv1d(tape, out.frame_features, tconv1_w_, tconv1_b_, pad));
  h = ops::max_pool1d(tape, h, config_.temporal_pool);
  h = ops::relu(tape, ops::conv1d(tape, h, tconv2_w_, tconv2_b_, pad));
  h = ops::max_pool1d(tape, h, config_.temporal_pool);
  out.auxiliary_logits = ops::linear(tape, h, aux_w_, aux_b_);
  out.final_logits = ops::linear(tape, bidirectional_recurrent(tape, h), fc_w_, fc_b_);
  return out;
}

template <typename R>
Var<R> lstm_pass(Tape<R>& tape, const Var<R>& x, const LstmDirection<R>& dir, std::size_t hidden) {
  const std::size_t T = x.shape()[0];
  auto proj = ops::linear(tape, x, dir.w_ih, dir.bias);  // [T, 4h]
  Var<R> h = ops::constant(Tensor<R>({1, hidden}));
  Var<R> c = ops::constant(Tensor<R>({1, hidden}));
  std::vector<Var<R>> states;
  states.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    auto gates = ops::add(tape, ops::select_row(tape, proj, t), ops::linear(tape, h, dir.w_hh, Var<R>{}));
    auto i = ops::sigmoid(tape, ops::slice_cols(tape, gates, 0, hidden));
    auto f = ops::sigmoid(tape, ops::slice_cols(tape, gates, hidden, hidden));
    auto g = ops::tanh(tape, ops::slice_cols(tape, gates, 2 * hidden, hidden));
    auto o = ops::sigmoid(tape, ops::slice_cols(tape, gates, 3 * hidden, hidden));
    c = ops::add(tape, ops::mul(tape, f, c), ops::mul(tape, i, g));
    h = ops::mul(tape, o, ops::tanh(tape, c));
    states.push_back(h);
  }
  return ops::concat_rows<R>(tape, states);
}

template <typename R>
Var<R> Model<R>::bidirectional_recurrent(Tape<R>& tape, const Var<R>& features) const {
  if (features.value().rank() != 2 || features.shape()[0] == 0) {
    throw ShapeError("bidirectional_recurrent: features must be [T', d], got " + shape_str(features.shape()));
  }
  Var<R> x = features;
  for (const auto& [fwd, bwd] : lstm_) {
    auto f = lstm_pass(tape, x, fwd, config_.hidden);
    auto b = ops::reverse_rows(tape, lstm_pass(tape, ops::reverse_rows(tape, x), bwd, config_.hidden));
    x = ops::concat_cols(tape, f, b);
  }
  return x;
}

template <typename R>
LossTerms<R> combined_loss(Tape<R>& tape, const Var<R>& final_logits, const Var<R>& aux_logits,
                           const ctc::GlossSequence& label, const LossWeights& w) {
  LossTerms<R> terms;
  auto ctc_final = ctc::ctc_loss(tape, ops::log_softmax_rows(tape, final_logits), label);
  auto ctc_aux = ctc::ctc_loss(tape, ops::log_softmax_rows(tape, aux_logits), label);
  auto va = ops::kl_rows(tape, ops::detach(final_logits), aux_logits);
  terms.ctc = ctc_final.value().item();
  terms.ve = ctc_aux.value().item();
  terms.va = va.value().item();
  terms.total = ops::add(tape,
                         ops::add(tape, ops::scale(tape, ctc_final, R(w.ctc)), ops::scale(tape, ctc_aux, R(w.ve))),
                         ops::scale(tape, va, R(w.va)));
  return terms;
}

template <typename R>
LossTerms<R> Model<R>::total_loss(Tape<R>& tape, const ForwardResult<R>& out, const ctc::GlossSequence& label) const {
  return combined_loss(tape, out.final_logits, out.auxiliary_logits, label, config_.loss);
}

template <typename R>
ctc::GlossSequence Model<R>::decode(const ForwardResult<R>& out) const {
  return ctc::greedy_decode(out.final_logits.value());
}

template class Model<float>;
template class Model<double>;
template Var<float> lstm_pass(Tape<float>&, const Var<float>&, const LstmDirection<float>&, std::size_t);
template Var<double> lstm_pass(Tape<double>&, const Var<double>&, const LstmDirection<double>&, std::size_t);
template LossTerms<float> combined_loss(Tape<float>&, const Var<float>&, const Var<float>&, const ctc::GlossSequence&,
                                        const LossWeights&);
template LossTerms<double> combined_loss(Tape<double>&, const Var<double>&, const Var<double>&,
                                         const ctc::GlossSequence&, const LossWeights&);

}  // namespace corrnet::network
