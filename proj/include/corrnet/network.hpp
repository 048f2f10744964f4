#pragma once

#include <optional>
#include <vector>

#include "corrnet/correlation.hpp"
#include "corrnet/ctc.hpp"
#include "corrnet/identification.hpp"

namespace corrnet::network {

struct LossWeights {
  double ctc = 1.0;  // final classifier CTC
  double ve = 1.0;   // auxiliary classifier CTC
  double va = 25.0;  // KL(final || auxiliary)
};

struct ModelConfig {
  std::size_t input_channels = 3;
  std::vector<std::size_t> widths{8, 16, 32, 64};
  std::vector<std::size_t> downsample{2, 2, 2, 1};
  std::vector<std::size_t> insertion{2, 3, 4};  // 1-based stage indices
  correlation::CorrelationConfig correlation;
  identification::IdentificationConfig identification;
  std::size_t temporal_channels = 64;
  std::size_t temporal_kernel = 5;
  std::size_t temporal_pool = 2;
  std::size_t hidden = 64;
  std::size_t recurrent_layers = 2;
  std::size_t vocabulary = 6;  // glosses, blank excluded
  LossWeights loss;

  void validate() const;
  std::size_t classes() const { return vocabulary + 1; }
  bool inserted(std::size_t stage) const;
  /// Shortest clip the temporal head accepts.
  std::size_t min_frames() const { return temporal_pool * temporal_pool; }
  /// Steps left after the two temporal pooling layers.
  std::size_t pooled_length(std::size_t frames) const { return frames / temporal_pool / temporal_pool; }
};

template <typename R>
struct LstmDirection {
  Var<R> w_ih, w_hh, bias;  // [4h, in], [4h, h], [4h]; gate order i, f, g, o
};

template <typename R>
struct CorrNetBlock {
  std::size_t stage = 0;
  correlation::CorrelationParams<R> correlation;
  identification::IdentificationParams<R> identification;
  identification::FusionParams<R> fusion;
};

/// Intermediate values of one inserted block, kept for map export.
template <typename R>
struct BlockTrace {
  std::size_t stage = 0;
  Var<R> input;
  correlation::TrajectoryResult<R> trajectory;
  Var<R> attention;
};

template <typename R>
struct ForwardResult {
  Var<R> final_logits;      // [T', V + 1]
  Var<R> auxiliary_logits;  // [T', V + 1]
  Var<R> frame_features;    // [T, C_last]
};

template <typename R>
struct LossTerms {
  Var<R> total;
  R ctc = 0, ve = 0, va = 0;
};

template <typename R>
class Model {
 public:
  /// Each parameter is drawn from a generator keyed by (seed, parameter name),
  /// so models that differ only in their insertion set share all common values.
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet<R>& params() { return params_; }
  const ParameterSet<R>& params() const { return params_; }
  const std::vector<CorrNetBlock<R>>& blocks() const { return blocks_; }

  ForwardResult<R> forward(Tape<R>& tape, const Tensor<R>& video,
                           std::vector<BlockTrace<R>>* trace = nullptr) const;

  /// Stacked bidirectional LSTM. features [T', d] -> [T', 2h].
  Var<R> bidirectional_recurrent(Tape<R>& tape, const Var<R>& features) const;

  LossTerms<R> total_loss(Tape<R>& tape, const ForwardResult<R>& out, const ctc::GlossSequence& label) const;

  ctc::GlossSequence decode(const ForwardResult<R>& out) const;

 private:
  Var<R> block_forward(Tape<R>& tape, const CorrNetBlock<R>& block, const Var<R>& x,
                       std::vector<BlockTrace<R>>* trace) const;

  ModelConfig config_;
  ParameterSet<R> params_;
  std::vector<Var<R>> stage_w_, stage_b_;
  std::vector<CorrNetBlock<R>> blocks_;
  Var<R> tconv1_w_, tconv1_b_, tconv2_w_, tconv2_b_;
  Var<R> aux_w_, aux_b_;
  std::vector<std::pair<LstmDirection<R>, LstmDirection<R>>> lstm_;  // (forward, backward) per layer
  Var<R> fc_w_, fc_b_;
};

/// One LSTM direction over rows of x; returns hidden states [T, h].
template <typename R>
Var<R> lstm_pass(Tape<R>& tape, const Var<R>& x, const LstmDirection<R>& dir, std::size_t hidden);

/// L = w_ctc * CTC(final) + w_ve * CTC(aux) + w_va * KL(softmax(final) || softmax(aux)).
/// The final logits enter the KL term as a fixed target (no gradient through it).
template <typename R>
LossTerms<R> combined_loss(Tape<R>& tape, const Var<R>& final_logits, const Var<R>& aux_logits,
                           const ctc::GlossSequence& label, const LossWeights& w);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace corrnet::network
