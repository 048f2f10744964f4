#pragma once

#include <stdexcept>
#include <vector>

#include "corrnet/autograd.hpp"

// Connectionist temporal classification over log-probabilities [T, V + 1]
// with the blank at column 0; gloss ids run from 1 to V.
namespace corrnet::ctc {

using GlossSequence = std::vector<int>;

inline constexpr int kBlank = 0;

class CtcError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fewest frames that can emit `label`: its length plus one blank between
/// every pair of equal neighbours.
std::size_t min_frames(const GlossSequence& label);
bool admissible(const GlossSequence& label, std::size_t frames);

/// -log p(label | x) by log-space forward recursion. The adjoint replays the
/// recursion backwards, so the tape sees it as one primitive.
template <typename R>
Var<R> ctc_loss(Tape<R>& tape, const Var<R>& log_probs, const GlossSequence& label);

/// Convenience value-only form.
double ctc_loss_value(const Tensor<double>& log_probs, const GlossSequence& label);

/// Exhaustive sum over all (V+1)^T paths. Limited to T <= 8 and V <= 4.
double brute_force_ctc(const Tensor<double>& log_probs, const GlossSequence& label);

/// Best-path decoding: per-step argmax (lowest index on ties), collapse
/// repeats, drop blanks.
template <typename R>
GlossSequence greedy_decode(const Tensor<R>& log_probs);

/// Prefix beam search over collapsed sequences.
template <typename R>
GlossSequence beam_decode(const Tensor<R>& log_probs, std::size_t width);

}  // namespace corrnet::ctc
