#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "corrnet/ctc.hpp"
#include "corrnet/ops.hpp"
#include "corrnet/rng.hpp"

using namespace corrnet;
using namespace corrnet::ctc;

namespace {

Tensor<double> log_table(std::size_t T, std::size_t K, const std::vector<double>& probs) {
  Tensor<double> t({T, K});
  for (std::size_t n = 0; n < probs.size(); ++n) t[n] = std::log(probs[n]);
  return t;
}

Tensor<double> random_log_probs(Rng& rng, std::size_t T, std::size_t K, double spread = 2.0) {
  Tensor<double> t({T, K});
  for (std::size_t s = 0; s < T; ++s) {
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(t[s * K + k] = rng.uniform(-spread, spread));
    for (std::size_t k = 0; k < K; ++k) t[s * K + k] -= std::log(z);
  }
  return t;
}

GlossSequence collapse(const std::vector<int>& path) {
  GlossSequence out;
  int prev = -1;
  for (int k : path) {
    if (k != prev && k != kBlank) out.push_back(k);
    prev = k;
  }
  return out;
}

// Probability of every collapsed sequence by enumerating all paths.
std::map<GlossSequence, double> sequence_probabilities(const Tensor<double>& lp) {
  const std::size_t T = lp.shape()[0], K = lp.shape()[1];
  std::map<GlossSequence, double> out;
  std::vector<int> path(T, 0);
  while (true) {
    double logp = 0.0;
    for (std::size_t t = 0; t < T; ++t) logp += lp[t * K + std::size_t(path[t])];
    out[collapse(path)] += std::exp(logp);
    std::size_t t = 0;
    while (t < T && ++path[t] == int(K)) path[t++] = 0;
    if (t == T) break;
  }
  return out;
}

GlossSequence random_label(Rng& rng, std::size_t frames, std::size_t V) {
  while (true) {
    GlossSequence l(1 + rng.below(frames));
    for (auto& g : l) g = 1 + int(rng.below(V));
    if (admissible(l, frames)) return l;
  }
}

}  // namespace

TEST(Ctc, SingleStep) {
  EXPECT_NEAR(ctc_loss_value(log_table(1, 2, {0.4, 0.6}), {1}), -std::log(0.6), 1e-12);
  EXPECT_NEAR(ctc_loss_value(log_table(1, 2, {0.4, 0.6}), {1}), 0.5108, 1e-4);
}

TEST(Ctc, TwoStepsUniform) {
  EXPECT_NEAR(ctc_loss_value(log_table(2, 2, {0.5, 0.5, 0.5, 0.5}), {1}), -std::log(0.75), 1e-12);
}

TEST(Ctc, AllMassOnOnePathGivesZero) {
  EXPECT_NEAR(ctc_loss_value(log_table(3, 3, {1e-300, 1, 1e-300, 1, 1e-300, 1e-300, 1e-300, 1e-300, 1}), {1, 2}),
              0.0, 1e-12);
}

TEST(Ctc, MatchesBruteForceOnRandomInstances) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 1 + rng.below(6), V = 1 + rng.below(4);
    const auto lp = random_log_probs(rng, T, V + 1);
    const auto label = random_label(rng, T, V);
    const double dp = ctc_loss_value(lp, label);
    EXPECT_NEAR(dp, brute_force_ctc(lp, label), 1e-9) << "T=" << T << " V=" << V;
    EXPECT_GE(dp, 0.0);
  }
}

TEST(Ctc, SingleSymbolSingleStepEnumeratesTwoPaths) {
  const auto lp = log_table(1, 2, {0.3, 0.7});
  EXPECT_NEAR(brute_force_ctc(lp, {1}), -std::log(0.7), 1e-12);
}

TEST(Ctc, BruteForceGuards) {
  Rng rng(2);
  EXPECT_THROW(brute_force_ctc(random_log_probs(rng, 9, 3), {1}), CtcError);
  EXPECT_THROW(brute_force_ctc(random_log_probs(rng, 2, 3), {1, 1}), CtcError);
}

TEST(Ctc, InadmissibleLabelRejected) {
  Rng rng(3);
  EXPECT_EQ(min_frames({1, 1, 2}), 4u);
  EXPECT_FALSE(admissible({1, 1}, 2));
  EXPECT_TRUE(admissible({1, 2}, 2));
  EXPECT_THROW(ctc_loss_value(random_log_probs(rng, 2, 3), {1, 1}), CtcError);
  EXPECT_THROW(ctc_loss_value(random_log_probs(rng, 2, 3), {1, 2, 1}), CtcError);
  EXPECT_THROW(ctc_loss_value(random_log_probs(rng, 2, 3), {3}), CtcError);
}

TEST(Ctc, UnnormalisedRowsRejected) {
  EXPECT_THROW(ctc_loss_value(log_table(1, 2, {0.5, 0.6}), {1}), CtcError);
  Tape<float> tape;
  Tensor<float> lp({1, 2});
  lp[0] = std::log(0.5f);
  lp[1] = std::log(0.50001f);
  EXPECT_NO_THROW(ctc_loss(tape, ops::constant(lp), {1}));
}

TEST(Ctc, LongSequencesStayFinite) {
  Rng rng(4);
  auto lp = random_log_probs(rng, 200, 7, 8.0);
  GlossSequence label;
  for (int i = 0; i < 60; ++i) label.push_back(1 + i % 6);
  const double loss = ctc_loss_value(lp, label);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_GT(loss, 0.0);
}

TEST(Ctc, TinyProbabilitiesDoNotProduceNan) {
  Tensor<double> lp({40, 3});
  for (std::size_t t = 0; t < 40; ++t) {
    lp[t * 3 + 0] = std::log(1.0 - 2e-30);
    lp[t * 3 + 1] = std::log(1e-30);
    lp[t * 3 + 2] = std::log(1e-30);
  }
  const double loss = ctc_loss_value(lp, {1, 2, 1, 2});
  EXPECT_FALSE(std::isnan(loss));
  EXPECT_GT(loss, 200.0);
}

TEST(Ctc, GreedyCollapse) {
  auto peaked = [](const std::vector<int>& argmax, std::size_t K) {
    Tensor<double> t({argmax.size(), K}, std::log(0.1 / double(K - 1)));
    for (std::size_t s = 0; s < argmax.size(); ++s) t[s * K + std::size_t(argmax[s])] = std::log(0.9);
    return t;
  };
  EXPECT_EQ(greedy_decode(peaked({0, 1, 1, 0, 2}, 3)), (GlossSequence{1, 2}));
  EXPECT_EQ(greedy_decode(peaked({0, 0, 0}, 3)), GlossSequence{});
  EXPECT_EQ(greedy_decode(peaked({1, 0, 1}, 3)), (GlossSequence{1, 1}));
  EXPECT_EQ(greedy_decode(Tensor<float>({2, 3}, -1.0f)), GlossSequence{});
  for (std::size_t w : {1, 2, 5}) {
    EXPECT_EQ(beam_decode(peaked({0, 1, 1, 0, 2}, 3), w), (GlossSequence{1, 2}));
    EXPECT_EQ(beam_decode(peaked({1, 0, 1}, 3), w), (GlossSequence{1, 1}));
  }
}

TEST(Ctc, WideBeamFindsMostProbableSequence) {
  Rng rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t T = 1 + rng.below(4), V = 1 + rng.below(3);
    const auto lp = random_log_probs(rng, T, V + 1);
    const auto probs = sequence_probabilities(lp);
    double best = -1.0;
    for (const auto& [seq, p] : probs) best = std::max(best, p);
    const auto decoded = beam_decode(lp, 256);
    EXPECT_NEAR(probs.at(decoded), best, 1e-12) << "trial " << trial;
  }
}

TEST(Ctc, BeamProbabilityImprovesWithWidthOnAverage) {
  // Per instance, a wider prefix beam can settle on a less probable sequence;
  // over many instances the decoded probability still rises with width.
  Rng rng(6);
  std::vector<double> mean(9, 0.0);
  std::size_t reversals = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = 2 + rng.below(4), V = 2 + rng.below(2);
    const auto lp = random_log_probs(rng, T, V + 1, 1.0);
    const auto probs = sequence_probabilities(lp);
    double best = 0.0;
    for (const auto& [seq, p] : probs) best = std::max(best, p);
    double prev = 0.0;
    for (std::size_t w = 1; w <= 8; ++w) {
      const double p = probs.at(beam_decode(lp, w));
      EXPECT_LE(p, best + 1e-15);
      mean[w] += p / 200.0;
      reversals += p < prev - 1e-15 ? 1 : 0;
      prev = p;
    }
  }
  for (std::size_t w = 2; w <= 8; ++w) EXPECT_GE(mean[w], mean[w - 1] - 1e-12) << "width " << w;
  EXPECT_LT(reversals, 200u * 7u / 4u);
  RecordProperty("per_instance_reversals", int(reversals));
}

TEST(Ctc, ZeroWidthRejected) {
  EXPECT_THROW(beam_decode(Tensor<double>({1, 2}), 0), std::invalid_argument);
}

TEST(Ctc, GradientFlowsToLogProbs) {
  Var<double> lp(log_table(2, 2, {0.5, 0.5, 0.5, 0.5}), true);
  Tape<double> tape;
  auto loss = ctc_loss(tape, lp, {1});
  tape.backward(loss);
  // path mass through (t, k) over total mass 3/4
  EXPECT_NEAR(lp.grad()[0], -(0.25 / 0.75), 1e-12);
  EXPECT_NEAR(lp.grad()[1], -(0.5 / 0.75), 1e-12);
}
