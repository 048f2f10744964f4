#include "corrnet/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace corrnet::ctc {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

template <typename R>
void check_instance(const Tensor<R>& lp, const GlossSequence& label) {
  if (lp.rank() != 2) throw CtcError("ctc: log-probabilities must be [T, V+1], got " + shape_str(lp.shape()));
  const std::size_t T = lp.shape()[0], V = lp.shape()[1];
  const double tol = std::is_same_v<R, double> ? 1e-6 : 1e-4;
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0;
    for (std::size_t v = 0; v < V; ++v) s += std::exp(static_cast<double>(lp[t * V + v]));
    if (std::abs(s - 1.0) > tol) {
      throw CtcError("ctc: probabilities at step " + std::to_string(t) + " sum to " + std::to_string(s));
    }
  }
  for (int g : label) {
    if (g <= kBlank || static_cast<std::size_t>(g) >= V) {
      throw CtcError("ctc: label id " + std::to_string(g) + " outside 1.." + std::to_string(V - 1));
    }
  }
  if (!admissible(label, T)) {
    throw CtcError("ctc: label of length " + std::to_string(label.size()) + " needs at least " +
                   std::to_string(min_frames(label)) + " frames, got " + std::to_string(T));
  }
}

struct Lattice {
  std::vector<int> ext;        // blank-augmented label
  std::vector<double> alpha;   // [T, S]
  double log_likelihood = kNegInf;
};

bool can_skip(const std::vector<int>& ext, std::size_t s) {
  return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
}

template <typename R>
Lattice forward(const Tensor<R>& lp, const GlossSequence& label) {
  const std::size_t T = lp.shape()[0], V = lp.shape()[1];
  Lattice L;
  L.ext.push_back(kBlank);
  for (int g : label) {
    L.ext.push_back(g);
    L.ext.push_back(kBlank);
  }
  const std::size_t S = L.ext.size();
  L.alpha.assign(T * S, kNegInf);
  auto logp = [&](std::size_t t, std::size_t s) { return static_cast<double>(lp[t * V + std::size_t(L.ext[s])]); };
  L.alpha[0] = logp(0, 0);
  if (S > 1) L.alpha[1] = logp(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = L.alpha[(t - 1) * S + s];
      if (s >= 1) acc = log_add(acc, L.alpha[(t - 1) * S + s - 1]);
      if (can_skip(L.ext, s)) acc = log_add(acc, L.alpha[(t - 1) * S + s - 2]);
      L.alpha[t * S + s] = acc == kNegInf ? kNegInf : acc + logp(t, s);
    }
  }
  double end = L.alpha[(T - 1) * S + S - 1];
  if (S > 1) end = log_add(end, L.alpha[(T - 1) * S + S - 2]);
  L.log_likelihood = end;
  return L;
}

}  // namespace

std::size_t min_frames(const GlossSequence& label) {
  std::size_t n = label.size();
  for (std::size_t i = 1; i < label.size(); ++i) {
    if (label[i] == label[i - 1]) ++n;
  }
  return n;
}

bool admissible(const GlossSequence& label, std::size_t frames) { return min_frames(label) <= frames; }

template <typename R>
Var<R> ctc_loss(Tape<R>& tape, const Var<R>& log_probs, const GlossSequence& label) {
  check_instance(log_probs.value(), label);
  Lattice L = forward(log_probs.value(), label);
  if (L.log_likelihood == kNegInf) throw CtcError("ctc: label has zero probability under the inputs");
  Var<R> out(Tensor<R>::scalar(static_cast<R>(-L.log_likelihood)), tape.wants({&log_probs}));
  if (out.requires_grad()) {
    tape.record("ctc_loss", [log_probs, out, L = std::move(L)] {
      if (!out.has_grad() || !log_probs.requires_grad()) return;
      const auto& lp = log_probs.value();
      const std::size_t T = lp.shape()[0], V = lp.shape()[1], S = L.ext.size();
      auto& dlp = log_probs.grad_buffer();
      std::vector<double> adj(T * S, 0.0);
      // loss = -lse(alpha[T-1][S-1], alpha[T-1][S-2])
      const double seed = static_cast<double>(out.grad()[0]);
      for (std::size_t s = (S > 1 ? S - 2 : S - 1); s < S; ++s) {
        const double a = L.alpha[(T - 1) * S + s];
        if (a != kNegInf) adj[(T - 1) * S + s] = -seed * std::exp(a - L.log_likelihood);
      }
      for (std::size_t t = T; t-- > 0;) {
        for (std::size_t s = 0; s < S; ++s) {
          const double g = adj[t * S + s];
          const double a = L.alpha[t * S + s];
          if (g == 0.0 || a == kNegInf) continue;
          const std::size_t v = std::size_t(L.ext[s]);
          dlp[t * V + v] += static_cast<R>(g);
          if (t == 0) continue;
          // alpha[t][s] = lse(predecessors) + lp[t][v]
          const double pre = a - static_cast<double>(lp[t * V + v]);
          auto pass = [&](std::size_t k) {
            const double ak = L.alpha[(t - 1) * S + k];
            if (ak != kNegInf) adj[(t - 1) * S + k] += g * std::exp(ak - pre);
          };
          pass(s);
          if (s >= 1) pass(s - 1);
          if (can_skip(L.ext, s)) pass(s - 2);
        }
      }
    });
  }
  return out;
}

double ctc_loss_value(const Tensor<double>& log_probs, const GlossSequence& label) {
  Tape<double> tape(Tape<double>::Mode::kInference);
  return ctc_loss(tape, Var<double>(log_probs), label).value().item();
}

double brute_force_ctc(const Tensor<double>& log_probs, const GlossSequence& label) {
  if (log_probs.rank() != 2) throw CtcError("brute_force_ctc: expected [T, V+1]");
  const std::size_t T = log_probs.shape()[0], V = log_probs.shape()[1];
  if (T > 8 || V > 5) throw CtcError("brute_force_ctc: instance exceeds T <= 8, |V| <= 4");
  std::vector<std::size_t> path(T, 0);
  double total = 0.0;
  for (;;) {
    GlossSequence collapsed;
    int prev = -1;
    double logp = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const int v = static_cast<int>(path[t]);
      logp += log_probs[t * V + path[t]];
      if (v != prev && v != kBlank) collapsed.push_back(v);
      prev = v;
    }
    if (collapsed == label) total += std::exp(logp);
    std::size_t k = 0;
    while (k < T && ++path[k] == V) path[k++] = 0;
    if (k == T) break;
  }
  if (total <= 0.0) throw CtcError("brute_force_ctc: label unreachable, loss is infinite");
  return -std::log(total);
}

template <typename R>
GlossSequence greedy_decode(const Tensor<R>& log_probs) {
  const std::size_t T = log_probs.shape()[0], V = log_probs.shape()[1];
  GlossSequence out;
  int prev = -1;
  for (std::size_t t = 0; t < T; ++t) {
    std::size_t best = 0;
    for (std::size_t v = 1; v < V; ++v) {
      if (log_probs[t * V + v] > log_probs[t * V + best]) best = v;
    }
    const int b = static_cast<int>(best);
    if (b != prev && b != kBlank) out.push_back(b);
    prev = b;
  }
  return out;
}

template <typename R>
GlossSequence beam_decode(const Tensor<R>& log_probs, std::size_t width) {
  if (width == 0) throw std::invalid_argument("beam_decode: width must be >= 1");
  const std::size_t T = log_probs.shape()[0], V = log_probs.shape()[1];
  struct Score {
    double blank = kNegInf;      // ending in blank
    double non_blank = kNegInf;  // ending in the last symbol
    double total() const { return log_add(blank, non_blank); }
  };
  using Beams = std::map<GlossSequence, Score>;
  Beams beams;
  beams[{}].blank = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    Beams next;
    const R* row = log_probs.ptr() + t * V;
    for (const auto& [prefix, sc] : beams) {
      const double p_blank = static_cast<double>(row[kBlank]);
      auto& same = next[prefix];
      same.blank = log_add(same.blank, sc.total() + p_blank);
      for (std::size_t v = 1; v < V; ++v) {
        const double p = static_cast<double>(row[v]);
        const int sym = static_cast<int>(v);
        GlossSequence ext = prefix;
        ext.push_back(sym);
        auto& grown = next[ext];
        if (!prefix.empty() && prefix.back() == sym) {
          grown.non_blank = log_add(grown.non_blank, sc.blank + p);
          auto& stay = next[prefix];
          stay.non_blank = log_add(stay.non_blank, sc.non_blank + p);
        } else {
          grown.non_blank = log_add(grown.non_blank, sc.total() + p);
        }
      }
    }
    std::vector<std::pair<GlossSequence, Score>> ranked(next.begin(), next.end());
    // std::map order makes ties resolve toward the lexicographically smaller prefix.
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second.total() > b.second.total(); });
    if (ranked.size() > width) ranked.resize(width);
    beams = Beams(ranked.begin(), ranked.end());
  }
  const GlossSequence* best = nullptr;
  double best_score = kNegInf;
  for (const auto& [prefix, sc] : beams) {
    if (!best || sc.total() > best_score) {
      best = &prefix;
      best_score = sc.total();
    }
  }
  return best ? *best : GlossSequence{};
}

template Var<float> ctc_loss(Tape<float>&, const Var<float>&, const GlossSequence&);
template Var<double> ctc_loss(Tape<double>&, const Var<double>&, const GlossSequence&);
template GlossSequence greedy_decode(const Tensor<float>&);
template GlossSequence greedy_decode(const Tensor<double>&);
template GlossSequence beam_decode(const Tensor<float>&, std::size_t);
template GlossSequence beam_decode(const Tensor<double>&, std::size_t);

}  // namespace corrnet::ctc
