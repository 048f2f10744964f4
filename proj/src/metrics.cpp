#include "corrnet/metrics.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace corrnet::metrics {

EditBreakdown edit_ops(const GlossSequence& reference, const GlossSequence& hypothesis) {
  if (reference.empty()) throw std::invalid_argument("edit_ops: empty reference, WER undefined");
  const std::size_t m = reference.size(), n = hypothesis.size();
  std::vector<std::size_t> d((m + 1) * (n + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (n + 1) + j]; };
  for (std::size_t i = 0; i <= m; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= n; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i, j - 1) + 1, at(i - 1, j) + 1});
    }
  }

  EditBreakdown b;
  b.reference_length = m;
  std::size_t i = m, j = n;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool match = reference[i - 1] == hypothesis[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (match ? 0 : 1)) {
        if (!match) ++b.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
      ++b.insertions;
      --j;
    } else {
      ++b.deletions;
      --i;
    }
  }
  return b;
}

double wer(const EditBreakdown& b) {
  if (b.reference_length == 0) throw std::invalid_argument("wer: reference length must be positive");
  return static_cast<double>(b.total()) / static_cast<double>(b.reference_length);
}

CorpusWer corpus_wer(const std::vector<std::pair<GlossSequence, GlossSequence>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("corpus_wer: empty corpus");
  CorpusWer c;
  for (const auto& [ref, hyp] : pairs) {
    const auto b = edit_ops(ref, hyp);
    c.totals.substitutions += b.substitutions;
    c.totals.insertions += b.insertions;
    c.totals.deletions += b.deletions;
    c.totals.reference_length += b.reference_length;
  }
  const double len = static_cast<double>(c.totals.reference_length);
  c.wer = static_cast<double>(c.totals.total()) / len;
  c.sub_rate = static_cast<double>(c.totals.substitutions) / len;
  c.ins_rate = static_cast<double>(c.totals.insertions) / len;
  c.del_rate = static_cast<double>(c.totals.deletions) / len;
  c.n_samples = pairs.size();
  return c;
}

std::string metric_record(long epoch, const std::string& split, const CorpusWer& w) {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["split"] = split;
  j["wer"] = w.wer;
  j["del_rate"] = w.del_rate;
  j["ins_rate"] = w.ins_rate;
  j["sub_rate"] = w.sub_rate;
  j["n_samples"] = w.n_samples;
  return j.dump();
}

}  // namespace corrnet::metrics
