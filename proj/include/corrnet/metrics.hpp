#pragma once

#include <string>
#include <utility>
#include <vector>

#include "corrnet/ctc.hpp"

namespace corrnet::metrics {

using ctc::GlossSequence;

struct EditBreakdown {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t reference_length = 0;

  std::size_t total() const { return substitutions + insertions + deletions; }
  friend bool operator==(const EditBreakdown&, const EditBreakdown&) = default;
};

/// Unit-cost Levenshtein alignment of hypothesis against reference. The
/// backtrace prefers substitution, then insertion, then deletion, so equal-cost
/// alignments always yield the same breakdown. Throws on an empty reference.
EditBreakdown edit_ops(const GlossSequence& reference, const GlossSequence& hypothesis);

/// (sub + ins + del) / reference length. May exceed 1.
double wer(const EditBreakdown& b);

struct CorpusWer {
  double wer = 0.0;
  double sub_rate = 0.0;
  double ins_rate = 0.0;
  double del_rate = 0.0;
  std::size_t n_samples = 0;
  EditBreakdown totals;
};

/// Pooled operation counts over pooled reference length.
CorpusWer corpus_wer(const std::vector<std::pair<GlossSequence, GlossSequence>>& pairs);

/// One JSON-lines metric record:
/// {"epoch":..,"split":..,"wer":..,"del_rate":..,"ins_rate":..,"sub_rate":..,"n_samples":..}
std::string metric_record(long epoch, const std::string& split, const CorpusWer& w);

}  // namespace corrnet::metrics
