#pragma once

#include <algorithm>
#include <string>
#include <unordered_map>
#include <vector>

#include "citesum/errors.hpp"

namespace citesum::rouge {

using Tokens = std::vector<std::string>;

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline RougeScore make_score(double p, double r) {
  RougeScore s;
  s.precision = p;
  s.recall = r;
  s.f1 = (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
  return s;
}

/// Multiset of n-grams keyed by the joined token tuple. Tokens never contain
/// whitespace, so '\x1f' is a safe joiner.
struct NGramCounts {
  std::size_t order = 1;
  std::unordered_map<std::string, std::size_t> counts;
  std::size_t total = 0;
};

inline NGramCounts ngram_counts(const Tokens& tokens, std::size_t n) {
  if (n < 1) throw ValidationError("ngram order must be >= 1");
  NGramCounts out;
  out.order = n;
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t k = 1; k < n; ++k) {
      key.push_back('\x1f');
      key.append(tokens[i + k]);
    }
    ++out.counts[key];
    ++out.total;
  }
  return out;
}

/// ROUGE-N over distinct n-grams: a matched gram is credited once no matter
/// how often it repeats. This is the variant whose scores the reference
/// literature reports for abstract-to-abstract similarity; repeated function
/// words do not inflate it.
inline RougeScore rouge_n(const Tokens& candidate, const Tokens& reference,
                          std::size_t n) {
  const NGramCounts cand = ngram_counts(candidate, n);
  const NGramCounts ref = ngram_counts(reference, n);
  std::size_t matched = 0;
  for (const auto& [gram, c] : cand.counts) {
    (void)c;
    if (ref.counts.count(gram)) ++matched;
  }
  const double p =
      cand.counts.empty() ? 0.0 : static_cast<double>(matched) / cand.counts.size();
  const double r =
      ref.counts.empty() ? 0.0 : static_cast<double>(matched) / ref.counts.size();
  return make_score(p, r);
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline RougeScore rouge_l(const Tokens& candidate, const Tokens& reference) {
  const std::size_t lcs = lcs_length(candidate, reference);
  const double p = candidate.empty() ? 0.0 : static_cast<double>(lcs) / candidate.size();
  const double r = reference.empty() ? 0.0 : static_cast<double>(lcs) / reference.size();
  return make_score(p, r);
}

/// Mean of ROUGE-1 and ROUGE-2 F1, the edge-weight metric used throughout.
inline double mean_rouge_12(const Tokens& a, const Tokens& b) {
  return 0.5 * (rouge_n(a, b, 1).f1 + rouge_n(a, b, 2).f1);
}

}  // namespace citesum::rouge
