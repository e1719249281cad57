#pragma once

#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "citesum/corpus.hpp"
#include "citesum/errors.hpp"
#include "citesum/rng.hpp"

namespace citesum::synthetic {

// Synthetic corpora stand in for the license-restricted real data. The
// construction plants signal on purpose:
//   - every document's abstract sentences appear verbatim in its own body,
//     so a memorizing decoder has something to copy;
//   - for every citation edge both endpoints carry the other side's abstract
//     sentences in their bodies, so greedy selection against the source
//     abstract recovers them and edge weights survive realistic rho values;
//   - introductions reorder the abstract sentences, keeping the test-time
//     surrogate target informative.
// Topic words come from the front of the word pool, filler noise from the
// back, which keeps accidental overlap low.

struct SyntheticConfig {
  std::size_t num_docs = 10;
  std::size_t vocab_size = 120;
  double avg_edges = 2.0;
  std::uint64_t rng_seed = 1;
};

inline std::vector<corpus::Document> generate_synthetic_corpus(
    const SyntheticConfig& cfg) {
  if (cfg.num_docs < 2) throw ValidationError("synthetic corpus needs >= 2 documents");
  if (cfg.vocab_size < 24) throw ValidationError("synthetic vocab too small");
  Rng rng(derive_seed(cfg.rng_seed, "synthetic_corpus"));

  std::vector<std::string> words(cfg.vocab_size);
  for (std::size_t i = 0; i < cfg.vocab_size; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "w%03zu", i);
    words[i] = buf;
  }
  const std::size_t topic_pool = (cfg.vocab_size * 2) / 3;

  auto make_sentence = [&words](const std::vector<std::size_t>& idx) {
    std::string s;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (i) s += ' ';
      s += words[idx[i]];
    }
    s += '.';
    return s;
  };

  const std::size_t n = cfg.num_docs;
  std::vector<corpus::Document> docs(n);
  std::vector<std::vector<std::string>> abstract_sentences(n);

  for (std::size_t d = 0; d < n; ++d) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "doc%03zu", d);
    docs[d].id = idbuf;

    auto topic = rng.sample_indices(topic_pool, 8);
    docs[d].title = "synthetic " + docs[d].id + " " + words[topic[0]];

    // Two abstract sentences of 4-6 distinct topic words each.
    const std::size_t len1 = 4 + rng.below(3);
    const std::size_t len2 = 4 + rng.below(3);
    std::vector<std::size_t> s1(topic.begin(), topic.begin() + len1);
    std::vector<std::size_t> s2;
    for (std::size_t i = 0; i < len2; ++i) s2.push_back(topic[(len1 + i) % topic.size()]);
    abstract_sentences[d] = {make_sentence(s1), make_sentence(s2)};
    docs[d].abstract_text = abstract_sentences[d][0] + " " + abstract_sentences[d][1];
    docs[d].introduction = abstract_sentences[d][1] + " " + abstract_sentences[d][0];
  }

  // Citation edges: a ring keeps the graph connected, extras bring the mean
  // out-degree toward avg_edges.
  std::vector<std::set<std::size_t>> out_refs(n);
  for (std::size_t d = 0; d < n; ++d) out_refs[d].insert((d + 1) % n);
  const auto extra_target = static_cast<std::size_t>(
      std::max(0.0, cfg.avg_edges - 1.0) * static_cast<double>(n));
  for (std::size_t e = 0; e < extra_target; ++e) {
    const std::size_t a = rng.below(n);
    const std::size_t b = rng.below(n);
    if (a != b) out_refs[a].insert(b);
  }
  for (std::size_t d = 0; d < n; ++d)
    for (std::size_t r : out_refs[d]) docs[d].reference_ids.push_back(docs[r].id);

  // Bodies: own abstract, neighbors' abstracts, then filler noise.
  std::vector<std::set<std::size_t>> nbrs(n);
  for (std::size_t d = 0; d < n; ++d)
    for (std::size_t r : out_refs[d]) {
      nbrs[d].insert(r);
      nbrs[r].insert(d);
    }
  for (std::size_t d = 0; d < n; ++d) {
    auto& body = docs[d].body_sentences;
    body.push_back(abstract_sentences[d][0]);
    body.push_back(abstract_sentences[d][1]);
    for (std::size_t r : nbrs[d]) {
      body.push_back(abstract_sentences[r][0]);
      body.push_back(abstract_sentences[r][1]);
    }
    const std::size_t noise = 3 + rng.below(3);
    for (std::size_t s = 0; s < noise; ++s) {
      std::vector<std::size_t> idx;
      const std::size_t len = 4 + rng.below(4);
      for (std::size_t i = 0; i < len; ++i)
        idx.push_back(topic_pool + rng.below(cfg.vocab_size - topic_pool));
      body.push_back(make_sentence(idx));
    }
  }
  return docs;
}

}  // namespace citesum::synthetic
