#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "citesum/corpus.hpp"
#include "citesum/errors.hpp"
#include "citesum/rouge.hpp"

namespace citesum::selection {

using rouge::Tokens;

struct SelectionResult {
  std::string source_id;
  std::string ref_id;
  std::vector<std::size_t> sentence_indices;  // into the reference's sentence list
  double achieved_score = 0.0;
  std::vector<double> step_scores;  // score after each accepted step; not cached
};

enum class TargetRole { gold_abstract, introduction };

/// What reference content is scored against: the source abstract during
/// training/validation, the source introduction at test time.
struct SelectionTarget {
  Tokens text;
  TargetRole role = TargetRole::gold_abstract;
};

inline SelectionTarget selection_target(const corpus::Document& doc,
                                        corpus::CorpusSplit::Role role) {
  SelectionTarget t;
  if (role == corpus::CorpusSplit::Role::test) {
    t.text = corpus::tokenize(doc.introduction);
    t.role = TargetRole::introduction;
    if (t.text.empty())
      throw ValidationError("test document " + doc.id + " has an empty introduction");
  } else {
    t.text = corpus::tokenize(doc.abstract_text);
    t.role = TargetRole::gold_abstract;
    if (t.text.empty())
      throw ValidationError("document " + doc.id + " has an empty abstract");
  }
  return t;
}

namespace detail {

inline Tokens concat_in_order(const std::vector<Tokens>& sentences,
                              std::vector<std::size_t> indices) {
  std::sort(indices.begin(), indices.end());
  Tokens out;
  for (std::size_t idx : indices)
    out.insert(out.end(), sentences[idx].begin(), sentences[idx].end());
  return out;
}

}  // namespace detail

/// Greedy oracle: repeatedly add the sentence that most improves mean
/// ROUGE-1/2 against the target, scored on the selection concatenated in
/// original document order. Stops when nothing strictly improves or
/// max_sentences is reached. Ties break to the lowest index.
inline SelectionResult greedy_select(const std::vector<Tokens>& sentences,
                                     const SelectionTarget& target,
                                     std::size_t max_sentences) {
  if (max_sentences < 1) throw ValidationError("max_sentences must be >= 1");
  SelectionResult result;
  if (sentences.empty()) return result;

  std::vector<char> used(sentences.size(), 0);
  double score = 0.0;
  while (result.sentence_indices.size() < max_sentences) {
    double best_score = score;
    std::size_t best_idx = sentences.size();
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (used[i]) continue;
      auto trial = result.sentence_indices;
      trial.push_back(i);
      const double s =
          rouge::mean_rouge_12(detail::concat_in_order(sentences, trial), target.text);
      if (s > best_score) {
        best_score = s;
        best_idx = i;
      }
    }
    if (best_idx == sentences.size()) break;  // no strict improvement
    used[best_idx] = 1;
    result.sentence_indices.push_back(best_idx);
    score = best_score;
    result.step_scores.push_back(score);
  }
  std::sort(result.sentence_indices.begin(), result.sentence_indices.end());
  result.achieved_score = score;
  return result;
}

/// Tokens of the selected sentences of `doc`, in original order.
inline Tokens selected_content_tokens(const corpus::Document& doc,
                                      const SelectionResult& sel) {
  Tokens out;
  for (std::size_t idx : sel.sentence_indices) {
    if (idx >= doc.body_sentences.size())
      throw RangeError("selection index out of range for document " + doc.id);
    const Tokens t = corpus::tokenize(doc.body_sentences[idx]);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

struct RankedNeighbor {
  std::string id;
  double score = 0.0;
};

/// Top-k citation neighbors by mean ROUGE-1/2 between the source target and
/// each candidate's selected content. Descending score, ties ascending id.
inline std::vector<RankedNeighbor> select_neighbors(
    const SelectionTarget& source_target,
    const std::vector<std::pair<const corpus::Document*, SelectionResult>>& candidates,
    std::size_t k) {
  if (k < 1) throw ValidationError("select_neighbors: k must be >= 1");
  std::vector<RankedNeighbor> ranked;
  ranked.reserve(candidates.size());
  for (const auto& [doc, sel] : candidates) {
    RankedNeighbor rn;
    rn.id = doc->id;
    rn.score =
        rouge::mean_rouge_12(source_target.text, selected_content_tokens(*doc, sel));
    ranked.push_back(std::move(rn));
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  if (ranked.size() > k) ranked.resize(k);
  return ranked;
}

// ---------------------------------------------------------------------------
// Selection cache: line-delimited records keyed by (source_id, ref_id).

class SelectionCache {
 public:
  void put(SelectionResult r) { entries_[{r.source_id, r.ref_id}] = std::move(r); }

  const SelectionResult* find(const std::string& source_id,
                              const std::string& ref_id) const {
    auto it = entries_.find({source_id, ref_id});
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return entries_.size(); }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    for (const auto& [key, r] : entries_) {
      nlohmann::json j;
      j["source_id"] = r.source_id;
      j["ref_id"] = r.ref_id;
      j["sentence_indices"] = r.sentence_indices;
      j["score"] = r.achieved_score;
      out << j.dump() << "\n";
    }
  }

  static SelectionCache load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open selection cache: " + path);
    SelectionCache cache;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        SelectionResult r;
        r.source_id = j.at("source_id").get<std::string>();
        r.ref_id = j.at("ref_id").get<std::string>();
        r.sentence_indices = j.at("sentence_indices").get<std::vector<std::size_t>>();
        r.achieved_score = j.at("score").get<double>();
        cache.put(std::move(r));
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    return cache;
  }

 private:
  std::map<std::pair<std::string, std::string>, SelectionResult> entries_;
};

}  // namespace citesum::selection
