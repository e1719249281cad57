#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "citesum/errors.hpp"
#include "citesum/rng.hpp"

namespace citesum::corpus {

/// One scientific paper. `abstract_text` is the gold summary target,
/// `body_sentences` the source contents after sentence splitting.
struct Document {
  std::string id;
  std::string title;
  std::string abstract_text;
  std::string introduction;
  std::vector<std::string> body_sentences;
  std::vector<std::string> reference_ids;
};

inline void validate_document(const Document& d) {
  if (d.id.empty()) throw ValidationError("document with empty id");
  std::unordered_set<std::string> seen;
  for (const auto& r : d.reference_ids) {
    if (r == d.id)
      throw ValidationError("document " + d.id + " references itself");
    if (!seen.insert(r).second)
      throw ValidationError("document " + d.id + " lists duplicate reference " + r);
  }
}

/// Directed citation edges over document ids. Adjacency queries treat edges
/// as symmetric; self-loops are never reported at this layer.
class CitationGraph {
 public:
  CitationGraph() = default;

  CitationGraph(std::set<std::string> nodes,
                std::set<std::pair<std::string, std::string>> edges)
      : nodes_(std::move(nodes)), edges_(std::move(edges)) {
    for (const auto& [u, v] : edges_) {
      if (!nodes_.count(u) || !nodes_.count(v))
        throw ValidationError("edge endpoint not in node set: " + u + " -> " + v);
    }
    rebuild_adjacency();
  }

  const std::set<std::string>& nodes() const { return nodes_; }
  const std::set<std::pair<std::string, std::string>>& edges() const { return edges_; }
  bool has_node(const std::string& id) const { return nodes_.count(id) > 0; }
  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_edges() const { return edges_.size(); }

  /// Symmetric neighbor set, ascending id order, self excluded.
  const std::vector<std::string>& neighbors(const std::string& id) const {
    auto it = adjacency_.find(id);
    if (it == adjacency_.end()) throw KeyError("unknown node: " + id);
    return it->second;
  }

  /// Induced subgraph over `keep` (directed edges with both endpoints kept).
  CitationGraph induced(const std::set<std::string>& keep) const {
    std::set<std::string> nodes;
    for (const auto& n : nodes_)
      if (keep.count(n)) nodes.insert(n);
    std::set<std::pair<std::string, std::string>> edges;
    for (const auto& e : edges_)
      if (nodes.count(e.first) && nodes.count(e.second)) edges.insert(e);
    return CitationGraph(std::move(nodes), std::move(edges));
  }

 private:
  void rebuild_adjacency() {
    adjacency_.clear();
    for (const auto& n : nodes_) adjacency_[n];
    for (const auto& [u, v] : edges_) {
      if (u == v) continue;
      adjacency_[u].push_back(v);
      adjacency_[v].push_back(u);
    }
    for (auto& [_, nbrs] : adjacency_) {
      std::sort(nbrs.begin(), nbrs.end());
      nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
    }
  }

  std::set<std::string> nodes_;
  std::set<std::pair<std::string, std::string>> edges_;
  std::map<std::string, std::vector<std::string>> adjacency_;
};

enum class SplitMode { inductive, transductive };

inline const char* to_string(SplitMode m) {
  return m == SplitMode::inductive ? "inductive" : "transductive";
}

inline SplitMode split_mode_from_string(const std::string& s) {
  if (s == "inductive") return SplitMode::inductive;
  if (s == "transductive") return SplitMode::transductive;
  throw ValidationError("unknown split mode: " + s);
}

struct CorpusSplit {
  std::set<std::string> train_ids, val_ids, test_ids;
  SplitMode mode = SplitMode::inductive;
  std::set<std::pair<std::string, std::string>> retained_edges;

  enum class Role { train, validation, test };

  Role role_of(const std::string& id) const {
    if (train_ids.count(id)) return Role::train;
    if (val_ids.count(id)) return Role::validation;
    if (test_ids.count(id)) return Role::test;
    throw KeyError("id not in any split: " + id);
  }

  std::set<std::string> all_ids() const {
    std::set<std::string> out = train_ids;
    out.insert(val_ids.begin(), val_ids.end());
    out.insert(test_ids.begin(), test_ids.end());
    return out;
  }
};

// ---------------------------------------------------------------------------
// Tokenization

namespace detail {

inline bool is_unicode_space(char32_t c) {
  switch (c) {
    case 0x09: case 0x0a: case 0x0b: case 0x0c: case 0x0d: case 0x20:
    case 0x85: case 0xa0: case 0x1680:
    case 0x2000: case 0x2001: case 0x2002: case 0x2003: case 0x2004:
    case 0x2005: case 0x2006: case 0x2007: case 0x2008: case 0x2009:
    case 0x200a: case 0x2028: case 0x2029: case 0x202f: case 0x205f:
    case 0x3000:
      return true;
    default:
      return false;
  }
}

// Decodes one UTF-8 codepoint at i, advancing i. Invalid bytes pass through
// as single-byte codepoints so no input can make tokenization throw.
inline char32_t decode_utf8(const std::string& s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  std::size_t len = 1;
  char32_t cp = b0;
  if ((b0 & 0x80u) == 0) {
    len = 1;
  } else if ((b0 & 0xe0u) == 0xc0u) {
    len = 2;
    cp = b0 & 0x1fu;
  } else if ((b0 & 0xf0u) == 0xe0u) {
    len = 3;
    cp = b0 & 0x0fu;
  } else if ((b0 & 0xf8u) == 0xf0u) {
    len = 4;
    cp = b0 & 0x07u;
  } else {
    ++i;
    return b0;
  }
  if (i + len > s.size()) {
    ++i;
    return b0;
  }
  for (std::size_t k = 1; k < len; ++k) {
    const auto bk = static_cast<unsigned char>(s[i + k]);
    if ((bk & 0xc0u) != 0x80u) {
      ++i;
      return b0;
    }
    cp = (cp << 6) | (bk & 0x3fu);
  }
  i += len;
  return cp;
}

inline bool is_ascii_punct(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

}  // namespace detail

/// Lowercases, splits on Unicode whitespace, strips leading/trailing ASCII
/// punctuation from each piece. Deterministic; empty tokens never emitted.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  std::size_t i = 0;
  auto flush = [&]() {
    std::size_t b = 0, e = cur.size();
    while (b < e && detail::is_ascii_punct(cur[b])) ++b;
    while (e > b && detail::is_ascii_punct(cur[e - 1])) --e;
    if (e > b) tokens.emplace_back(cur.substr(b, e - b));
    cur.clear();
  };
  while (i < text.size()) {
    const std::size_t start = i;
    const char32_t cp = detail::decode_utf8(text, i);
    if (detail::is_unicode_space(cp)) {
      flush();
    } else if (cp < 0x80) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<int>(cp))));
    } else {
      cur.append(text, start, i - start);
    }
  }
  flush();
  return tokens;
}

/// Splits on '.', '!', '?' followed by whitespace or end of text. Terminators
/// stay with their sentence; empty sentences are dropped.
inline std::vector<std::string> sentence_split(const std::string& text) {
  std::vector<std::string> sentences;
  std::string cur;
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  auto flush = [&]() {
    std::size_t b = 0, e = cur.size();
    while (b < e && is_space(cur[b])) ++b;
    while (e > b && is_space(cur[e - 1])) --e;
    if (e > b) sentences.emplace_back(cur.substr(b, e - b));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    cur.push_back(c);
    if (c == '.' || c == '!' || c == '?') {
      const bool at_end = i + 1 == text.size();
      if (at_end || is_space(text[i + 1])) flush();
    }
  }
  flush();
  return sentences;
}

// ---------------------------------------------------------------------------
// Corpus file I/O: line-delimited JSON, one document per line.

struct LoadResult {
  std::vector<Document> documents;
  CitationGraph graph;
  std::size_t dropped_references = 0;  // edges to ids absent from the corpus
};

inline CitationGraph graph_from_documents(const std::vector<Document>& docs,
                                          std::size_t* dropped = nullptr) {
  std::set<std::string> nodes;
  for (const auto& d : docs) nodes.insert(d.id);
  std::set<std::pair<std::string, std::string>> edges;
  std::size_t drop_count = 0;
  for (const auto& d : docs) {
    for (const auto& r : d.reference_ids) {
      if (nodes.count(r))
        edges.emplace(d.id, r);
      else
        ++drop_count;
    }
  }
  if (dropped) *dropped = drop_count;
  return CitationGraph(std::move(nodes), std::move(edges));
}

inline LoadResult load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file: " + path);
  LoadResult result;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    Document d;
    try {
      d.id = j.at("id").get<std::string>();
      d.title = j.at("title").get<std::string>();
      d.abstract_text = j.at("abstract").get<std::string>();
      d.introduction = j.at("introduction").get<std::string>();
      d.body_sentences = j.at("body_sentences").get<std::vector<std::string>>();
      d.reference_ids = j.at("reference_ids").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    validate_document(d);
    if (!ids.insert(d.id).second)
      throw ValidationError(path + ":" + std::to_string(line_no) +
                            ": duplicate document id " + d.id);
    result.documents.push_back(std::move(d));
  }
  result.graph = graph_from_documents(result.documents, &result.dropped_references);
  return result;
}

inline void save_corpus(const std::string& path, const std::vector<Document>& docs) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  for (const auto& d : docs) {
    nlohmann::json j;
    j["id"] = d.id;
    j["title"] = d.title;
    j["abstract"] = d.abstract_text;
    j["introduction"] = d.introduction;
    j["body_sentences"] = d.body_sentences;
    j["reference_ids"] = d.reference_ids;
    out << j.dump() << "\n";
  }
}

/// Tab-separated edge list, two id columns, no header.
inline void save_edge_list(const std::string& path, const CitationGraph& graph) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  for (const auto& [u, v] : graph.edges()) out << u << "\t" << v << "\n";
}

// ---------------------------------------------------------------------------
// BFS sampling and split construction

/// Induced subgraph over the first `node_limit` nodes discovered breadth
/// first from `seed_id`, neighbors visited in ascending id order. `rng_seed`
/// is reserved for the caller's choice of seed_id and is unused here.
inline CitationGraph bfs_sample_subgraph(const CitationGraph& graph,
                                         const std::string& seed_id,
                                         std::size_t node_limit,
                                         std::uint64_t /*rng_seed*/ = 0) {
  if (!graph.has_node(seed_id)) throw KeyError("seed not in graph: " + seed_id);
  if (node_limit < 1) throw ValidationError("node_limit must be >= 1");
  std::set<std::string> visited{seed_id};
  std::vector<std::string> queue{seed_id};
  std::size_t head = 0;
  while (head < queue.size() && visited.size() < node_limit) {
    const std::string cur = queue[head++];
    for (const auto& nbr : graph.neighbors(cur)) {
      if (visited.count(nbr)) continue;
      visited.insert(nbr);
      queue.push_back(nbr);
      if (visited.size() >= node_limit) break;
    }
  }
  return graph.induced(visited);
}

/// Split sizes are (train, val, test). Val and test are BFS subgraphs from
/// rng-chosen seeds, train a BFS sample of what remains. Mode changes edge
/// retention only, never the id partition.
inline CorpusSplit make_splits(const CitationGraph& graph,
                               std::size_t train_size, std::size_t val_size,
                               std::size_t test_size, SplitMode mode,
                               std::uint64_t rng_seed) {
  if (train_size + val_size + test_size > graph.num_nodes())
    throw ValidationError("split sizes exceed node count");
  Rng rng(derive_seed(rng_seed, "make_splits"));

  auto pick_seed = [&rng](const std::set<std::string>& pool) {
    std::vector<std::string> sorted(pool.begin(), pool.end());
    return sorted[rng.below(sorted.size())];
  };
  auto bfs_ids = [](const CitationGraph& g, const std::string& seed, std::size_t n) {
    return bfs_sample_subgraph(g, seed, n).nodes();
  };

  CorpusSplit split;
  split.mode = mode;

  std::set<std::string> pool = graph.nodes();
  if (val_size > 0) {
    split.val_ids = bfs_ids(graph, pick_seed(pool), val_size);
    for (const auto& id : split.val_ids) pool.erase(id);
  }
  if (test_size > 0) {
    const CitationGraph rest = graph.induced(pool);
    split.test_ids = bfs_ids(rest, pick_seed(pool), test_size);
    for (const auto& id : split.test_ids) pool.erase(id);
  }
  if (train_size > 0) {
    const CitationGraph rest = graph.induced(pool);
    split.train_ids = bfs_ids(rest, pick_seed(pool), train_size);
  }

  const std::set<std::string> sampled = split.all_ids();
  for (const auto& e : graph.edges()) {
    if (!sampled.count(e.first) || !sampled.count(e.second)) continue;
    if (mode == SplitMode::transductive) {
      split.retained_edges.insert(e);
    } else {
      const auto ra = split.role_of(e.first);
      const auto rb = split.role_of(e.second);
      if (ra == rb) split.retained_edges.insert(e);
    }
  }
  return split;
}

/// Graph a training/eval pass actually sees: sampled nodes + retained edges.
inline CitationGraph split_graph(const CorpusSplit& split) {
  return CitationGraph(split.all_ids(), split.retained_edges);
}

}  // namespace citesum::corpus
