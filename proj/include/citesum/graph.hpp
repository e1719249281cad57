#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "citesum/corpus.hpp"
#include "citesum/errors.hpp"
#include "citesum/rng.hpp"
#include "citesum/rouge.hpp"
#include "citesum/selection.hpp"

namespace citesum::graph {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Per-source weighted citation graph. Node order: source, then positive
/// neighbors (as given), then negative documents. Weights in [0,1], unit
/// diagonal, symmetric; off-diagonal entries below rho are zeroed.
struct WeightedCitationGraph {
  std::vector<std::string> node_ids;
  Matrix weights;
  double rho = 0.0;
  std::size_t num_neighbors = 0;  // positive nodes = 1 + num_neighbors
};

/// Per-document bipartite graph: one document row over its distinct tokens
/// (first-occurrence order) followed by sampled negative tokens.
struct BipartiteDocTokenGraph {
  std::size_t doc_index = 0;  // row index of the document node (always 0 here)
  std::vector<std::string> token_ids;
  Matrix adjacency;               // 1 x token_ids.size(), entries in {0,1}
  std::size_t num_positive = 0;   // leading positive column count
};

struct NormalizedLaplacian {
  Matrix matrix;  // I - D^{-1/2} A D^{-1/2}
  Vector degree;
};

/// Standard normalized Laplacian with degrees taken as row sums.
inline NormalizedLaplacian normalized_laplacian(const Matrix& adjacency) {
  if (adjacency.rows() != adjacency.cols())
    throw ShapeError("normalized_laplacian: adjacency must be square");
  const Eigen::Index n = adjacency.rows();
  Vector degree = adjacency.rowwise().sum();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(degree(i) > 0.0))
      throw DegenerateGraphError("zero row sum at node " + std::to_string(i));
  Vector inv_sqrt = degree.array().rsqrt();
  NormalizedLaplacian out;
  out.degree = std::move(degree);
  out.matrix = Matrix::Identity(n, n) -
               (inv_sqrt.asDiagonal() * adjacency * inv_sqrt.asDiagonal());
  return out;
}

/// Laplacian with caller-supplied node degrees (the bipartite graphs use an
/// instance-local degree rule rather than row sums).
inline NormalizedLaplacian normalized_laplacian_with_degrees(const Matrix& adjacency,
                                                             const Vector& degrees) {
  if (adjacency.rows() != adjacency.cols())
    throw ShapeError("normalized_laplacian_with_degrees: adjacency must be square");
  if (degrees.size() != adjacency.rows())
    throw ShapeError("normalized_laplacian_with_degrees: degree size mismatch");
  for (Eigen::Index i = 0; i < degrees.size(); ++i)
    if (!(degrees(i) > 0.0))
      throw DegenerateGraphError("nonpositive degree at node " + std::to_string(i));
  Vector inv_sqrt = degrees.array().rsqrt();
  NormalizedLaplacian out;
  out.degree = degrees;
  out.matrix = Matrix::Identity(adjacency.rows(), adjacency.cols()) -
               (inv_sqrt.asDiagonal() * adjacency * inv_sqrt.asDiagonal());
  return out;
}

/// Weighted citation graph for one source document. Edge weights follow the
/// case split on node kinds: source-neighbor uses the selection target vs
/// the neighbor's selected content, neighbor-neighbor uses both selected
/// contents, the diagonal is 1, and negatives get zero rows/columns.
/// Off-diagonal weights below rho are deleted (set to 0).
inline WeightedCitationGraph build_weighted_citation_graph(
    const corpus::Document& source,
    const std::vector<std::pair<const corpus::Document*, selection::SelectionResult>>&
        neighbors,
    const std::vector<const corpus::Document*>& negatives,
    const selection::SelectionTarget& target, double rho) {
  if (neighbors.empty())
    throw ValidationError("build_weighted_citation_graph: no neighbors");
  if (rho < 0.0 || rho > 1.0)
    throw ValidationError("build_weighted_citation_graph: rho outside [0,1]");

  const std::size_t num_nbr = neighbors.size();
  const std::size_t n = 1 + num_nbr + negatives.size();

  WeightedCitationGraph g;
  g.rho = rho;
  g.num_neighbors = num_nbr;
  g.node_ids.reserve(n);
  g.node_ids.push_back(source.id);
  std::vector<rouge::Tokens> contents(num_nbr);
  for (std::size_t j = 0; j < num_nbr; ++j) {
    g.node_ids.push_back(neighbors[j].first->id);
    contents[j] = selection::selected_content_tokens(*neighbors[j].first,
                                                     neighbors[j].second);
  }
  for (const auto* d : negatives) g.node_ids.push_back(d->id);

  g.weights = Matrix::Zero(n, n);
  auto apply_rho = [rho](double w) { return w < rho ? 0.0 : w; };

  bool any_source_edge = false;
  for (std::size_t j = 0; j < num_nbr; ++j) {
    const double w = apply_rho(rouge::mean_rouge_12(target.text, contents[j]));
    g.weights(0, 1 + j) = w;
    g.weights(1 + j, 0) = w;
    if (w > 0.0) any_source_edge = true;
  }
  for (std::size_t i = 0; i < num_nbr; ++i) {
    for (std::size_t j = i + 1; j < num_nbr; ++j) {
      const double w = apply_rho(rouge::mean_rouge_12(contents[i], contents[j]));
      g.weights(1 + i, 1 + j) = w;
      g.weights(1 + j, 1 + i) = w;
    }
  }
  for (std::size_t i = 0; i < n; ++i) g.weights(i, i) = 1.0;

  if (!any_source_edge)
    throw DegenerateGraphError("all source-neighbor weights fell below rho for " +
                               source.id);
  return g;
}

/// Laplacian of the weighted citation graph (degrees = row sums; the unit
/// diagonal guarantees positivity).
inline NormalizedLaplacian citation_laplacian(const WeightedCitationGraph& g) {
  return normalized_laplacian(g.weights);
}

inline BipartiteDocTokenGraph build_bipartite_graph(
    const rouge::Tokens& doc_tokens, const std::vector<std::string>& negative_tokens) {
  if (doc_tokens.empty())
    throw ValidationError("build_bipartite_graph: document has no tokens");
  BipartiteDocTokenGraph g;
  std::unordered_set<std::string> seen;
  for (const auto& t : doc_tokens)
    if (seen.insert(t).second) g.token_ids.push_back(t);
  g.num_positive = g.token_ids.size();
  for (const auto& t : negative_tokens) {
    if (seen.count(t))
      throw ValidationError("negative token occurs in document: " + t);
    g.token_ids.push_back(t);
  }
  g.doc_index = 0;
  g.adjacency = Matrix::Zero(1, static_cast<Eigen::Index>(g.token_ids.size()));
  for (std::size_t j = 0; j < g.num_positive; ++j)
    g.adjacency(0, static_cast<Eigen::Index>(j)) = 1.0;
  return g;
}

/// Laplacian row for the bipartite graph under the instance-local degree
/// rule: the document degree is its distinct positive token count, token
/// degrees are the number of instance documents containing them (1 here,
/// with a floor of 1 for negatives). Returned over the full (doc + tokens)
/// node set so downstream code can treat it like any other Laplacian.
inline NormalizedLaplacian bipartite_laplacian(const BipartiteDocTokenGraph& g) {
  const std::size_t n_tok = g.token_ids.size();
  const Eigen::Index n = static_cast<Eigen::Index>(1 + n_tok);
  Matrix adj = Matrix::Zero(n, n);
  for (std::size_t j = 0; j < n_tok; ++j) {
    const double b = g.adjacency(0, static_cast<Eigen::Index>(j));
    adj(0, static_cast<Eigen::Index>(1 + j)) = b;
    adj(static_cast<Eigen::Index>(1 + j), 0) = b;
  }
  Vector degrees(n);
  degrees(0) = static_cast<double>(g.num_positive);
  for (std::size_t j = 0; j < n_tok; ++j)
    degrees(static_cast<Eigen::Index>(1 + j)) = 1.0;
  return normalized_laplacian_with_degrees(adj, degrees);
}

/// Uniform sample (without replacement) of documents with no citation
/// relation to the source; deterministic in rng_seed.
inline std::vector<std::string> sample_negative_documents(
    const corpus::CitationGraph& graph, const std::string& source_id,
    std::size_t count, std::uint64_t rng_seed) {
  if (!graph.has_node(source_id)) throw KeyError("unknown node: " + source_id);
  std::unordered_set<std::string> excluded{source_id};
  for (const auto& nbr : graph.neighbors(source_id)) excluded.insert(nbr);
  std::vector<std::string> candidates;
  for (const auto& n : graph.nodes())
    if (!excluded.count(n)) candidates.push_back(n);
  if (count > candidates.size())
    throw ValidationError("not enough non-neighbors of " + source_id + ": need " +
                          std::to_string(count) + ", have " +
                          std::to_string(candidates.size()));
  Rng rng(derive_seed(rng_seed, "neg_docs", hash_str(source_id)));
  const auto idx = rng.sample_indices(candidates.size(), count);
  std::vector<std::string> out;
  out.reserve(count);
  for (auto i : idx) out.push_back(candidates[i]);
  return out;
}

/// Uniform sample of vocabulary tokens absent from the document.
inline std::vector<std::string> sample_negative_tokens(
    const std::set<std::string>& vocabulary, const rouge::Tokens& doc_tokens,
    std::size_t count, std::uint64_t rng_seed) {
  std::unordered_set<std::string> present(doc_tokens.begin(), doc_tokens.end());
  std::vector<std::string> candidates;
  for (const auto& t : vocabulary)
    if (!present.count(t)) candidates.push_back(t);
  if (count > candidates.size())
    throw ValidationError("not enough negative-token candidates: need " +
                          std::to_string(count) + ", have " +
                          std::to_string(candidates.size()));
  Rng rng(derive_seed(rng_seed, "neg_tokens"));
  const auto idx = rng.sample_indices(candidates.size(), count);
  std::vector<std::string> out;
  out.reserve(count);
  for (auto i : idx) out.push_back(candidates[i]);
  return out;
}

}  // namespace citesum::graph
