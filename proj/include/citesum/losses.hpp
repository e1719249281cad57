#pragma once

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "citesum/autograd.hpp"
#include "citesum/errors.hpp"
#include "citesum/graph.hpp"
#include "citesum/optim.hpp"
#include "citesum/rng.hpp"

namespace citesum::losses {

using ad::Index;
using ad::Matrix;
using ad::Tape;
using ad::Var;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Contrastive instance and the DRA / TRA losses

/// One training instance's graphs plus representations aligned to them:
/// doc_reps rows follow the weighted citation graph node order, token_reps
/// rows follow the bipartite graph token columns.
struct ContrastiveInstance {
  graph::WeightedCitationGraph citation;
  graph::NormalizedLaplacian citation_laplacian;
  graph::BipartiteDocTokenGraph bipartite;
  graph::NormalizedLaplacian bipartite_laplacian;
  Matrix doc_reps;
  Matrix token_reps;

  void validate_shapes() const {
    if (doc_reps.rows() != static_cast<Index>(citation.node_ids.size()))
      throw ShapeError("doc_reps rows must match citation node order");
    if (token_reps.rows() != static_cast<Index>(bipartite.token_ids.size()))
      throw ShapeError("token_reps rows must match bipartite token order");
    if (doc_reps.cols() != token_reps.cols())
      throw ShapeError("doc and token representations must share one space");
  }
};

namespace detail {

/// Positive-pair weights -A^_{i,j} (off-diagonal, positive by construction)
/// and the zero-pair indicator for the citation graph.
inline void citation_pair_weights(const graph::WeightedCitationGraph& g,
                                  const graph::NormalizedLaplacian& lap,
                                  Matrix& pos_w, Matrix& zero_w) {
  const Index n = g.weights.rows();
  pos_w = Matrix::Zero(n, n);
  zero_w = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;  // diagonal pairs carry a nonpositive coefficient
      if (g.weights(i, j) > 0.0)
        pos_w(i, j) = -lap.matrix(i, j);
      else
        zero_w(i, j) = 1.0;
    }
  }
  if ((pos_w.array() != 0.0).count() == 0)
    throw DegenerateGraphError("dra: no positive pairs");
  if ((zero_w.array() != 0.0).count() == 0)
    throw DegenerateGraphError("dra: no negative (zero-weight) pairs");
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (pos_w(i, j) < 0.0)
        throw DomainError("dra: nonpositive numerator coefficient");
}

/// Row weights for the bipartite document row: -B^_{d,j} over positive
/// token columns and the zero indicator over negatives.
inline void bipartite_pair_weights(const graph::BipartiteDocTokenGraph& g,
                                   const graph::NormalizedLaplacian& lap,
                                   Matrix& pos_w, Matrix& zero_w) {
  const auto n_tok = static_cast<Index>(g.token_ids.size());
  pos_w = Matrix::Zero(1, n_tok);
  zero_w = Matrix::Zero(1, n_tok);
  for (Index j = 0; j < n_tok; ++j) {
    if (g.adjacency(0, j) > 0.0)
      pos_w(0, j) = -lap.matrix(0, 1 + j);
    else
      zero_w(0, j) = 1.0;
  }
  if ((pos_w.array() != 0.0).count() == 0)
    throw DegenerateGraphError("tra: no positive tokens");
  if ((zero_w.array() != 0.0).count() == 0)
    throw DegenerateGraphError("tra: no negative tokens");
}

}  // namespace detail

/// Document representation alignment loss for one instance:
/// -log( sum_pos (-A^_ij) e^{h_i.h_j} / sum_zero e^{h_i.h_j} ), exponentials
/// stabilized by max subtraction.
inline Var dra_loss(const graph::WeightedCitationGraph& g,
                    const graph::NormalizedLaplacian& lap, Var doc_reps) {
  if (doc_reps.rows() != g.weights.rows())
    throw ShapeError("dra_loss: doc_reps rows must match graph nodes");
  Matrix pos_w, zero_w;
  detail::citation_pair_weights(g, lap, pos_w, zero_w);
  Var scores = ad::matmul(doc_reps, ad::transpose(doc_reps));
  return ad::sub(ad::log_weighted_sum_exp(scores, zero_w),
                 ad::log_weighted_sum_exp(scores, pos_w));
}

/// Token representation alignment loss for one instance's document row:
/// -log( sum_pos (-B^_dj) e^{h_d.h_j} / sum_neg e^{h_d.h_j} ).
inline Var tra_loss(const graph::BipartiteDocTokenGraph& g,
                    const graph::NormalizedLaplacian& lap, Var doc_rep,
                    Var token_reps) {
  if (doc_rep.rows() != 1) throw ShapeError("tra_loss: doc_rep must be one row");
  if (token_reps.rows() != static_cast<Index>(g.token_ids.size()))
    throw ShapeError("tra_loss: token_reps rows must match token columns");
  Matrix pos_w, zero_w;
  detail::bipartite_pair_weights(g, lap, pos_w, zero_w);
  Var scores = ad::matmul(doc_rep, ad::transpose(token_reps));
  return ad::sub(ad::log_weighted_sum_exp(scores, zero_w),
                 ad::log_weighted_sum_exp(scores, pos_w));
}

/// Value-only evaluation over plain matrices.
inline double dra_loss(const ContrastiveInstance& inst) {
  inst.validate_shapes();
  Tape tape;
  return dra_loss(inst.citation, inst.citation_laplacian,
                  tape.constant(inst.doc_reps))
      .scalar();
}

inline double tra_loss(const ContrastiveInstance& inst) {
  inst.validate_shapes();
  Tape tape;
  Var doc = tape.constant(inst.doc_reps.row(0));
  Var tok = tape.constant(inst.token_reps);
  return tra_loss(inst.bipartite, inst.bipartite_laplacian, doc, tok).scalar();
}

/// Mean NLL of target ids under row-wise softmax; one logits row per target.
inline Var nll_loss(Var logits, const std::vector<Index>& target_ids) {
  return ad::cross_entropy_mean(logits, target_ids);
}

inline double nll_loss(const Matrix& logits, const std::vector<Index>& target_ids) {
  Tape tape;
  return nll_loss(tape.constant(logits), target_ids).scalar();
}

/// nll + alpha * dra + beta * tra. With both coefficients exactly zero the
/// nll value is returned untouched (bit-identical), which is what the
/// contrastive ablation relies on.
inline Var total_loss(Var nll, Var dra, Var tra, double alpha, double beta) {
  if (alpha == 0.0 && beta == 0.0) return nll;
  Var total = nll;
  if (alpha != 0.0) total = ad::add(total, ad::scale(dra, alpha));
  if (beta != 0.0) total = ad::add(total, ad::scale(tra, beta));
  return total;
}

inline double total_loss(double nll, double dra, double tra, double alpha,
                         double beta) {
  if (alpha == 0.0 && beta == 0.0) return nll;
  return nll + alpha * dra + beta * tra;
}

// ---------------------------------------------------------------------------
// Upper bounds used by the theory checks. Both hold for every instance:
// the denominator is enlarged from zero-weight pairs to all pairs, and the
// DRA bound then applies Jensen's inequality with the coefficient sum kept
// as the normalizer.

/// -log( sum_pos (-B^_dj) e^{x_j} / sum_all e^{x_o} ) >= tra_loss.
inline double tra_upper_bound(const ContrastiveInstance& inst) {
  inst.validate_shapes();
  Matrix pos_w, zero_w;
  detail::bipartite_pair_weights(inst.bipartite, inst.bipartite_laplacian, pos_w,
                                 zero_w);
  Tape tape;
  Var doc = tape.constant(inst.doc_reps.row(0));
  Var tok = tape.constant(inst.token_reps);
  Var scores = ad::matmul(doc, ad::transpose(tok));
  const Matrix all_w = Matrix::Ones(1, scores.cols());
  return ad::log_weighted_sum_exp(scores, all_w).scalar() -
         ad::log_weighted_sum_exp(scores, pos_w).scalar();
}

/// Jensen form of the DRA bound: with A = sum of positive coefficients and
/// Z = sum over all off-diagonal pairs of e^{x},
///   dra <= -log A - (1/A) * sum_pos w_ij (x_ij - log Z).
inline double dra_upper_bound_jensen(const ContrastiveInstance& inst) {
  inst.validate_shapes();
  Matrix pos_w, zero_w;
  detail::citation_pair_weights(inst.citation, inst.citation_laplacian, pos_w,
                                zero_w);
  const Index n = inst.doc_reps.rows();
  const Matrix scores = inst.doc_reps * inst.doc_reps.transpose();
  Matrix offdiag = Matrix::Ones(n, n);
  offdiag.diagonal().setZero();

  Tape tape;
  const double log_z =
      ad::log_weighted_sum_exp(tape.constant(scores), offdiag).scalar();
  const double coeff_sum = pos_w.sum();
  const double weighted_scores = pos_w.cwiseProduct(scores).sum();
  return -std::log(coeff_sum) - (weighted_scores - coeff_sum * log_z) / coeff_sum;
}

// ---------------------------------------------------------------------------
// Negative-sampling objectives and their closed-form fixed points

/// Counts and graph data describing what the contrastive objectives
/// implicitly factorize.
struct FactorizationProblem {
  // Bipartite part: n_{d,j} per document/token, corpus frequencies n_j.
  Matrix counts;               // N_d x N_t, zero where a token is absent
  Vector token_corpus_counts;  // n_j per token column
  double doc_count = 0.0;      // N_d
  double negatives_per_positive = 1.0;  // k

  // Citation part (optional): weighted graph, Laplacian, neighbor counts.
  bool has_citation = false;
  Matrix citation_weights;
  graph::NormalizedLaplacian citation_laplacian;
  Vector neighbor_counts;  // n_i^+ per node

  void validate() const {
    if (negatives_per_positive < 1.0)
      throw ValidationError("factorization: k must be >= 1");
    if (counts.size() > 0) {
      if (token_corpus_counts.size() != counts.cols())
        throw ShapeError("factorization: corpus counts per token column required");
      for (Index j = 0; j < counts.cols(); ++j) {
        if (token_corpus_counts(j) < counts.col(j).sum() - 1e-12)
          throw ValidationError(
              "factorization: corpus count below in-document counts for column " +
              std::to_string(j));
      }
      if (doc_count < 1.0) throw ValidationError("factorization: N_d must be >= 1");
    }
    if (has_citation) {
      if (citation_weights.rows() != citation_weights.cols())
        throw ShapeError("factorization: citation weights must be square");
      if (neighbor_counts.size() != citation_weights.rows())
        throw ShapeError("factorization: neighbor counts per node required");
    }
  }
};

/// Negative-sampling objective whose maximization factorizes the bipartite
/// counts: (1/N_d) sum_d [ sum_j n_dj log s(h_d.h_j)
///                         + k sum_o (n_o/N_d) log s(-h_d.h_o) ],
/// the expectation expanded over the empirical unigram distribution (it
/// covers positive and negative tokens alike). Returned for maximization.
inline Var ns_objective_bipartite(Var doc_reps, Var token_reps,
                                  const FactorizationProblem& p) {
  p.validate();
  if (doc_reps.rows() != p.counts.rows() || token_reps.rows() != p.counts.cols())
    throw ShapeError("ns_objective_bipartite: representation shape mismatch");
  Var scores = ad::matmul(doc_reps, ad::transpose(token_reps));
  Matrix neg_w(p.counts.rows(), p.counts.cols());
  for (Index d = 0; d < p.counts.rows(); ++d)
    for (Index j = 0; j < p.counts.cols(); ++j)
      neg_w(d, j) = p.negatives_per_positive * p.token_corpus_counts(j) / p.doc_count;
  Var pos_term = ad::weighted_sum(ad::log_sigmoid(scores), p.counts);
  Var neg_term = ad::weighted_sum(ad::log_sigmoid(ad::scale(scores, -1.0)), neg_w);
  return ad::scale(ad::add(pos_term, neg_term), 1.0 / p.doc_count);
}

inline double ns_objective_bipartite(const Matrix& doc_reps, const Matrix& token_reps,
                                     const FactorizationProblem& p) {
  Tape tape;
  return ns_objective_bipartite(tape.constant(doc_reps), tape.constant(token_reps), p)
      .scalar();
}

/// Citation twin over one shared node table: positive ordered pairs carry
/// -A^_ij, the negative expectation is expanded over the degree
/// distribution n_o^+ / N_d across all ordered pairs.
inline Var ns_objective_citation(Var node_reps, const FactorizationProblem& p) {
  p.validate();
  if (!p.has_citation)
    throw ValidationError("ns_objective_citation: no citation part in problem");
  const Index n = p.citation_weights.rows();
  if (node_reps.rows() != n)
    throw ShapeError("ns_objective_citation: representation shape mismatch");
  Matrix pos_w = Matrix::Zero(n, n);
  Matrix neg_w = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      if (p.citation_weights(i, j) > 0.0)
        pos_w(i, j) = -p.citation_laplacian.matrix(i, j);
      neg_w(i, j) =
          p.negatives_per_positive * p.neighbor_counts(j) / p.doc_count;
    }
  }
  Var scores = ad::matmul(node_reps, ad::transpose(node_reps));
  Var pos_term = ad::weighted_sum(ad::log_sigmoid(scores), pos_w);
  Var neg_term = ad::weighted_sum(ad::log_sigmoid(ad::scale(scores, -1.0)), neg_w);
  return ad::scale(ad::add(pos_term, neg_term), 1.0 / p.doc_count);
}

inline double ns_objective_citation(const Matrix& node_reps,
                                    const FactorizationProblem& p) {
  Tape tape;
  return ns_objective_citation(tape.constant(node_reps), p).scalar();
}

/// Stationary inner product for a bipartite positive pair:
/// log n_dj + log(N_d / n_j) - log k.
inline double fixed_point_bipartite(double n_dj, double doc_count, double n_j,
                                    double k) {
  if (n_dj < 1.0 || doc_count < 1.0 || n_j < 1.0 || k < 1.0)
    throw DomainError("fixed_point_bipartite: all arguments must be >= 1");
  return std::log(n_dj) + std::log(doc_count / n_j) - std::log(k);
}

/// Stationary inner product for a citation positive pair:
/// log(-A^_ij) + log(N_d / n_d^+) - log k. The Laplacian entry of a positive
/// pair is negative; anything else is out of domain.
inline double fixed_point_citation(double laplacian_entry, double doc_count,
                                   double n_d_plus, double k) {
  if (!(laplacian_entry < 0.0))
    throw DomainError("fixed_point_citation: laplacian entry must be negative");
  if (doc_count < 1.0 || n_d_plus < 1.0 || k < 1.0)
    throw DomainError("fixed_point_citation: counts must be >= 1");
  return std::log(-laplacian_entry) + std::log(doc_count / n_d_plus) - std::log(k);
}

// ---------------------------------------------------------------------------
// Factorization verification: ascend free embeddings on the objectives and
// compare achieved inner products with the closed-form targets.

struct PairCheck {
  std::string kind;  // "bipartite" or "citation"
  std::string pair;
  double achieved = 0.0;
  double target = 0.0;
  double abs_error = 0.0;
};

struct VerificationReport {
  std::vector<PairCheck> pairs;
  double max_abs_error = 0.0;
  double tolerance = 0.0;
  std::size_t steps = 0;
  bool converged = false;  // PASS verdict
  std::string note;

  std::string to_text() const {
    std::ostringstream os;
    os << std::left << std::setw(10) << "kind" << std::setw(14) << "pair"
       << std::right << std::setw(12) << "achieved" << std::setw(12) << "target"
       << std::setw(12) << "|delta|" << "\n";
    for (const auto& p : pairs) {
      os << std::left << std::setw(10) << p.kind << std::setw(14) << p.pair
         << std::right << std::fixed << std::setprecision(6) << std::setw(12)
         << p.achieved << std::setw(12) << p.target << std::setw(12) << p.abs_error
         << "\n";
    }
    os << "max |delta| = " << std::setprecision(6) << max_abs_error
       << " (tolerance " << tolerance << ", " << steps << " steps)\n";
    if (!note.empty()) os << "note: " << note << "\n";
    os << (converged ? "PASS" : "FAIL") << "\n";
    return os.str();
  }

  std::string to_jsonl() const {
    std::ostringstream os;
    for (const auto& p : pairs) {
      nlohmann::json j;
      j["kind"] = p.kind;
      j["pair"] = p.pair;
      j["achieved"] = p.achieved;
      j["target"] = p.target;
      j["abs_error"] = p.abs_error;
      os << j.dump() << "\n";
    }
    nlohmann::json summary;
    summary["max_abs_error"] = max_abs_error;
    summary["tolerance"] = tolerance;
    summary["steps"] = steps;
    summary["pass"] = converged;
    if (!note.empty()) summary["note"] = note;
    os << summary.dump() << "\n";
    return os.str();
  }
};

namespace detail {

inline Matrix gaussian_matrix(Rng& rng, Index rows, Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = stddev * rng.gaussian();
  return m;
}

// Full-batch Adam dithers with amplitude proportional to the learning rate,
// so the tail decays exponentially to let the iterates settle.
inline double ascent_lr(std::size_t t, std::size_t total) {
  const double base = 0.05;
  const std::size_t half = total / 2;
  if (t <= half) return base;
  const double frac = static_cast<double>(t - half) / static_cast<double>(total - half);
  return base * std::exp(-10.0 * frac);
}

}  // namespace detail

/// Ascends free embeddings on the bipartite and citation objectives (Adam,
/// full batch) and reports achieved vs target inner products for every
/// positive pair. Non-convergence yields FAIL with residuals, not an error.
inline VerificationReport verify_factorization(const FactorizationProblem& p,
                                               std::size_t embedding_dim,
                                               std::size_t steps,
                                               std::uint64_t rng_seed,
                                               double tolerance = 1e-2) {
  p.validate();
  std::size_t min_dim = 0;
  if (p.counts.size() > 0)
    min_dim = static_cast<std::size_t>(p.counts.rows() + p.counts.cols());
  if (p.has_citation)
    min_dim = std::max(min_dim,
                       static_cast<std::size_t>(p.citation_weights.rows()));
  if (embedding_dim < min_dim)
    throw ValidationError(
        "verify_factorization: embedding_dim must reach the node count (need " +
        std::to_string(min_dim) + ")");

  VerificationReport report;
  report.tolerance = tolerance;
  report.steps = steps;
  report.note =
      "bipartite degrees follow the instance-local rule (doc = distinct "
      "positives, token = 1); the constant-coefficient simplification is not "
      "assumed";
  Rng rng(derive_seed(rng_seed, "verify_factorization"));
  const auto dim = static_cast<Index>(embedding_dim);
  const optim::AdamConfig adam;

  if (p.counts.size() > 0) {
    Matrix docs = detail::gaussian_matrix(rng, p.counts.rows(), dim, 0.1);
    Matrix toks = detail::gaussian_matrix(rng, p.counts.cols(), dim, 0.1);
    Matrix m_d = Matrix::Zero(docs.rows(), dim), v_d = m_d;
    Matrix m_t = Matrix::Zero(toks.rows(), dim), v_t = m_t;
    for (std::size_t t = 1; t <= steps; ++t) {
      Tape tape;
      Var dv = tape.leaf(docs, true);
      Var tv = tape.leaf(toks, true);
      Var obj = ns_objective_bipartite(dv, tv, p);
      tape.backward(obj);
      const double lr = detail::ascent_lr(t, steps);
      optim::adam_update(docs, -dv.grad(), m_d, v_d, t, lr, adam);
      optim::adam_update(toks, -tv.grad(), m_t, v_t, t, lr, adam);
    }
    const Matrix scores = docs * toks.transpose();
    for (Index d = 0; d < p.counts.rows(); ++d) {
      for (Index j = 0; j < p.counts.cols(); ++j) {
        if (p.counts(d, j) <= 0.0) continue;
        PairCheck c;
        c.kind = "bipartite";
        c.pair = "(" + std::to_string(d) + "," + std::to_string(j) + ")";
        c.achieved = scores(d, j);
        c.target = fixed_point_bipartite(p.counts(d, j), p.doc_count,
                                         p.token_corpus_counts(j),
                                         p.negatives_per_positive);
        c.abs_error = std::abs(c.achieved - c.target);
        report.pairs.push_back(std::move(c));
      }
    }
  }

  if (p.has_citation) {
    const Index n = p.citation_weights.rows();
    Matrix nodes = detail::gaussian_matrix(rng, n, dim, 0.1);
    Matrix m_n = Matrix::Zero(n, dim), v_n = m_n;
    for (std::size_t t = 1; t <= steps; ++t) {
      Tape tape;
      Var h = tape.leaf(nodes, true);
      Var obj = ns_objective_citation(h, p);
      tape.backward(obj);
      const double lr = detail::ascent_lr(t, steps);
      optim::adam_update(nodes, -h.grad(), m_n, v_n, t, lr, adam);
    }
    const Matrix scores = nodes * nodes.transpose();
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) {
        if (p.citation_weights(i, j) <= 0.0) continue;
        PairCheck c;
        c.kind = "citation";
        c.pair = "(" + std::to_string(i) + "," + std::to_string(j) + ")";
        c.achieved = scores(i, j);
        // One shared table makes the Gram matrix symmetric, so the (i,j) and
        // (j,i) terms combine; the effective per-pair frequency is the mean
        // of the endpoint degrees.
        const double mean_degree =
            0.5 * (p.neighbor_counts(i) + p.neighbor_counts(j));
        c.target = fixed_point_citation(p.citation_laplacian.matrix(i, j),
                                        p.doc_count, mean_degree,
                                        p.negatives_per_positive);
        c.abs_error = std::abs(c.achieved - c.target);
        report.pairs.push_back(std::move(c));
      }
    }
  }

  for (const auto& c : report.pairs)
    report.max_abs_error = std::max(report.max_abs_error, c.abs_error);
  report.converged = !report.pairs.empty() && report.max_abs_error < tolerance;
  return report;
}

}  // namespace citesum::losses
