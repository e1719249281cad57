#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "citesum/corpus.hpp"
#include "citesum/errors.hpp"
#include "citesum/graph.hpp"
#include "citesum/losses.hpp"
#include "citesum/model.hpp"
#include "citesum/optim.hpp"
#include "citesum/rng.hpp"
#include "citesum/rouge.hpp"
#include "citesum/selection.hpp"

namespace citesum::harness {

using ad::Index;
using ad::Matrix;
using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Configuration

enum class Scale { desk, paper };

inline const char* to_string(Scale s) { return s == Scale::desk ? "desk" : "paper"; }

struct TrainConfig {
  double encoder_lr = 2e-3;
  double decoder_lr = 2e-1;
  std::uint64_t encoder_warmup_steps = 20000;
  std::uint64_t decoder_warmup_steps = 10000;
  std::uint64_t total_steps = 200000;
  double alpha = 1.0;
  double beta = 1.0;
  double rho = 0.7;
  std::size_t max_neighbors = 16;
  std::size_t source_token_budget = 1240;
  std::size_t per_ref_token_budget = 100;
  std::uint64_t checkpoint_every = 200;
  std::uint64_t rng_seed = 1;
  Scale scale = Scale::desk;

  // Sampling and selection knobs; counts are per training instance.
  std::size_t negative_documents = 4;
  std::size_t negative_tokens = 32;
  std::size_t max_selected_sentences = 7;
  std::size_t max_summary_length = 24;

  static TrainConfig desk_defaults() {
    TrainConfig c;
    c.encoder_warmup_steps = 100;
    c.decoder_warmup_steps = 500;
    c.total_steps = 2000;
    c.source_token_budget = 128;
    c.per_ref_token_budget = 32;
    c.checkpoint_every = 200;
    c.scale = Scale::desk;
    return c;
  }

  static TrainConfig paper_defaults() {
    TrainConfig c;  // field initializers carry the published values
    c.scale = Scale::paper;
    c.max_summary_length = 256;
    return c;
  }

  void validate() const {
    if (encoder_lr <= 0 || decoder_lr <= 0)
      throw ValidationError("learning rates must be positive");
    if (total_steps == 0 || checkpoint_every == 0)
      throw ValidationError("step counts must be positive");
    if (rho < 0.0 || rho > 1.0) throw ValidationError("rho must lie in [0,1]");
    if (max_neighbors == 0) throw ValidationError("max_neighbors must be positive");
    if (source_token_budget == 0 || per_ref_token_budget == 0)
      throw ValidationError("token budgets must be positive");
    if (max_selected_sentences == 0)
      throw ValidationError("max_selected_sentences must be positive");
    if (max_summary_length == 0)
      throw ValidationError("max_summary_length must be positive");
  }

  model::ModelConfig model_config(std::size_t vocab_size) const {
    model::ModelConfig m;
    m.vocab_size = vocab_size;
    if (scale == Scale::desk) {
      m.model_dim = 64;
      m.encoder_layers = 2;
      m.decoder_layers = 2;
      m.attention_heads = 4;
      m.feedforward_dim = 256;
      m.encoder_dropout = 0.0;
      m.decoder_dropout = 0.0;
    } else {
      m.model_dim = 512;
      m.encoder_layers = 6;
      m.decoder_layers = 6;
      m.attention_heads = 8;
      m.feedforward_dim = 2048;
      m.encoder_dropout = 0.1;
      m.decoder_dropout = 0.4;
    }
    m.max_positions =
        std::max({source_token_budget, per_ref_token_budget, max_summary_length + 2});
    return m;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace detail

/// Flat `key = value` text over the TrainConfig field names; unknown keys
/// are errors so sweep typos fail loudly. `scale` applies first and rebases
/// the defaults, remaining keys override.
inline TrainConfig parse_config_text(const std::string& text,
                                     const std::string& origin = "<config>") {
  std::vector<std::pair<std::string, std::string>> kvs;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(line_no) +
                       ": expected key = value");
    kvs.emplace_back(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }

  TrainConfig cfg = TrainConfig::desk_defaults();
  for (const auto& [k, v] : kvs) {
    if (k != "scale") continue;
    if (v == "paper")
      cfg = TrainConfig::paper_defaults();
    else if (v == "desk")
      cfg = TrainConfig::desk_defaults();
    else
      throw ValidationError("unknown scale: " + v);
  }

  auto to_f = [](const std::string& v) { return std::stod(v); };
  auto to_u = [](const std::string& v) -> std::uint64_t { return std::stoull(v); };
  for (const auto& [k, v] : kvs) {
    if (k == "scale") continue;
    if (k == "encoder_lr") cfg.encoder_lr = to_f(v);
    else if (k == "decoder_lr") cfg.decoder_lr = to_f(v);
    else if (k == "encoder_warmup_steps") cfg.encoder_warmup_steps = to_u(v);
    else if (k == "decoder_warmup_steps") cfg.decoder_warmup_steps = to_u(v);
    else if (k == "total_steps") cfg.total_steps = to_u(v);
    else if (k == "alpha") cfg.alpha = to_f(v);
    else if (k == "beta") cfg.beta = to_f(v);
    else if (k == "rho") cfg.rho = to_f(v);
    else if (k == "max_neighbors") cfg.max_neighbors = to_u(v);
    else if (k == "source_token_budget") cfg.source_token_budget = to_u(v);
    else if (k == "per_ref_token_budget") cfg.per_ref_token_budget = to_u(v);
    else if (k == "checkpoint_every") cfg.checkpoint_every = to_u(v);
    else if (k == "rng_seed") cfg.rng_seed = to_u(v);
    else if (k == "negative_documents") cfg.negative_documents = to_u(v);
    else if (k == "negative_tokens") cfg.negative_tokens = to_u(v);
    else if (k == "max_selected_sentences") cfg.max_selected_sentences = to_u(v);
    else if (k == "max_summary_length") cfg.max_summary_length = to_u(v);
    else throw ValidationError(origin + ": unknown config key: " + k);
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

inline std::string config_to_text(const TrainConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "scale = " << to_string(c.scale) << "\n"
     << "encoder_lr = " << c.encoder_lr << "\n"
     << "decoder_lr = " << c.decoder_lr << "\n"
     << "encoder_warmup_steps = " << c.encoder_warmup_steps << "\n"
     << "decoder_warmup_steps = " << c.decoder_warmup_steps << "\n"
     << "total_steps = " << c.total_steps << "\n"
     << "alpha = " << c.alpha << "\n"
     << "beta = " << c.beta << "\n"
     << "rho = " << c.rho << "\n"
     << "max_neighbors = " << c.max_neighbors << "\n"
     << "source_token_budget = " << c.source_token_budget << "\n"
     << "per_ref_token_budget = " << c.per_ref_token_budget << "\n"
     << "checkpoint_every = " << c.checkpoint_every << "\n"
     << "rng_seed = " << c.rng_seed << "\n"
     << "negative_documents = " << c.negative_documents << "\n"
     << "negative_tokens = " << c.negative_tokens << "\n"
     << "max_selected_sentences = " << c.max_selected_sentences << "\n"
     << "max_summary_length = " << c.max_summary_length << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Corpus bundle: documents, split, selection cache, vocabulary

struct CorpusBundle {
  std::vector<corpus::Document> documents;
  std::unordered_map<std::string, const corpus::Document*> by_id;
  corpus::CitationGraph full_graph;
  corpus::CorpusSplit split;
  corpus::CitationGraph working_graph;  // split nodes + retained edges
  selection::SelectionCache cache;
  model::Vocabulary vocab;
  std::set<std::string> vocab_tokens;  // without specials

  static CorpusBundle assemble(std::vector<corpus::Document> docs,
                               corpus::CorpusSplit split_in) {
    CorpusBundle b;
    b.documents = std::move(docs);
    for (const auto& d : b.documents) b.by_id[d.id] = &d;
    b.full_graph = corpus::graph_from_documents(b.documents);
    b.split = std::move(split_in);
    b.working_graph = corpus::split_graph(b.split);
    b.vocab = model::Vocabulary::build(b.documents);
    for (std::size_t i = 4; i < b.vocab.id_to_token.size(); ++i)
      b.vocab_tokens.insert(b.vocab.id_to_token[i]);
    return b;
  }

  const corpus::Document& doc(const std::string& id) const {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw KeyError("unknown document: " + id);
    return *it->second;
  }
};

/// Fills the selection cache for every (source, neighbor) pair reachable in
/// the working graph; selection runs against the role-appropriate target.
inline void populate_selection_cache(CorpusBundle& bundle, const TrainConfig& cfg) {
  for (const auto& src_id : bundle.working_graph.nodes()) {
    const auto role = bundle.split.role_of(src_id);
    const auto target = selection::selection_target(bundle.doc(src_id), role);
    for (const auto& nbr_id : bundle.working_graph.neighbors(src_id)) {
      const auto& nbr = bundle.doc(nbr_id);
      std::vector<rouge::Tokens> sentences;
      sentences.reserve(nbr.body_sentences.size());
      for (const auto& s : nbr.body_sentences)
        sentences.push_back(corpus::tokenize(s));
      auto sel =
          selection::greedy_select(sentences, target, cfg.max_selected_sentences);
      sel.source_id = src_id;
      sel.ref_id = nbr_id;
      bundle.cache.put(std::move(sel));
    }
  }
}

// ---------------------------------------------------------------------------
// Training instances

enum class InstanceMode { training, evaluation };

struct InstancePlan {
  std::string source_id;
  std::vector<std::string> source_tokens;  // truncated to the source budget
  std::vector<Index> source_token_ids;
  // Neighbors in descending edge-weight order (citation node order).
  std::vector<std::string> neighbor_ids;
  std::vector<std::vector<Index>> neighbor_token_ids;
  std::vector<double> neighbor_weights;  // source edge after rho pruning
  std::vector<std::string> negative_doc_ids;
  std::vector<std::vector<Index>> negative_doc_token_ids;
  // Per-loss feasibility: DRA needs at least one positive and one zero pair
  // in the citation graph, TRA needs at least one negative token column.
  bool dra_feasible = false;
  bool tra_feasible = false;
  graph::WeightedCitationGraph citation;
  graph::NormalizedLaplacian citation_laplacian;
  graph::BipartiteDocTokenGraph bipartite;
  graph::NormalizedLaplacian bipartite_laplacian;
  // Per bipartite column: source positions for positives, embedding ids for
  // every column (positives included, used by the negative-rep path only).
  std::vector<std::vector<Index>> token_positions;
  std::vector<Index> token_embedding_ids;
  std::vector<Index> target_ids;  // abstract ids + <eos>
};

struct SkipRecord {
  std::string source_id;
  std::string reason;
};

namespace detail {

inline std::vector<std::string> source_sequence_tokens(const corpus::Document& d,
                                                       std::size_t budget) {
  std::vector<std::string> out;
  for (const auto& s : d.body_sentences) {
    for (auto& t : corpus::tokenize(s)) {
      out.push_back(std::move(t));
      if (out.size() >= budget) return out;
    }
  }
  return out;
}

inline std::vector<Index> encode_limited(const model::Vocabulary& v,
                                         const std::vector<std::string>& tokens,
                                         std::size_t budget) {
  std::vector<Index> ids;
  ids.reserve(std::min(tokens.size(), budget));
  for (const auto& t : tokens) {
    if (ids.size() >= budget) break;
    ids.push_back(v.id_of(t));
  }
  return ids;
}

}  // namespace detail

/// Assembles one instance. Training mode builds the contrastive graphs and
/// returns nullopt (with a skip record) on degeneracy; evaluation mode
/// tolerates degeneracy by dropping to a source-only memory and skips the
/// contrastive machinery.
inline std::optional<InstancePlan> build_training_instance(
    const std::string& source_id, const CorpusBundle& bundle, const TrainConfig& cfg,
    std::uint64_t step, InstanceMode mode, SkipRecord* skip = nullptr) {
  const auto& source = bundle.doc(source_id);
  const auto role = bundle.split.role_of(source_id);
  const auto target = selection::selection_target(source, role);
  const bool training = mode == InstanceMode::training;

  std::vector<std::pair<const corpus::Document*, selection::SelectionResult>>
      candidates;
  for (const auto& nbr_id : bundle.working_graph.neighbors(source_id)) {
    const auto* cached = bundle.cache.find(source_id, nbr_id);
    if (!cached)
      throw ValidationError("selection cache misses pair (" + source_id + ", " +
                            nbr_id + "); run select first");
    candidates.emplace_back(&bundle.doc(nbr_id), *cached);
  }
  if (candidates.empty() && training) {
    if (skip) *skip = {source_id, "no citation neighbors in split"};
    return std::nullopt;
  }

  InstancePlan plan;
  plan.source_id = source_id;
  plan.source_tokens = detail::source_sequence_tokens(source, cfg.source_token_budget);
  if (plan.source_tokens.empty()) {
    if (training) {
      if (skip) *skip = {source_id, "document has no body tokens"};
      return std::nullopt;
    }
    throw ValidationError("document has no body tokens: " + source_id);
  }
  plan.source_token_ids = bundle.vocab.encode(plan.source_tokens);

  // References whose selection came up empty carry no usable content: they
  // cannot be encoded and their edge weight is zero by definition.
  std::erase_if(candidates, [](const auto& c) {
    return c.second.sentence_indices.empty();
  });
  if (candidates.empty() && training) {
    if (skip) *skip = {source_id, "every neighbor selection is empty"};
    return std::nullopt;
  }

  std::vector<std::pair<const corpus::Document*, selection::SelectionResult>> kept;
  if (!candidates.empty()) {
    const auto ranked =
        selection::select_neighbors(target, candidates, cfg.max_neighbors);
    for (const auto& rn : ranked)
      for (const auto& c : candidates)
        if (c.first->id == rn.id) kept.push_back(c);
  }

  std::vector<const corpus::Document*> negative_docs;
  if (training && cfg.negative_documents > 0) {
    std::unordered_set<std::string> nbr_set;
    for (const auto& nb : bundle.working_graph.neighbors(source_id))
      nbr_set.insert(nb);
    std::size_t available = 0;
    for (const auto& node : bundle.working_graph.nodes())
      if (node != source_id && !nbr_set.count(node)) ++available;
    const std::size_t want = std::min(cfg.negative_documents, available);
    if (want > 0) {
      plan.negative_doc_ids = graph::sample_negative_documents(
          bundle.working_graph, source_id, want,
          derive_seed(cfg.rng_seed, "instance_neg_docs", step));
      for (const auto& id : plan.negative_doc_ids)
        negative_docs.push_back(&bundle.doc(id));
    }
  }

  bool graph_ok = !kept.empty();
  if (graph_ok) {
    try {
      plan.citation = graph::build_weighted_citation_graph(source, kept, negative_docs,
                                                           target, cfg.rho);
      plan.citation_laplacian = graph::citation_laplacian(plan.citation);
    } catch (const DegenerateGraphError& e) {
      if (training) {
        if (skip) *skip = {source_id, e.what()};
        return std::nullopt;
      }
      graph_ok = false;  // evaluation degrades to a source-only memory
    }
  }

  if (graph_ok) {
    for (std::size_t j = 0; j < kept.size(); ++j) {
      plan.neighbor_ids.push_back(kept[j].first->id);
      plan.neighbor_weights.push_back(plan.citation.weights(0, 1 + static_cast<Index>(j)));
      plan.neighbor_token_ids.push_back(detail::encode_limited(
          bundle.vocab,
          selection::selected_content_tokens(*kept[j].first, kept[j].second),
          cfg.per_ref_token_budget));
    }
    for (const auto* nd : negative_docs)
      plan.negative_doc_token_ids.push_back(detail::encode_limited(
          bundle.vocab, corpus::tokenize(nd->abstract_text), cfg.per_ref_token_budget));
  }

  if (training && graph_ok) {
    const auto n = plan.citation.weights.rows();
    bool any_pos = false, any_zero = false;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        if (i == j) continue;
        if (plan.citation.weights(i, j) > 0.0)
          any_pos = true;
        else
          any_zero = true;
      }
    plan.dra_feasible = any_pos && any_zero;

    std::size_t neg_tokens = 0;
    {
      std::unordered_set<std::string> present(plan.source_tokens.begin(),
                                              plan.source_tokens.end());
      std::size_t available = 0;
      for (const auto& t : bundle.vocab_tokens)
        if (!present.count(t)) ++available;
      neg_tokens = std::min(cfg.negative_tokens, available);
    }
    std::vector<std::string> negatives;
    if (neg_tokens > 0)
      negatives = graph::sample_negative_tokens(
          bundle.vocab_tokens, plan.source_tokens, neg_tokens,
          derive_seed(cfg.rng_seed, "instance_neg_tokens", step));
    plan.bipartite = graph::build_bipartite_graph(plan.source_tokens, negatives);
    plan.bipartite_laplacian = graph::bipartite_laplacian(plan.bipartite);
    plan.tra_feasible = !negatives.empty();

    std::unordered_map<std::string, std::size_t> column_of;
    for (std::size_t c = 0; c < plan.bipartite.token_ids.size(); ++c)
      column_of[plan.bipartite.token_ids[c]] = c;
    plan.token_positions.assign(plan.bipartite.token_ids.size(), {});
    for (std::size_t pos = 0; pos < plan.source_tokens.size(); ++pos)
      plan.token_positions[column_of.at(plan.source_tokens[pos])].push_back(
          static_cast<Index>(pos));
    plan.token_embedding_ids.reserve(plan.bipartite.token_ids.size());
    for (const auto& t : plan.bipartite.token_ids)
      plan.token_embedding_ids.push_back(bundle.vocab.id_of(t));
  }

  auto target_tokens = corpus::tokenize(source.abstract_text);
  if (target_tokens.size() > cfg.max_summary_length)
    target_tokens.resize(cfg.max_summary_length);
  plan.target_ids = bundle.vocab.encode(target_tokens);
  plan.target_ids.push_back(model::Vocabulary::kEos);
  return plan;
}

// ---------------------------------------------------------------------------
// Training

struct LossRecord {
  std::uint64_t step = 0;
  std::string source_id;
  bool skipped = false;
  double nll = 0.0, dra = 0.0, tra = 0.0, total = 0.0;
};

struct CheckpointInfo {
  std::uint64_t step = 0;
  std::string path;
  double val_rouge1 = 0.0;
};

struct TrainResult {
  std::vector<LossRecord> history;
  std::vector<CheckpointInfo> checkpoints;
  std::string best_checkpoint;
  double best_val_rouge1 = 0.0;
  std::size_t skipped_steps = 0;
};

inline void save_checkpoint(const model::Model& m, const TrainConfig& cfg,
                            const CorpusBundle& bundle, std::uint64_t step,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint: " + path);
  m.params().save_values(out, step);
  const auto mc = cfg.model_config(bundle.vocab.size());
  std::ofstream meta(path + ".meta");
  meta << "step = " << step << "\n"
       << "vocab_hash = " << bundle.vocab.content_hash() << "\n"
       << "vocab_size = " << bundle.vocab.size() << "\n"
       << "model_dim = " << mc.model_dim << "\n"
       << "encoder_layers = " << mc.encoder_layers << "\n"
       << "decoder_layers = " << mc.decoder_layers << "\n"
       << "attention_heads = " << mc.attention_heads << "\n"
       << "feedforward_dim = " << mc.feedforward_dim << "\n"
       << "max_positions = " << mc.max_positions << "\n"
       << "encoder_dropout = " << mc.encoder_dropout << "\n"
       << "decoder_dropout = " << mc.decoder_dropout << "\n"
       << config_to_text(cfg);
}

inline std::uint64_t load_checkpoint(model::Model& m, const CorpusBundle& bundle,
                                     const std::string& path) {
  {
    std::ifstream meta(path + ".meta");
    if (meta) {
      std::string line;
      while (std::getline(meta, line)) {
        const auto t = detail::trim(line);
        if (t.rfind("vocab_hash", 0) == 0) {
          const auto eq = t.find('=');
          const auto expect = std::stoull(detail::trim(t.substr(eq + 1)));
          if (expect != bundle.vocab.content_hash())
            throw ValidationError("checkpoint vocabulary does not match corpus");
        }
      }
    }
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  return m.params().load_values(in);
}

struct StepLosses {
  double nll = 0.0, dra = 0.0, tra = 0.0, total = 0.0;
  bool has_dra = false, has_tra = false;
};

/// One optimizer step on one instance. The WithContrastive template mirrors
/// the ablation build: when it is false the contrastive terms do not exist
/// in the compiled step at all.
template <bool WithContrastive = true>
StepLosses train_step(model::Model& m, const InstancePlan& plan,
                      const TrainConfig& cfg, std::uint64_t step) {
  Tape tape;
  model::Binding b = m.bind(tape);
  const bool need_dra = WithContrastive && cfg.alpha != 0.0 && plan.dra_feasible;
  const bool need_tra = WithContrastive && cfg.beta != 0.0 && plan.tra_feasible;
  const auto& mc = m.config();
  const bool any_dropout = mc.encoder_dropout > 0.0 || mc.decoder_dropout > 0.0;
  model::DropoutState dropout(derive_seed(cfg.rng_seed, "dropout", step));
  model::DropoutState* drop = any_dropout ? &dropout : nullptr;

  const std::vector<char> src_mask(plan.source_token_ids.size(), 1);
  model::EncoderOutput src =
      m.encode(b, m.embed_tokens(b, plan.source_token_ids, 0), src_mask, drop);

  // References: memory needs surviving edges, DRA needs every citation node.
  std::vector<std::optional<model::EncoderOutput>> nbr_enc(plan.neighbor_ids.size());
  for (std::size_t j = 0; j < plan.neighbor_ids.size(); ++j) {
    if (!(need_dra || plan.neighbor_weights[j] > 0.0)) continue;
    if (plan.neighbor_token_ids[j].empty()) continue;
    const std::vector<char> mask(plan.neighbor_token_ids[j].size(), 1);
    nbr_enc[j] =
        m.encode(b, m.embed_tokens(b, plan.neighbor_token_ids[j], 1), mask, drop);
  }

  // Representations entering the contrastive losses are L2-normalized: the
  // alignment losses have no lower bound in the raw inner products, and
  // unconstrained pooled vectors let them run away and starve the NLL.
  StepLosses out;
  Var dra_var, tra_var;
  if (need_dra) {
    std::vector<Var> doc_rows;
    doc_rows.push_back(src.doc_rep);
    for (std::size_t j = 0; j < plan.neighbor_ids.size(); ++j) {
      if (!nbr_enc[j])
        throw ValidationError("neighbor with empty selected content in " +
                              plan.source_id);
      doc_rows.push_back(nbr_enc[j]->doc_rep);
    }
    for (const auto& ids : plan.negative_doc_token_ids) {
      const std::vector<char> mask(ids.size(), 1);
      doc_rows.push_back(m.encode(b, m.embed_tokens(b, ids, 1), mask, drop).doc_rep);
    }
    Var doc_reps = ad::row_l2_normalize(ad::vstack(doc_rows));
    dra_var = losses::dra_loss(plan.citation, plan.citation_laplacian, doc_reps);
    out.dra = dra_var.scalar();
    out.has_dra = true;
  }
  if (need_tra) {
    std::vector<Var> token_rows;
    for (std::size_t c = 0; c < plan.bipartite.token_ids.size(); ++c) {
      if (c < plan.bipartite.num_positive) {
        const std::vector<char> all(plan.token_positions[c].size(), 1);
        token_rows.push_back(ad::masked_row_mean(
            ad::gather_rows(src.token_reps, plan.token_positions[c]), all));
      } else {
        token_rows.push_back(
            m.token_embedding_rows(b, {plan.token_embedding_ids[c]}));
      }
    }
    Var token_reps = ad::row_l2_normalize(ad::vstack(token_rows));
    tra_var = losses::tra_loss(plan.bipartite, plan.bipartite_laplacian,
                               ad::row_l2_normalize(src.doc_rep), token_reps);
    out.tra = tra_var.scalar();
    out.has_tra = true;
  }

  std::vector<model::WeightedEncoderOutput> refs;
  for (std::size_t j = 0; j < plan.neighbor_ids.size(); ++j)
    if (plan.neighbor_weights[j] > 0.0 && nbr_enc[j])
      refs.push_back({&*nbr_enc[j], plan.neighbor_weights[j]});
  model::DecoderContext ctx = model::build_decoder_memory(
      src, refs, cfg.per_ref_token_budget, cfg.source_token_budget);

  std::vector<Index> prefix{model::Vocabulary::kBos};
  prefix.insert(prefix.end(), plan.target_ids.begin(), plan.target_ids.end() - 1);
  Var logits = m.decoder_step(b, ctx, m.embed_tokens(b, prefix, 0), drop);
  Var nll = losses::nll_loss(logits, plan.target_ids);
  out.nll = nll.scalar();

  Var total = losses::total_loss(nll, dra_var, tra_var, out.has_dra ? cfg.alpha : 0.0,
                                 out.has_tra ? cfg.beta : 0.0);
  out.total = total.scalar();
  if (!std::isfinite(out.total))
    throw DomainError("non-finite loss at step " + std::to_string(step) +
                      " on instance " + plan.source_id + " (nll=" +
                      std::to_string(out.nll) + ", dra=" + std::to_string(out.dra) +
                      ", tra=" + std::to_string(out.tra) + ")");
  tape.backward(total);

  const std::uint64_t t = step + 1;
  const double lr_enc = optim::schedule_lr(cfg.encoder_lr, cfg.encoder_warmup_steps, t);
  const double lr_dec = optim::schedule_lr(cfg.decoder_lr, cfg.decoder_warmup_steps, t);
  auto& store = m.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    const double lr = p.group == model::ParamGroup::encoder ? lr_enc : lr_dec;
    optim::adam_update(p.value, b[i].grad(), p.adam_m, p.adam_v, t, lr);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct DocEval {
  std::string id;
  double r1 = 0.0, r2 = 0.0, rl = 0.0;
  bool error = false;
  std::string message;
  std::vector<std::string> generated_tokens;
};

struct EvalReport {
  std::string split_name;
  std::string checkpoint;
  std::vector<DocEval> docs;
  double mean_r1 = 0.0, mean_r2 = 0.0, mean_rl = 0.0;
  std::size_t errors = 0;

  void finalize() {
    double s1 = 0, s2 = 0, sl = 0;
    std::size_t n = 0;
    errors = 0;
    for (const auto& d : docs) {
      if (d.error) {
        ++errors;
        continue;
      }
      s1 += d.r1;
      s2 += d.r2;
      sl += d.rl;
      ++n;
    }
    mean_r1 = n ? s1 / static_cast<double>(n) : 0.0;
    mean_r2 = n ? s2 / static_cast<double>(n) : 0.0;
    mean_rl = n ? sl / static_cast<double>(n) : 0.0;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "split: " << split_name << "  checkpoint: " << checkpoint << "\n";
    os << std::left << std::setw(12) << "doc" << std::right << std::setw(10) << "R-1"
       << std::setw(10) << "R-2" << std::setw(10) << "R-L" << "\n";
    for (const auto& d : docs) {
      if (d.error) {
        os << std::left << std::setw(12) << d.id << "  error: " << d.message << "\n";
        continue;
      }
      os << std::left << std::setw(12) << d.id << std::right << std::fixed
         << std::setprecision(4) << std::setw(10) << d.r1 << std::setw(10) << d.r2
         << std::setw(10) << d.rl << "\n";
    }
    os << std::left << std::setw(12) << "mean" << std::right << std::fixed
       << std::setprecision(4) << std::setw(10) << mean_r1 << std::setw(10) << mean_r2
       << std::setw(10) << mean_rl << "\n";
    return os.str();
  }

  std::string to_jsonl() const {
    std::ostringstream os;
    for (const auto& d : docs) {
      nlohmann::json j;
      j["id"] = d.id;
      if (d.error) {
        j["error"] = d.message;
      } else {
        j["rouge1"] = d.r1;
        j["rouge2"] = d.r2;
        j["rougeL"] = d.rl;
        j["generated"] = d.generated_tokens;
      }
      os << j.dump() << "\n";
    }
    nlohmann::json m;
    m["split"] = split_name;
    m["checkpoint"] = checkpoint;
    m["mean_rouge1"] = mean_r1;
    m["mean_rouge2"] = mean_r2;
    m["mean_rougeL"] = mean_rl;
    m["errors"] = errors;
    os << m.dump() << "\n";
    return os.str();
  }
};

/// Scores candidate summaries against gold abstracts (both as token lists);
/// this is the scoring tail of evaluate, exposed for direct use.
inline EvalReport score_token_summaries(
    const std::vector<std::pair<std::string, rouge::Tokens>>& candidates,
    const std::map<std::string, rouge::Tokens>& golds) {
  EvalReport report;
  for (const auto& [id, cand] : candidates) {
    DocEval de;
    de.id = id;
    de.generated_tokens = cand;
    const auto it = golds.find(id);
    if (it == golds.end()) {
      de.error = true;
      de.message = "no gold summary";
    } else {
      de.r1 = rouge::rouge_n(cand, it->second, 1).f1;
      de.r2 = rouge::rouge_n(cand, it->second, 2).f1;
      de.rl = rouge::rouge_l(cand, it->second).f1;
    }
    report.docs.push_back(std::move(de));
  }
  report.finalize();
  return report;
}

/// Generates a summary per document (greedy decoding) and reports
/// ROUGE-1/2/L F1 against the gold abstracts. Per-document failures become
/// error entries; the run continues.
inline EvalReport evaluate(const model::Model& m, const CorpusBundle& bundle,
                           const std::vector<std::string>& ids,
                           const TrainConfig& cfg, const std::string& split_name,
                           const std::string& checkpoint_name) {
  EvalReport report;
  report.split_name = split_name;
  report.checkpoint = checkpoint_name;
  for (const auto& id : ids) {
    DocEval de;
    de.id = id;
    try {
      const auto plan =
          build_training_instance(id, bundle, cfg, 0, InstanceMode::evaluation);
      Tape tape;
      model::Binding b = m.bind(tape);
      const std::vector<char> src_mask(plan->source_token_ids.size(), 1);
      model::EncoderOutput src =
          m.encode(b, m.embed_tokens(b, plan->source_token_ids, 0), src_mask);
      std::vector<model::EncoderOutput> ref_outputs;
      std::vector<double> ref_weights;
      for (std::size_t j = 0; j < plan->neighbor_ids.size(); ++j) {
        if (plan->neighbor_weights[j] <= 0.0 || plan->neighbor_token_ids[j].empty())
          continue;
        const std::vector<char> mask(plan->neighbor_token_ids[j].size(), 1);
        ref_outputs.push_back(
            m.encode(b, m.embed_tokens(b, plan->neighbor_token_ids[j], 1), mask));
        ref_weights.push_back(plan->neighbor_weights[j]);
      }
      std::vector<model::WeightedEncoderOutput> refs;
      for (std::size_t j = 0; j < ref_outputs.size(); ++j)
        refs.push_back({&ref_outputs[j], ref_weights[j]});
      model::DecoderContext ctx = model::build_decoder_memory(
          src, refs, cfg.per_ref_token_budget, cfg.source_token_budget);

      model::GenerateOptions gopt;
      gopt.strategy = model::DecodeStrategy::greedy;
      gopt.max_length = cfg.max_summary_length;
      const auto gen_ids =
          model::generate(m, ctx.memory.value(), ctx.memory_mask, gopt);
      for (Index gid : gen_ids)
        de.generated_tokens.push_back(bundle.vocab.id_to_token[
            static_cast<std::size_t>(gid)]);
      const auto gold = corpus::tokenize(bundle.doc(id).abstract_text);
      de.r1 = rouge::rouge_n(de.generated_tokens, gold, 1).f1;
      de.r2 = rouge::rouge_n(de.generated_tokens, gold, 2).f1;
      de.rl = rouge::rouge_l(de.generated_tokens, gold).f1;
    } catch (const std::exception& e) {
      de.error = true;
      de.message = e.what();
    }
    report.docs.push_back(std::move(de));
  }
  report.finalize();
  return report;
}

// ---------------------------------------------------------------------------
// Training loop

template <bool WithContrastive = true>
TrainResult train(model::Model& m, CorpusBundle& bundle, const TrainConfig& cfg,
                  const std::string& out_dir, std::uint64_t start_step = 0) {
  cfg.validate();
  namespace fs = std::filesystem;
  if (!out_dir.empty()) fs::create_directories(out_dir);
  std::vector<std::string> train_ids(bundle.split.train_ids.begin(),
                                     bundle.split.train_ids.end());
  if (train_ids.empty()) throw ValidationError("train split is empty");
  std::vector<std::string> val_ids(bundle.split.val_ids.begin(),
                                   bundle.split.val_ids.end());

  TrainResult result;
  const std::size_t n_train = train_ids.size();
  std::vector<std::string> epoch_order;
  std::uint64_t epoch_of_order = UINT64_MAX;
  std::size_t epoch_skips = 0;

  for (std::uint64_t step = start_step; step < cfg.total_steps; ++step) {
    const std::uint64_t epoch = step / n_train;
    const std::size_t pos = static_cast<std::size_t>(step % n_train);
    if (epoch != epoch_of_order) {
      epoch_order = train_ids;
      Rng rng(derive_seed(cfg.rng_seed, "epoch_order", epoch));
      rng.shuffle(epoch_order);
      epoch_of_order = epoch;
      epoch_skips = 0;
    }
    const std::string& source_id = epoch_order[pos];

    LossRecord rec;
    rec.step = step;
    rec.source_id = source_id;
    SkipRecord skip;
    const auto plan = build_training_instance(source_id, bundle, cfg, step,
                                              InstanceMode::training, &skip);
    if (!plan) {
      rec.skipped = true;
      ++result.skipped_steps;
      ++epoch_skips;
      result.history.push_back(rec);
      if (pos + 1 == n_train && epoch_skips * 2 > n_train)
        throw DegenerateDataError(
            "more than half of the train split was skipped in one pass (" +
            std::to_string(epoch_skips) + "/" + std::to_string(n_train) + ")");
      continue;
    }
    const StepLosses step_losses = train_step<WithContrastive>(m, *plan, cfg, step);
    rec.nll = step_losses.nll;
    rec.dra = step_losses.dra;
    rec.tra = step_losses.tra;
    rec.total = step_losses.total;
    result.history.push_back(rec);
    if (pos + 1 == n_train && epoch_skips * 2 > n_train)
      throw DegenerateDataError(
          "more than half of the train split was skipped in one pass (" +
          std::to_string(epoch_skips) + "/" + std::to_string(n_train) + ")");

    const std::uint64_t done = step + 1;
    if (done % cfg.checkpoint_every == 0 || done == cfg.total_steps) {
      CheckpointInfo info;
      info.step = done;
      if (!out_dir.empty()) {
        info.path = out_dir + "/ckpt_" + std::to_string(done) + ".bin";
        save_checkpoint(m, cfg, bundle, done, info.path);
      }
      if (!val_ids.empty()) {
        const auto val_report = evaluate(m, bundle, val_ids, cfg, "val",
                                         "step_" + std::to_string(done));
        info.val_rouge1 = val_report.mean_r1;
      }
      result.checkpoints.push_back(info);
    }
  }

  // Best checkpoint by validation ROUGE-1 (ties to the earliest).
  if (!result.checkpoints.empty()) {
    const auto best = std::max_element(
        result.checkpoints.begin(), result.checkpoints.end(),
        [](const auto& a, const auto& b) { return a.val_rouge1 < b.val_rouge1; });
    result.best_checkpoint = best->path;
    result.best_val_rouge1 = best->val_rouge1;
  }

  if (!out_dir.empty()) {
    std::ofstream hist(out_dir + "/loss_history.jsonl");
    for (const auto& r : result.history) {
      nlohmann::json j;
      j["step"] = r.step;
      j["source_id"] = r.source_id;
      if (r.skipped) {
        j["skipped"] = true;
      } else {
        j["nll"] = r.nll;
        j["dra"] = r.dra;
        j["tra"] = r.tra;
        j["total"] = r.total;
      }
      hist << j.dump() << "\n";
    }
    std::ofstream best(out_dir + "/best.txt");
    best << result.best_checkpoint << "\n"
         << "val_rouge1 = " << result.best_val_rouge1 << "\n";
  }
  return result;
}

// ---------------------------------------------------------------------------
// Rho sweep

struct SweepRow {
  double rho = 0.0;
  double r1 = 0.0, r2 = 0.0, rl = 0.0;
};

inline std::string sweep_table_text(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "rho" << std::right << std::setw(10) << "R-1"
     << std::setw(10) << "R-2" << std::setw(10) << "R-L" << "\n";
  for (const auto& r : rows)
    os << std::left << std::setw(8) << std::setprecision(2) << std::fixed << r.rho
       << std::right << std::setprecision(4) << std::setw(10) << r.r1 << std::setw(10)
       << r.r2 << std::setw(10) << r.rl << "\n";
  return os.str();
}

inline std::string sweep_table_jsonl(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  for (const auto& r : rows) {
    nlohmann::json j;
    j["rho"] = r.rho;
    j["rouge1"] = r.r1;
    j["rouge2"] = r.r2;
    j["rougeL"] = r.rl;
    os << j.dump() << "\n";
  }
  return os.str();
}

/// Trains and evaluates once per rho value at desk scale; one table row per
/// value with R-1/R-2/R-L columns.
inline std::vector<SweepRow> sweep_rho(const std::vector<double>& values,
                                       CorpusBundle& bundle, const TrainConfig& base,
                                       const std::string& out_dir) {
  std::vector<SweepRow> rows;
  for (const double v : values) {
    if (v < 0.0 || v > 1.0) throw ValidationError("sweep rho outside [0,1]");
    TrainConfig cfg = base;
    cfg.rho = v;
    model::Model m(cfg.model_config(bundle.vocab.size()), cfg.rng_seed);
    std::ostringstream tag;
    tag << std::fixed << std::setprecision(2) << v;
    const std::string dir =
        out_dir.empty() ? std::string() : out_dir + "/rho_" + tag.str();
    train(m, bundle, cfg, dir);
    std::vector<std::string> eval_ids(bundle.split.test_ids.begin(),
                                      bundle.split.test_ids.end());
    if (eval_ids.empty())
      eval_ids.assign(bundle.split.train_ids.begin(), bundle.split.train_ids.end());
    const auto report = evaluate(m, bundle, eval_ids, cfg, "test", "rho_" + tag.str());
    rows.push_back({v, report.mean_r1, report.mean_r2, report.mean_rl});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Instance graph dumps (debugging / theory verification input)

inline std::string dump_instance_graph(const InstancePlan& plan) {
  nlohmann::json j;
  j["source_id"] = plan.source_id;
  j["node_ids"] = plan.citation.node_ids;
  std::vector<double> w;
  w.reserve(static_cast<std::size_t>(plan.citation.weights.size()));
  for (Index i = 0; i < plan.citation.weights.rows(); ++i)
    for (Index c = 0; c < plan.citation.weights.cols(); ++c)
      w.push_back(plan.citation.weights(i, c));
  j["weights"] = w;
  j["rho"] = plan.citation.rho;
  j["negative_ids"] = plan.negative_doc_ids;
  return j.dump();
}

/// Rebuilds a citation factorization problem from a dumped instance record.
inline losses::FactorizationProblem factorization_problem_from_dump(
    const std::string& json_line, double k) {
  const auto j = nlohmann::json::parse(json_line);
  const auto node_ids = j.at("node_ids").get<std::vector<std::string>>();
  const auto flat = j.at("weights").get<std::vector<double>>();
  const auto n = static_cast<Index>(node_ids.size());
  if (static_cast<std::size_t>(n) * static_cast<std::size_t>(n) != flat.size())
    throw ParseError("instance dump: weight matrix size mismatch");
  losses::FactorizationProblem p;
  p.has_citation = true;
  p.citation_weights = Matrix(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < n; ++c)
      p.citation_weights(i, c) = flat[static_cast<std::size_t>(i * n + c)];
  p.citation_laplacian = graph::normalized_laplacian(p.citation_weights);
  p.neighbor_counts = Eigen::VectorXd::Zero(n);
  for (Index i = 0; i < n; ++i) {
    double deg = 0;
    for (Index c = 0; c < n; ++c)
      if (c != i && p.citation_weights(i, c) > 0.0) deg += 1.0;
    p.neighbor_counts(i) = std::max(1.0, deg);
  }
  p.doc_count = static_cast<double>(n);
  p.negatives_per_positive = k;
  return p;
}

}  // namespace citesum::harness
